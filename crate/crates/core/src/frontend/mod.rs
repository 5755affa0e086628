//! Model files, the command line driver, JSON reports and the bundled corpus.

pub mod cli;
pub mod corpus;
mod lexer;
mod parser;
mod printer;
pub mod report;

use std::collections::BTreeMap;
use std::fmt;

use crate::diffiety::{Parametrization, SystemDef};
use crate::flatverify::FlatOutputCandidate;

pub use cli::run;
pub use parser::parse_model;
pub use printer::print_model;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax(String),
    UnknownIdentifier(String),
    DuplicateDeclaration(String),
    /// Well-formed text that does not describe a valid object.
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

impl ParseError {
    pub fn syntax(line: usize, col: usize, msg: impl Into<String>) -> Self {
        ParseError {
            line,
            col,
            kind: ParseErrorKind::Syntax(msg.into()),
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: ", self.line, self.col)?;
        match &self.kind {
            ParseErrorKind::Syntax(m) => write!(f, "syntax error: {m}"),
            ParseErrorKind::UnknownIdentifier(n) => write!(f, "unknown identifier {n}"),
            ParseErrorKind::DuplicateDeclaration(n) => write!(f, "duplicate declaration of {n}"),
            ParseErrorKind::Invalid(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for ParseError {}

/// Header line of every block, by name.
#[derive(Clone, Debug, Default)]
pub struct Positions {
    pub systems: BTreeMap<String, usize>,
    pub parametrizations: BTreeMap<String, usize>,
    pub candidates: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, Default)]
pub struct ModelFile {
    pub systems: Vec<SystemDef>,
    pub parametrizations: Vec<Parametrization>,
    pub candidates: Vec<FlatOutputCandidate>,
    pub positions: Positions,
}

/// Structural equality; source positions are ignored.
impl PartialEq for ModelFile {
    fn eq(&self, other: &Self) -> bool {
        self.systems == other.systems && self.parametrizations == other.parametrizations && self.candidates == other.candidates
    }
}

impl ModelFile {
    pub fn system(&self, name: &str) -> Option<&SystemDef> {
        self.systems.iter().find(|s| s.name == name)
    }

    pub fn parametrization(&self, name: &str) -> Option<&Parametrization> {
        self.parametrizations.iter().find(|p| p.name == name)
    }

    pub fn candidate(&self, name: &str) -> Option<&FlatOutputCandidate> {
        self.candidates.iter().find(|c| c.name == name)
    }
}
