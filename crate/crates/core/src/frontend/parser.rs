//! Line-oriented model files: `system`, `parametrization` and `candidate`
//! blocks.

use std::collections::{HashMap, HashSet};

use num_traits::ToPrimitive;

use crate::diffiety::{Chart, Parametrization, SystemDef};
use crate::expr::{Expr, Func, VarKind, Variable};
use crate::flatverify::FlatOutputCandidate;
use crate::reduction::compose_defs;

use super::lexer::{lex_line, Tok, Token};
use super::{ModelFile, ParseError, ParseErrorKind};

/// Maps an identifier and its derivative order to an expression.
type Resolver<'a> = dyn Fn(&str, u32) -> Option<Expr> + 'a;

struct ExprParser<'a> {
    toks: &'a [Token],
    pos: usize,
    line: usize,
    end_col: usize,
    resolve: &'a Resolver<'a>,
}

impl<'a> ExprParser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn here(&self) -> (usize, usize) {
        match self.toks.get(self.pos) {
            Some(t) => (t.line, t.col),
            None => (self.line, self.end_col),
        }
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        let (l, c) = self.here();
        ParseError::syntax(l, c, msg)
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == Some(t) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.term()?;
        loop {
            if self.eat(&Tok::Plus) {
                acc = acc + self.term()?;
            } else if self.eat(&Tok::Minus) {
                acc = acc - self.term()?;
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.unary()?;
        loop {
            if self.eat(&Tok::Star) {
                acc = acc * self.unary()?;
            } else if self.eat(&Tok::Slash) {
                let at = self.here();
                let d = self.unary()?;
                if d.is_zero() {
                    return Err(ParseError::syntax(at.0, at.1, "division by zero"));
                }
                acc = acc / d;
            } else {
                return Ok(acc);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(&Tok::Minus) {
            return Ok(-self.unary()?);
        }
        if self.eat(&Tok::Plus) {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.postfix()?;
        if !self.eat(&Tok::Caret) {
            return Ok(base);
        }
        let at = self.here();
        let exp = self.unary()?;
        let q = exp
            .as_const()
            .cloned()
            .ok_or_else(|| ParseError::syntax(at.0, at.1, "exponent must be a rational constant"))?;
        if base.is_zero() && q <= num_rational::BigRational::from_integer(0.into()) {
            return Err(ParseError::syntax(at.0, at.1, "zero to a non-positive power"));
        }
        Ok(Expr::pow(base, q))
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let Some(tok) = self.toks.get(self.pos).cloned() else {
            return Err(self.err("expected an expression"));
        };
        self.pos += 1;
        match tok.tok {
            Tok::Num(q, _) => Ok(Expr::constant(q)),
            Tok::LParen => {
                let e = self.sum()?;
                if !self.eat(&Tok::RParen) {
                    return Err(ParseError::syntax(tok.line, tok.col, "unclosed parenthesis"));
                }
                Ok(e)
            }
            Tok::Ident(ref name) => {
                let name = name.clone();
                if let Some(f) = Func::from_name(&name) {
                    if self.peek() == Some(&Tok::LParen) {
                        return self.call(f, &tok);
                    }
                }
                if name == "pi" {
                    return Ok(Expr::pi());
                }
                let mut order = 0u32;
                if self.peek() == Some(&Tok::Caret)
                    && self.toks.get(self.pos + 1).map(|t| &t.tok) == Some(&Tok::LParen)
                    && matches!(self.toks.get(self.pos + 2).map(|t| &t.tok), Some(Tok::Num(_, true)))
                    && self.toks.get(self.pos + 3).map(|t| &t.tok) == Some(&Tok::RParen)
                {
                    let Some(Tok::Num(k, _)) = self.toks.get(self.pos + 2).map(|t| &t.tok) else { unreachable!() };
                    order = k
                        .to_integer()
                        .to_u32()
                        .filter(|k| *k <= 64)
                        .ok_or_else(|| ParseError::syntax(tok.line, tok.col, "derivative order out of range"))?;
                    self.pos += 4;
                }
                while self.eat(&Tok::Prime) {
                    order += 1;
                }
                (self.resolve)(&name, order).ok_or(ParseError {
                    line: tok.line,
                    col: tok.col,
                    kind: ParseErrorKind::UnknownIdentifier(name),
                })
            }
            _ => Err(ParseError::syntax(tok.line, tok.col, "expected an expression")),
        }
    }

    fn call(&mut self, f: Func, at: &Token) -> Result<Expr, ParseError> {
        let open = self.toks[self.pos].clone();
        self.pos += 1;
        let mut args = vec![self.sum()?];
        while self.eat(&Tok::Comma) {
            args.push(self.sum()?);
        }
        if !self.eat(&Tok::RParen) {
            return Err(ParseError::syntax(open.line, open.col, "unclosed parenthesis"));
        }
        if args.len() != f.arity() {
            return Err(ParseError::syntax(
                at.line,
                at.col,
                format!("{} takes {} argument(s), got {}", f.name(), f.arity(), args.len()),
            ));
        }
        Ok(Expr::apply(f, args))
    }
}

/// Parse `toks` entirely as one expression.
fn parse_expr(toks: &[Token], line: usize, end_col: usize, resolve: &Resolver<'_>) -> Result<Expr, ParseError> {
    if toks.is_empty() {
        return Err(ParseError::syntax(line, end_col, "expected an expression"));
    }
    let mut p = ExprParser {
        toks,
        pos: 0,
        line,
        end_col,
        resolve,
    };
    let e = p.sum()?;
    if p.pos < toks.len() {
        return Err(p.err("unexpected token after expression"));
    }
    Ok(e)
}

struct Line {
    no: usize,
    toks: Vec<Token>,
    end_col: usize,
}

impl Line {
    fn keyword(&self) -> Option<&str> {
        match self.toks.first().map(|t| &t.tok) {
            Some(Tok::Ident(s)) => Some(s.as_str()),
            _ => None,
        }
    }

    fn at(&self, i: usize) -> (usize, usize) {
        match self.toks.get(i) {
            Some(t) => (t.line, t.col),
            None => (self.no, self.end_col),
        }
    }

    fn err(&self, i: usize, msg: impl Into<String>) -> ParseError {
        let (l, c) = self.at(i);
        ParseError::syntax(l, c, msg)
    }

    fn ident(&self, i: usize) -> Result<&str, ParseError> {
        match self.toks.get(i).map(|t| &t.tok) {
            Some(Tok::Ident(s)) => Ok(s),
            _ => Err(self.err(i, "expected an identifier")),
        }
    }

    fn expr(&self, from: usize, to: usize, resolve: &Resolver<'_>) -> Result<Expr, ParseError> {
        let slice = &self.toks[from.min(self.toks.len())..to.min(self.toks.len())];
        let end = self.toks.get(to).map_or(self.end_col, |t| t.col);
        parse_expr(slice, self.no, end, resolve)
    }

    /// Comma-separated identifiers from `from` to the end of the line.
    fn ident_list(&self, from: usize) -> Result<Vec<(String, usize)>, ParseError> {
        let mut out = Vec::new();
        let mut i = from;
        loop {
            out.push((self.ident(i)?.to_string(), i));
            i += 1;
            if i == self.toks.len() {
                return Ok(out);
            }
            if self.toks[i].tok != Tok::Comma {
                return Err(self.err(i, "expected ','"));
            }
            i += 1;
        }
    }

    fn find(&self, t: &Tok) -> Option<usize> {
        self.toks.iter().position(|x| x.tok == *t)
    }

    fn check_parens(&self) -> Result<(), ParseError> {
        let mut open: Vec<usize> = Vec::new();
        for (i, t) in self.toks.iter().enumerate() {
            match t.tok {
                Tok::LParen => open.push(i),
                Tok::RParen => {
                    if open.pop().is_none() {
                        return Err(self.err(i, "unmatched ')'"));
                    }
                }
                _ => {}
            }
        }
        match open.first() {
            Some(&i) => Err(self.err(i, "unclosed parenthesis")),
            None => Ok(()),
        }
    }
}

struct Block {
    kind: String,
    header: Line,
    body: Vec<Line>,
}

const RESERVED: &[&str] = &[
    "pi", "system", "parametrization", "candidate", "chart", "end", "free", "state", "exo", "eq", "constraint",
    "arbitrary", "exclude", "box", "in", "output", "inverse", "where", "for", "der",
];

fn check_name(line: &Line, i: usize, name: &str) -> Result<(), ParseError> {
    if RESERVED.contains(&name) || Func::from_name(name).is_some() {
        return Err(line.err(i, format!("'{name}' is reserved")));
    }
    Ok(())
}

fn duplicate(line: &Line, i: usize, name: &str) -> ParseError {
    let (l, c) = line.at(i);
    ParseError {
        line: l,
        col: c,
        kind: ParseErrorKind::DuplicateDeclaration(name.to_string()),
    }
}

fn unknown(line: &Line, i: usize, name: &str) -> ParseError {
    let (l, c) = line.at(i);
    ParseError {
        line: l,
        col: c,
        kind: ParseErrorKind::UnknownIdentifier(name.to_string()),
    }
}

fn invalid(line: &Line, msg: impl Into<String>) -> ParseError {
    ParseError {
        line: line.no,
        col: 1,
        kind: ParseErrorKind::Invalid(msg.into()),
    }
}

fn split_blocks(text: &str) -> Result<Vec<Block>, ParseError> {
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let toks = lex_line(raw, i + 1)?;
        if !toks.is_empty() {
            lines.push(Line {
                no: i + 1,
                toks,
                end_col: raw.chars().count() + 1,
            });
        }
    }
    let mut blocks = Vec::new();
    let mut it = lines.into_iter();
    while let Some(header) = it.next() {
        let kind = match header.keyword() {
            Some(k @ ("system" | "parametrization" | "candidate")) => k.to_string(),
            _ => return Err(header.err(0, "expected 'system', 'parametrization' or 'candidate'")),
        };
        let mut body = Vec::new();
        let mut depth = 0usize;
        let mut closed = false;
        for line in it.by_ref() {
            match line.keyword() {
                Some("end") if line.toks.len() == 1 => {
                    if depth == 0 {
                        closed = true;
                        break;
                    }
                    depth -= 1;
                }
                Some("chart") => depth += 1,
                _ => {}
            }
            body.push(line);
        }
        if !closed {
            return Err(ParseError::syntax(header.no, 1, format!("{kind} block is not closed by 'end'")));
        }
        blocks.push(Block { kind, header, body });
    }
    Ok(blocks)
}

pub fn parse_model(text: &str) -> Result<ModelFile, ParseError> {
    let blocks = split_blocks(text)?;
    let mut model = ModelFile::default();
    let mut names: HashSet<(String, String)> = HashSet::new();
    for b in blocks.iter().filter(|b| b.kind == "system") {
        let sys = parse_system(b)?;
        if !names.insert(("system".into(), sys.name.clone())) {
            return Err(duplicate(&b.header, 1, &sys.name));
        }
        model.positions.systems.insert(sys.name.clone(), b.header.no);
        model.systems.push(sys);
    }
    for b in blocks.iter().filter(|b| b.kind != "system") {
        if b.header.toks.len() != 4 || b.header.ident(2)? != "for" {
            return Err(b.header.err(b.header.toks.len().min(2), format!("expected '{} <name> for <system>'", b.kind)));
        }
        let name = b.header.ident(1)?.to_string();
        let sys_name = b.header.ident(3)?;
        let sys = model
            .systems
            .iter()
            .find(|s| s.name == sys_name)
            .ok_or_else(|| unknown(&b.header, 3, sys_name))?;
        if !names.insert((b.kind.clone(), name.clone())) {
            return Err(duplicate(&b.header, 1, &name));
        }
        if b.kind == "parametrization" {
            let p = parse_parametrization(b, &name, sys)?;
            model.positions.parametrizations.insert(name, b.header.no);
            model.parametrizations.push(p);
        } else {
            let c = parse_candidate(b, &name, sys)?;
            model.positions.candidates.insert(name, b.header.no);
            model.candidates.push(c);
        }
    }
    Ok(model)
}

fn system_resolver(sys_kinds: &HashMap<String, VarKind>) -> impl Fn(&str, u32) -> Option<Expr> + '_ {
    move |name, order| {
        let kind = *sys_kinds.get(name)?;
        Some(Expr::var(Variable::new(name, kind, order)))
    }
}

fn parse_system(b: &Block) -> Result<SystemDef, ParseError> {
    let h = &b.header;
    if h.toks.len() != 2 {
        return Err(h.err(h.toks.len().min(2), "expected 'system <name>'"));
    }
    let name = h.ident(1)?.to_string();
    let mut kinds: HashMap<String, VarKind> = HashMap::new();
    let mut free = Vec::new();
    let mut states: Vec<String> = Vec::new();
    let mut exo: Vec<(String, &Line)> = Vec::new();
    let declare = |line: &Line, i: usize, n: &str, k: VarKind, kinds: &mut HashMap<String, VarKind>| {
        check_name(line, i, n)?;
        if kinds.insert(n.to_string(), k).is_some() {
            return Err(duplicate(line, i, n));
        }
        Ok(())
    };
    for line in &b.body {
        line.check_parens()?;
        match line.keyword() {
            Some("free") => {
                for (n, i) in line.ident_list(1)? {
                    declare(line, i, &n, VarKind::Free, &mut kinds)?;
                    free.push(n);
                }
            }
            Some("state") => {
                for (n, i) in line.ident_list(1)? {
                    declare(line, i, &n, VarKind::State, &mut kinds)?;
                    states.push(n);
                }
            }
            Some("exo") => {
                let n = line.ident(1)?.to_string();
                declare(line, 1, &n, VarKind::Exogenous, &mut kinds)?;
                exo.push((n, line));
            }
            Some("eq" | "constraint") => {}
            _ => return Err(line.err(0, "expected 'free', 'state', 'exo', 'eq' or 'constraint'")),
        }
    }
    let resolve = system_resolver(&kinds);
    let exo_kinds: HashMap<String, VarKind> =
        kinds.iter().filter(|(_, k)| **k == VarKind::Exogenous).map(|(n, k)| (n.clone(), *k)).collect();
    let resolve_exo = system_resolver(&exo_kinds);
    let mut exo_defs = Vec::new();
    for (n, line) in &exo {
        // exo <id> { der = <expr> }
        let ok = line.toks.len() >= 6
            && line.toks[2].tok == Tok::LBrace
            && line.ident(3).ok() == Some("der")
            && line.toks[4].tok == Tok::Eq
            && line.toks.last().map(|t| &t.tok) == Some(&Tok::RBrace);
        if !ok {
            return Err(line.err(2, "expected '{ der = <expr> }'"));
        }
        let der = line.expr(5, line.toks.len() - 1, &resolve_exo)?;
        exo_defs.push((n.clone(), der));
    }
    let mut rhs: HashMap<String, Expr> = HashMap::new();
    let mut constraints = Vec::new();
    for line in &b.body {
        match line.keyword() {
            Some("eq") => {
                let n = line.ident(1)?;
                match kinds.get(n) {
                    Some(VarKind::State) => {}
                    Some(_) => return Err(line.err(1, format!("{n} is not a state"))),
                    None => return Err(unknown(line, 1, n)),
                }
                if line.toks.get(2).map(|t| &t.tok) != Some(&Tok::Prime) || line.toks.get(3).map(|t| &t.tok) != Some(&Tok::Eq) {
                    return Err(line.err(2, format!("expected \"{n}' =\"")));
                }
                let e = line.expr(4, line.toks.len(), &resolve)?;
                if rhs.insert(n.to_string(), e).is_some() {
                    return Err(duplicate(line, 1, &format!("{n}'")));
                }
            }
            Some("constraint") => {
                let eq = line.find(&Tok::Eq).ok_or_else(|| line.err(line.toks.len(), "expected '= 0'"))?;
                let zero = line.toks.len() == eq + 2 && matches!(&line.toks[eq + 1].tok, Tok::Num(q, _) if q == &num_rational::BigRational::from_integer(0.into()));
                if !zero {
                    return Err(line.err(eq + 1, "constraints must read '<expr> = 0'"));
                }
                constraints.push(line.expr(1, eq, &resolve)?);
            }
            _ => {}
        }
    }
    let mut state_defs = Vec::new();
    for s in &states {
        let h = rhs.remove(s).ok_or_else(|| invalid(&b.header, format!("state {s} has no equation")))?;
        state_defs.push((s.clone(), h));
    }
    SystemDef::new(name, free, state_defs, exo_defs, constraints).map_err(|e| invalid(&b.header, e.to_string()))
}

fn parse_parametrization(b: &Block, name: &str, sys: &SystemDef) -> Result<Parametrization, ParseError> {
    let mut arbitrary: Option<Vec<String>> = None;
    let mut charts = Vec::new();
    let mut i = 0;
    while i < b.body.len() {
        let line = &b.body[i];
        line.check_parens()?;
        match line.keyword() {
            Some("arbitrary") => {
                if arbitrary.is_some() {
                    return Err(duplicate(line, 0, "arbitrary"));
                }
                let mut zs = Vec::new();
                for (z, k) in line.ident_list(1)? {
                    check_name(line, k, &z)?;
                    if sys.kind_of(&z).is_some() || zs.contains(&z) {
                        return Err(duplicate(line, k, &z));
                    }
                    zs.push(z);
                }
                arbitrary = Some(zs);
                i += 1;
            }
            Some("chart") => {
                let zs = arbitrary
                    .as_ref()
                    .ok_or_else(|| line.err(0, "'arbitrary' must precede the charts"))?;
                let cname = line.ident(1)?.to_string();
                if line.toks.len() != 2 {
                    return Err(line.err(2, "expected 'chart <name>'"));
                }
                if charts.iter().any(|c: &Chart| c.name == cname) {
                    return Err(duplicate(line, 1, &cname));
                }
                let mut j = i + 1;
                let mut body = Vec::new();
                while j < b.body.len() && !(b.body[j].keyword() == Some("end") && b.body[j].toks.len() == 1) {
                    body.push(&b.body[j]);
                    j += 1;
                }
                charts.push(parse_chart(&cname, line, &body, zs, sys)?);
                i = j + 1;
            }
            _ => return Err(line.err(0, "expected 'arbitrary' or 'chart'")),
        }
    }
    let zs = arbitrary.ok_or_else(|| invalid(&b.header, format!("{name} declares no arbitrary functions")))?;
    Parametrization::new(name, sys, zs, charts).map_err(|e| invalid(&b.header, e.to_string()))
}

fn parse_chart(name: &str, header: &Line, body: &[&Line], zs: &[String], sys: &SystemDef) -> Result<Chart, ParseError> {
    let mut mapped: Vec<String> = Vec::new();
    let mut maps = Vec::new();
    let mut excludes = Vec::new();
    let mut boxes = Vec::new();
    let z_only = |n: &str, k: u32| -> Option<Expr> {
        if zs.iter().any(|z| z == n) {
            Some(Expr::var(Variable::new(n, VarKind::Arbitrary, k)))
        } else if sys.kind_of(n) == Some(VarKind::Exogenous) {
            Some(Expr::var(Variable::new(n, VarKind::Exogenous, k)))
        } else {
            None
        }
    };
    for line in body {
        line.check_parens()?;
        let resolve = |n: &str, k: u32| -> Option<Expr> {
            z_only(n, k).or_else(|| {
                mapped
                    .iter()
                    .any(|m| m == n)
                    .then(|| Expr::var(Variable::new(n, sys.kind_of(n).expect("mapped"), k)))
            })
        };
        match line.keyword() {
            Some("exclude") => excludes.push(line.expr(1, line.toks.len(), &resolve).map_err(|e| explain(e, sys))?),
            Some("box") => boxes.push(parse_box(line, &z_only)?),
            Some(x) if line.toks.get(1).map(|t| &t.tok) == Some(&Tok::Eq) => {
                if !sys.is_system_var(x) {
                    return Err(unknown(line, 0, x));
                }
                if mapped.iter().any(|m| m == x) {
                    return Err(duplicate(line, 0, x));
                }
                let e = line.expr(2, line.toks.len(), &resolve).map_err(|e| explain(e, sys))?;
                maps.push((x.to_string(), e));
                mapped.push(x.to_string());
            }
            _ => return Err(line.err(0, "expected '<var> = <expr>', 'exclude' or 'box'")),
        }
    }
    Chart::new(name, maps, excludes, boxes, &sys.trivial_context()).map_err(|e| invalid(header, e.to_string()))
}

/// System variables referenced before their chart entry get a clearer message.
fn explain(e: ParseError, sys: &SystemDef) -> ParseError {
    match &e.kind {
        ParseErrorKind::UnknownIdentifier(n) if sys.is_system_var(n) => ParseError {
            kind: ParseErrorKind::Invalid(format!("{n} is used before its chart entry")),
            ..e
        },
        _ => e,
    }
}

fn parse_box(line: &Line, z_only: &dyn Fn(&str, u32) -> Option<Expr>) -> Result<(Variable, (f64, f64)), ParseError> {
    let kw_in = line
        .toks
        .iter()
        .position(|t| t.tok == Tok::Ident("in".into()))
        .ok_or_else(|| line.err(line.toks.len(), "expected 'in'"))?;
    let v = line.expr(1, kw_in, z_only)?;
    let var = v.as_var().cloned().ok_or_else(|| line.err(1, "box needs a single jet variable"))?;
    let n = line.toks.len();
    if line.toks.get(kw_in + 1).map(|t| &t.tok) != Some(&Tok::LBracket) || line.toks[n - 1].tok != Tok::RBracket {
        return Err(line.err(kw_in + 1, "expected '[a, b]'"));
    }
    let comma = (kw_in + 2..n).find(|i| line.toks[*i].tok == Tok::Comma).ok_or_else(|| line.err(kw_in + 2, "expected ','"))?;
    let none = |_: &str, _: u32| None;
    let bound = |from, to| -> Result<f64, ParseError> {
        let e = line.expr(from, to, &none)?;
        e.as_const()
            .and_then(|q| q.to_f64())
            .ok_or_else(|| line.err(from, "box bounds must be numbers"))
    };
    let lo = bound(kw_in + 2, comma)?;
    let hi = bound(comma + 1, n - 1)?;
    if !(lo <= hi) {
        return Err(line.err(kw_in + 2, "empty box"));
    }
    Ok((var, (lo, hi)))
}

fn parse_candidate(b: &Block, name: &str, sys: &SystemDef) -> Result<FlatOutputCandidate, ParseError> {
    let m = sys.m();
    let b_names: Vec<String> = (1..=m).map(|k| format!("b{k}")).collect();
    for bn in &b_names {
        if sys.kind_of(bn).is_some() {
            return Err(duplicate(&b.header, 3, bn));
        }
    }
    let kinds: HashMap<String, VarKind> = sys
        .var_names()
        .into_iter()
        .chain(sys.exo().iter().map(|(n, _)| n.clone()))
        .map(|n| {
            let k = sys.kind_of(&n).expect("declared");
            (n, k)
        })
        .collect();
    let resolve_sys = system_resolver(&kinds);
    let mut outputs = Vec::new();
    let mut raw_inverse: Vec<(String, Expr)> = Vec::new();
    let mut raw_conditions = Vec::new();
    for line in &b.body {
        line.check_parens()?;
        let inverted: Vec<String> = raw_inverse.iter().map(|(n, _)| n.clone()).collect();
        let resolve_b = |n: &str, k: u32| -> Option<Expr> {
            if b_names.iter().any(|b| b == n) {
                Some(Expr::var(Variable::new(n, VarKind::Arbitrary, k)))
            } else if sys.kind_of(n) == Some(VarKind::Exogenous) || inverted.iter().any(|x| x == n) {
                resolve_sys(n, k)
            } else {
                None
            }
        };
        match line.keyword() {
            Some("output") => outputs.push(line.expr(1, line.toks.len(), &resolve_sys)?),
            Some("inverse") => {
                let x = line.ident(1)?;
                if !sys.is_system_var(x) {
                    return Err(unknown(line, 1, x));
                }
                if inverted.iter().any(|n| n == x) {
                    return Err(duplicate(line, 1, x));
                }
                if line.toks.get(2).map(|t| &t.tok) != Some(&Tok::Eq) {
                    return Err(line.err(2, "expected '='"));
                }
                raw_inverse.push((x.to_string(), line.expr(3, line.toks.len(), &resolve_b)?));
            }
            Some("where") => {
                let ne = line.find(&Tok::NotEq).ok_or_else(|| line.err(line.toks.len(), "expected '!= 0'"))?;
                let zero = line.toks.len() == ne + 2
                    && matches!(&line.toks[ne + 1].tok, Tok::Num(q, _) if q == &num_rational::BigRational::from_integer(0.into()));
                if !zero {
                    return Err(line.err(ne + 1, "conditions must read '<expr> != 0'"));
                }
                raw_conditions.push(line.expr(1, ne, &resolve_b)?);
            }
            _ => return Err(line.err(0, "expected 'output', 'inverse' or 'where'")),
        }
    }
    // entries may use variables inverted on earlier lines
    let trivial = sys.trivial_context();
    let mut defs: HashMap<String, Expr> = HashMap::new();
    let mut inverse = Vec::new();
    for (x, e) in raw_inverse {
        let r = compose_defs(&e, &defs, &trivial).map_err(|e| invalid(&b.header, e.to_string()))?;
        defs.insert(x.clone(), r.clone());
        inverse.push((x, r));
    }
    let conditions = raw_conditions
        .iter()
        .map(|c| compose_defs(c, &defs, &trivial))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| invalid(&b.header, e.to_string()))?;
    let cand = FlatOutputCandidate {
        name: name.to_string(),
        system: sys.name.clone(),
        outputs,
        b_names,
        inverse,
        conditions,
    };
    cand.validate(sys).map_err(|e| invalid(&b.header, e.to_string()))?;
    Ok(cand)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHAINED: &str = "system chained\n  free x1, x2\n  state x3\n  eq x3' = x2*x1'\nend\n";

    #[test]
    fn chained_system() {
        let m = parse_model(CHAINED).unwrap();
        let s = &m.systems[0];
        assert_eq!(s.m(), 2);
        assert_eq!(s.rhs("x3").unwrap().to_string(), "x1'*x2");
    }

    #[test]
    fn unclosed_parenthesis_position() {
        let text = "system s\n  free x, y\n  exo u { der = 0 }\n  state th\n  eq th' = u cos(th\nend\n";
        let e = parse_model(text).unwrap_err();
        assert_eq!((e.line, e.col), (5, 17));
        assert!(e.to_string().contains("unclosed"));
    }

    #[test]
    fn undeclared_identifier() {
        let text = "system s\n  free x1\n  state x2\n  eq x2' = x1'\n  eq w' = x1'\nend\n";
        let e = parse_model(text).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownIdentifier("w".into()));
    }

    #[test]
    fn duplicate_state() {
        let text = "system s\n  free x1\n  state x2, x2\n  eq x2' = x1'\nend\n";
        let e = parse_model(text).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::DuplicateDeclaration("x2".into()));
        assert_eq!((e.line, e.col), (3, 13));
    }

    #[test]
    fn derivative_versus_power() {
        let toks = lex_line("x1^(2) + x1'^2 + x1^2 + x1^(4)'", 1).unwrap();
        let resolve = |n: &str, k: u32| (n == "x1").then(|| Expr::var(Variable::new(n, VarKind::Free, k)));
        let h = parse_expr(&toks, 1, 40, &resolve).unwrap();
        let x1 = Variable::free("x1");
        let expect = Expr::var(x1.shifted(2))
            + Expr::powi(Expr::var(x1.shifted(1)), 2)
            + Expr::powi(Expr::var(x1.clone()), 2)
            + Expr::var(x1.shifted(5));
        assert_eq!(h, expect);
    }

    #[test]
    fn chart_entries_resolve_earlier_maps() {
        let text = format!(
            "{CHAINED}parametrization p for chained\n  arbitrary z1, z2\n  chart main\n    x2 = z1\n    x1 = -z2'/x2'\n    x3 = z2 + x2*x1\n    exclude z1'\n  end\nend\n"
        );
        let m = parse_model(&text).unwrap();
        let c = &m.parametrizations[0].charts()[0];
        let z = |n: &str, k| Expr::var(Variable::new(n, VarKind::Arbitrary, k));
        assert_eq!(c.map("x1").unwrap(), &(-z("z2", 1) / z("z1", 1)));
    }

    #[test]
    fn chart_forward_reference() {
        let text = format!("{CHAINED}parametrization p for chained\n  arbitrary z1, z2\n  chart main\n    x1 = x2\n  end\nend\n");
        let e = parse_model(&text).unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::Invalid(_)), "{e}");
    }

    #[test]
    fn candidate_blocks() {
        let text = format!(
            "{CHAINED}candidate c for chained\n  output x2\n  output x3 - x2*x1\n  inverse x2 = b1\n  inverse x1 = -b2'/x2'\n  inverse x3 = b2 + x2*x1\n  where b1' != 0\nend\n"
        );
        let m = parse_model(&text).unwrap();
        let c = &m.candidates[0];
        assert_eq!(c.inverse.len(), 3);
        assert_eq!(c.conditions.len(), 1);
        assert!(c.inverse[2].1.variables().iter().all(|v| v.name().starts_with('b')));
    }

    #[test]
    fn missing_system() {
        let e = parse_model("candidate c for nowhere\nend\n").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownIdentifier("nowhere".into()));
    }

    #[test]
    fn unterminated_block() {
        assert!(parse_model(CHAINED.trim_end_matches("end\n")).is_err());
    }
}
