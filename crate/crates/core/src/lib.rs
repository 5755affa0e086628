//! Executable machinery for flatness of nonlinear control systems of
//! differential dimension at most two.

pub mod diffiety;
pub mod expr;
pub mod flatverify;
pub mod frontend;
pub mod numeric;
pub mod reduction;
pub mod rouchon;

use serde::Serialize;

/// Outcome shared by every check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
    NotApplicable,
    Unsupported,
}

impl Verdict {
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Pass => 0,
            Verdict::Fail | Verdict::Inconclusive => 1,
            Verdict::NotApplicable | Verdict::Unsupported => 2,
        }
    }
}
