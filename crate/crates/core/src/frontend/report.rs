use std::io;

use serde::Serialize;
use serde_json::ser::Formatter;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const SCHEMA: u32 = 1;

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema: u32,
    pub command: String,
    /// SHA-256 over the input files, hex.
    pub inputs_digest: String,
    pub seed: u64,
    pub jet_order: u32,
    pub trials: usize,
    pub tol: f64,
    pub verdict: String,
    pub exit_code: i32,
    pub residuals: Value,
    pub trace: Option<Value>,
    pub timing_ms: f64,
}

impl Report {
    /// One-line JSON, floats with 17 significant digits.
    pub fn to_json(&self) -> String {
        let mut buf = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut buf, Exact);
        self.serialize(&mut ser).expect("report serializes");
        let mut s = String::from_utf8(buf).expect("utf-8 json");
        s.push('\n');
        s
    }
}

pub fn digest<'a>(inputs: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut h = Sha256::new();
    for i in inputs {
        h.update((i.len() as u64).to_le_bytes());
        h.update(i);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

struct Exact;

impl Formatter for Exact {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}
