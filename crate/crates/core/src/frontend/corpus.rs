//! Bundled fixtures and their expected verdicts.

use serde::Serialize;

pub struct Fixture {
    pub name: &'static str,
    pub text: &'static str,
}

pub const FIXTURES: &[Fixture] = &[
    Fixture { name: "car", text: include_str!("../../corpus/car.fc") },
    Fixture { name: "car_t", text: include_str!("../../corpus/car_t.fc") },
    Fixture { name: "chained", text: include_str!("../../corpus/chained.fc") },
    Fixture { name: "bilinear", text: include_str!("../../corpus/bilinear.fc") },
    Fixture { name: "nonruled", text: include_str!("../../corpus/nonruled.fc") },
    Fixture { name: "m1", text: include_str!("../../corpus/m1.fc") },
];

pub fn fixture(name: &str) -> Option<&'static str> {
    FIXTURES.iter().find(|f| f.name == name).map(|f| f.text)
}

pub struct Case {
    pub fixture: &'static str,
    /// Subcommand followed by its flags; the file argument is inserted.
    pub args: &'static [&'static str],
    pub code: i32,
    pub verdict: &'static str,
}

pub const CASES: &[Case] = &[
    Case { fixture: "car", args: &["check-param", "--system", "car", "--param", "mu3"], code: 0, verdict: "Pass" },
    Case { fixture: "car", args: &["verify-flat", "--system", "car", "--candidate", "c0"], code: 0, verdict: "Pass" },
    Case { fixture: "car", args: &["verify-flat", "--system", "car", "--candidate", "c1"], code: 0, verdict: "Pass" },
    Case { fixture: "car", args: &["verify-flat", "--system", "car", "--candidate", "cm1"], code: 0, verdict: "Pass" },
    Case { fixture: "car", args: &["verify-flat", "--system", "car", "--candidate", "c3_7"], code: 0, verdict: "Pass" },
    Case {
        fixture: "car",
        args: &["reduce", "--system", "car", "--param", "mu3", "--chart", "minus"],
        code: 0,
        verdict: "Pass",
    },
    Case { fixture: "chained", args: &["check-param", "--system", "chained", "--param", "p"], code: 0, verdict: "Pass" },
    Case { fixture: "chained", args: &["reduce", "--system", "chained"], code: 0, verdict: "Pass" },
    Case {
        fixture: "chained",
        args: &["verify-flat", "--system", "chained", "--candidate", "good"],
        code: 0,
        verdict: "Pass",
    },
    Case {
        fixture: "chained",
        args: &["verify-flat", "--system", "chained", "--candidate", "bad"],
        code: 1,
        verdict: "Fail",
    },
    Case { fixture: "bilinear", args: &["check-param", "--system", "bilinear", "--param", "p"], code: 0, verdict: "Pass" },
    Case { fixture: "bilinear", args: &["rouchon", "--system", "bilinear", "--param", "p"], code: 0, verdict: "Pass" },
    Case { fixture: "bilinear", args: &["reduce", "--system", "bilinear", "--param", "p"], code: 0, verdict: "Pass" },
    Case {
        fixture: "nonruled",
        args: &["rouchon", "--system", "nonruled", "--param", "none"],
        code: 1,
        verdict: "NotParametrizableOverReals",
    },
    Case { fixture: "nonruled", args: &["reduce", "--system", "nonruled"], code: 2, verdict: "Unsupported" },
    Case {
        fixture: "car_t",
        args: &["check-param", "--system", "car_t", "--param", "timesub"],
        code: 0,
        verdict: "Pass",
    },
    Case {
        fixture: "car_t",
        args: &["stationarity", "--system", "car_t", "--param", "timesub", "--time", "t"],
        code: 0,
        verdict: "Pass",
    },
    Case {
        fixture: "car_t",
        args: &["stationarity", "--system", "car_t", "--candidate", "timed", "--time", "t"],
        code: 1,
        verdict: "Fail",
    },
    Case { fixture: "m1", args: &["reduce", "--system", "m1"], code: 0, verdict: "Pass" },
];

#[derive(Clone, Debug, Serialize)]
pub struct CaseResult {
    pub fixture: String,
    pub command: String,
    pub expected_code: i32,
    pub expected_verdict: String,
    pub code: i32,
    pub verdict: String,
    pub ok: bool,
}

impl Case {
    pub fn argv(&self) -> Vec<String> {
        let mut v = vec!["flatcheck".to_string(), self.args[0].to_string(), format!("corpus:{}", self.fixture)];
        v.extend(self.args[1..].iter().map(|s| s.to_string()));
        v
    }

    pub fn run(&self) -> CaseResult {
        let (code, verdict) = super::cli::run_captured(&self.argv());
        CaseResult {
            fixture: self.fixture.to_string(),
            command: self.args.join(" "),
            expected_code: self.code,
            expected_verdict: self.verdict.to_string(),
            ok: code == self.code && verdict == self.verdict,
            code,
            verdict,
        }
    }
}

pub fn run_all() -> Vec<CaseResult> {
    CASES.iter().map(Case::run).collect()
}
