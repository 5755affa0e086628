//! `flatcheck` subcommands.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::diffiety::{check_morphism, CheckOptions, Parametrization, SystemDef};
use crate::expr::Sampler;
use crate::flatverify::{check_flat_outputs, check_stationarity, FlatOptions, FlatOutputCandidate};
use crate::reduction::{compute_flat_outputs, ReductionError, ReductionOptions, TraceStatus};
use crate::rouchon::{
    classify_generic, linearity_test, rouchon_checks, ruled_rewrite, system_ghost_forms, ChecksOptions, Classification,
    Linearity, RouchonError,
};
use crate::Verdict;

use super::corpus;
use super::report::{digest, Report, SCHEMA};
use super::{parse_model, ModelFile, ParseError};

pub const EXIT_USAGE: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "flatcheck", version, about = "Flatness checks for control systems of differential dimension at most two")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Model file; `corpus:<name>` selects a bundled fixture.
    file: String,
    #[arg(long)]
    system: Option<String>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "jet-order", default_value_t = 8)]
    jet_order: u32,
    /// Write the JSON report here (`-` for standard output).
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Residuals of the system equations pulled back through a parametrization.
    CheckParam {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        param: String,
        #[arg(long)]
        chart: Option<String>,
    },
    /// Ghost-form certificate (`--param none`) or the parametrization-side checks.
    Rouchon {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        param: String,
        #[arg(long)]
        chart: Option<String>,
        #[arg(long)]
        z1: Option<String>,
    },
    /// Reduce to flat outputs and verify them.
    Reduce {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        param: Option<String>,
        #[arg(long)]
        chart: Option<String>,
        #[arg(long)]
        z1: Option<String>,
    },
    /// Check a flat-output candidate.
    VerifyFlat {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        candidate: String,
    },
    /// Whether flat outputs are free of an exogenous time.
    Stationarity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        candidate: Option<String>,
        #[arg(long)]
        param: Option<String>,
        #[arg(long)]
        chart: Option<String>,
        #[arg(long)]
        z1: Option<String>,
        #[arg(long, default_value = "t")]
        time: String,
    },
    /// Bundled fixtures.
    Corpus {
        #[command(subcommand)]
        action: CorpusAction,
    },
}

#[derive(Subcommand, Debug)]
enum CorpusAction {
    /// Run every fixture and compare with the expected verdicts.
    Run {
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Parse(String, ParseError),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Parse(file, e) => write!(f, "{file}:{e}"),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Verdict label, exit code and payload of one command.
struct Outcome {
    verdict: String,
    code: i32,
    residuals: Value,
    trace: Option<Value>,
    summary: Vec<String>,
}

impl Outcome {
    fn of(v: Verdict) -> Self {
        Outcome {
            verdict: format!("{v:?}"),
            code: v.exit_code(),
            residuals: Value::Null,
            trace: None,
            summary: Vec::new(),
        }
    }
}

/// Run the command line; returns the process exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            EXIT_USAGE
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<i32, CliError> {
    if let Command::Corpus { action: CorpusAction::Run { json } } = &cmd {
        return run_corpus(json.as_ref(), out);
    }
    let start = Instant::now();
    let (name, mut common) = match &cmd {
        Command::CheckParam { common, .. } => ("check-param", common.clone()),
        Command::Rouchon { common, .. } => ("rouchon", common.clone()),
        Command::Reduce { common, .. } => ("reduce", common.clone()),
        Command::VerifyFlat { common, .. } => ("verify-flat", common.clone()),
        Command::Stationarity { common, .. } => ("stationarity", common.clone()),
        Command::Corpus { .. } => unreachable!(),
    };
    if let Ok(s) = std::env::var("FLATCHECK_SEED") {
        common.seed = s.trim().parse().map_err(|_| usage(format!("FLATCHECK_SEED is not an integer: {s:?}")))?;
    }
    if common.trials == 0 {
        return Err(usage("--trials must be positive"));
    }
    if !(common.tol > 0.0 && common.tol.is_finite()) {
        return Err(usage("--tol must be a positive number"));
    }
    let text = load(&common.file)?;
    let model = parse_model(&text).map_err(|e| CliError::Parse(common.file.clone(), e))?;
    let sys = pick_system(&model, common.system.as_deref())?;
    let outcome = match &cmd {
        Command::CheckParam { param, chart, .. } => {
            let p = pick_param(&model, sys, param, chart.as_deref())?;
            cmd_check_param(sys, &p, &common)
        }
        Command::Rouchon { param, chart, z1, .. } => {
            if param == "none" {
                cmd_rouchon_none(sys, &common)
            } else {
                let p = pick_param(&model, sys, param, chart.as_deref())?;
                let z1 = pick_z1(&p, z1.as_deref())?;
                cmd_rouchon(sys, &p, &z1, &common)
            }
        }
        Command::Reduce { param, chart, z1, .. } => {
            let p = match param {
                Some(p) => Some(pick_param(&model, sys, p, chart.as_deref())?),
                None => None,
            };
            let z1 = p.as_ref().map(|p| pick_z1(p, z1.as_deref())).transpose()?;
            cmd_reduce(sys, p.as_ref(), z1.as_deref(), &common).0
        }
        Command::VerifyFlat { candidate, .. } => {
            let c = pick_candidate(&model, sys, candidate)?;
            cmd_verify(sys, c, &common)
        }
        Command::Stationarity { candidate, param, chart, z1, time, .. } => {
            if sys.kind_of(time) != Some(crate::expr::VarKind::Exogenous) {
                return Err(usage(format!("{time} is not an exogenous variable of {}", sys.name)));
            }
            match (candidate, param) {
                (Some(c), _) => cmd_stationarity(sys, pick_candidate(&model, sys, c)?, time),
                (None, Some(p)) => {
                    let p = pick_param(&model, sys, p, chart.as_deref())?;
                    let z1 = pick_z1(&p, z1.as_deref())?;
                    let (red, cand) = cmd_reduce(sys, Some(&p), Some(&z1), &common);
                    match cand {
                        Some(c) if red.code == 0 => {
                            let mut o = cmd_stationarity(sys, &c, time);
                            o.trace = red.trace;
                            o.summary.splice(0..0, red.summary);
                            o
                        }
                        _ => red,
                    }
                }
                (None, None) => return Err(usage("stationarity needs --candidate or --param")),
            }
        }
        Command::Corpus { .. } => unreachable!(),
    };
    for line in &outcome.summary {
        let _ = writeln!(out, "{line}");
    }
    let _ = writeln!(out, "verdict: {}", outcome.verdict);
    if let Some(path) = &common.json {
        let report = Report {
            schema: SCHEMA,
            command: name.to_string(),
            inputs_digest: digest([text.as_bytes()]),
            seed: common.seed,
            jet_order: common.jet_order,
            trials: common.trials,
            tol: common.tol,
            verdict: outcome.verdict.clone(),
            exit_code: outcome.code,
            residuals: outcome.residuals,
            trace: outcome.trace,
            timing_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        write_json(path, &report.to_json(), out)?;
    }
    Ok(outcome.code)
}

fn write_json(path: &PathBuf, json: &str, out: &mut dyn Write) -> Result<(), CliError> {
    if path.as_os_str() == "-" {
        let _ = out.write_all(json.as_bytes());
        Ok(())
    } else {
        std::fs::write(path, json).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
    }
}

fn load(file: &str) -> Result<String, CliError> {
    if let Some(name) = file.strip_prefix("corpus:") {
        return corpus::fixture(name)
            .map(str::to_string)
            .ok_or_else(|| usage(format!("no bundled fixture named {name}")));
    }
    std::fs::read_to_string(file).map_err(|e| usage(format!("cannot read {file}: {e}")))
}

fn pick_system<'a>(m: &'a ModelFile, name: Option<&str>) -> Result<&'a SystemDef, CliError> {
    match name {
        Some(n) => m.system(n).ok_or_else(|| usage(format!("no system named {n}"))),
        None if m.systems.len() == 1 => Ok(&m.systems[0]),
        None => Err(usage("--system is required when the file has several systems")),
    }
}

fn pick_param(m: &ModelFile, sys: &SystemDef, name: &str, chart: Option<&str>) -> Result<Parametrization, CliError> {
    let p = m.parametrization(name).ok_or_else(|| usage(format!("no parametrization named {name}")))?;
    if p.system != sys.name {
        return Err(usage(format!("{name} parametrizes {}, not {}", p.system, sys.name)));
    }
    match chart {
        None => Ok(p.clone()),
        Some(c) => {
            let ch = p.chart(c).ok_or_else(|| usage(format!("{name} has no chart {c}")))?;
            Parametrization::new(p.name.clone(), sys, p.arbitrary().to_vec(), vec![ch.clone()])
                .map_err(|e| usage(e.to_string()))
        }
    }
}

fn pick_z1(p: &Parametrization, z1: Option<&str>) -> Result<String, CliError> {
    match z1 {
        Some(z) if p.arbitrary().iter().any(|a| a == z) => Ok(z.to_string()),
        Some(z) => Err(usage(format!("{z} is not an arbitrary function of {}", p.name))),
        None => Ok(p.arbitrary()[0].clone()),
    }
}

fn pick_candidate<'a>(m: &'a ModelFile, sys: &SystemDef, name: &str) -> Result<&'a FlatOutputCandidate, CliError> {
    let c = m.candidate(name).ok_or_else(|| usage(format!("no candidate named {name}")))?;
    if c.system != sys.name {
        return Err(usage(format!("{name} is a candidate for {}, not {}", c.system, sys.name)));
    }
    Ok(c)
}

fn failure(v: Verdict, msg: String) -> Outcome {
    let mut o = Outcome::of(v);
    o.summary.push(format!("error: {msg}"));
    o.residuals = json!({ "error": msg });
    o
}

fn cmd_check_param(sys: &SystemDef, p: &Parametrization, c: &Common) -> Outcome {
    let opts = CheckOptions {
        trials: c.trials,
        tol: c.tol,
        jet_order: c.jet_order,
        seed: c.seed,
    };
    let rep = match check_morphism(sys, p, &opts) {
        Ok(r) => r,
        Err(e) => return failure(Verdict::Inconclusive, e.to_string()),
    };
    let mut o = Outcome::of(if rep.pass { Verdict::Pass } else { Verdict::Fail });
    let mut charts = Vec::new();
    let mut max = 0.0f64;
    for ch in &rep.charts {
        max = max.max(ch.max_residual);
        o.summary.push(format!(
            "chart {}: max residual {:.3e} over {} jets",
            ch.chart, ch.max_residual, ch.samples
        ));
        charts.push(json!({
            "chart": ch.chart,
            "max_residual": ch.max_residual,
            "samples": ch.samples,
            "min_rank": ch.min_rank,
            "residuals": ch.residuals.iter().map(|(n, r)| json!({ "relation": n, "max": r })).collect::<Vec<_>>(),
        }));
    }
    o.residuals = json!({ "max_residual": max, "charts": charts });
    o
}

fn cmd_rouchon_none(sys: &SystemDef, c: &Common) -> Outcome {
    let classified = system_ghost_forms(sys).and_then(|(_, hs)| Ok((classify_generic(&hs, &Sampler::default(), c.seed)?, hs)));
    let (gc, hs) = match classified {
        Ok(x) => x,
        Err(e @ (RouchonError::NonPolynomialTarget(_) | RouchonError::NotHomogeneous(_) | RouchonError::ScopeExceeded(_))) => {
            return failure(Verdict::Unsupported, e.to_string())
        }
        Err(e) => return failure(Verdict::Inconclusive, e.to_string()),
    };
    let (verdict, code) = match gc.classification {
        Classification::EmptyOverReals { .. } => ("NotParametrizableOverReals", 1),
        _ => ("NotRefuted", 0),
    };
    let rays: Vec<Vec<String>> = match &gc.classification {
        Classification::Dim0 { rays } => rays.iter().map(|r| r.iter().map(|e| e.to_string()).collect()).collect(),
        _ => Vec::new(),
    };
    let forms: Vec<String> = hs.forms.iter().map(|f| f.to_string()).collect();
    let mut summary: Vec<String> = forms.iter().map(|f| format!("form: {f}")).collect();
    summary.push(format!("projective solution set: {:?}", gc.classification.kind()));
    Outcome {
        verdict: verdict.into(),
        code,
        residuals: json!({
            "classification": gc.classification.kind(),
            "agreed": gc.agreed,
            "base_points": gc.base_points,
            "forms": forms,
            "degrees": hs.degrees,
            "rays": rays,
        }),
        trace: None,
        summary,
    }
}

fn cmd_rouchon(sys: &SystemDef, p: &Parametrization, z1: &str, c: &Common) -> Outcome {
    let ruled = if sys.m() == 2 && matches!(linearity_test(sys), Linearity::Nonlinear { .. }) {
        match ruled_rewrite(sys, None, c.seed) {
            Ok(r) => Some(r),
            Err(e @ RouchonError::NotRuled(_)) => {
                let mut o = failure(Verdict::Fail, e.to_string());
                o.summary.push("a parametrizable system of this shape is ruled".into());
                return o;
            }
            Err(e) => return failure(Verdict::Unsupported, e.to_string()),
        }
    } else {
        None
    };
    let opts = ChecksOptions {
        trials: c.trials,
        tol: c.tol,
        jet_order: c.jet_order,
        seed: c.seed,
    };
    let rep = match rouchon_checks(sys, p, None, ruled.as_ref(), z1, &opts) {
        Ok(r) => r,
        Err(e) => return failure(Verdict::Inconclusive, e.to_string()),
    };
    let mut o = Outcome::of(rep.verdict);
    for ch in &rep.charts {
        let r = ch.r.map_or("-inf".to_string(), |r| r.to_string());
        o.summary.push(format!("chart {}: r = {r}, {:?}", ch.chart, ch.verdict));
        for k in &ch.checks {
            o.summary.push(format!("  {}: {:.3e} {}", k.name, k.max_residual, if k.pass { "ok" } else { "FAILED" }));
        }
    }
    let ruled_json = ruled.as_ref().map(|r| {
        json!({
            "v1": r.v1.to_string(),
            "v2": r.v2.to_string(),
            "f": r.f.iter().map(|e| e.to_string()).collect::<Vec<_>>(),
            "g": r.g.iter().map(|e| e.to_string()).collect::<Vec<_>>(),
        })
    });
    o.residuals = json!({ "report": rep, "ruled": ruled_json });
    o
}

fn cmd_reduce(
    sys: &SystemDef,
    p: Option<&Parametrization>,
    z1: Option<&str>,
    c: &Common,
) -> (Outcome, Option<FlatOutputCandidate>) {
    let morphism = CheckOptions {
        trials: c.trials,
        tol: c.tol,
        jet_order: c.jet_order,
        seed: c.seed,
    };
    let opts = ReductionOptions {
        check_param: true,
        morphism,
        checks: ChecksOptions {
            trials: c.trials.min(50),
            tol: c.tol,
            jet_order: c.jet_order,
            seed: c.seed,
        },
        ray: None,
        seed: c.seed,
    };
    let chart = p.map(|p| (p, p.charts()[0].name.as_str()));
    let outcome = match compute_flat_outputs(sys, chart, z1, &opts) {
        Ok(o) => o,
        Err(
            e @ (ReductionError::UnsupportedClass(_)
            | ReductionError::Autonomous(_)
            | ReductionError::ReexpressionFailed(_)
            | ReductionError::PivotVanishes),
        ) => return (failure(Verdict::Unsupported, e.to_string()), None),
        Err(e) => return (failure(Verdict::Fail, e.to_string()), None),
    };
    let trace = outcome.trace;
    let mut summary = Vec::new();
    for (k, s) in trace.steps.iter().enumerate() {
        summary.push(format!("step {}: {:?} on {}", k + 1, s.branch, s.pivot));
    }
    let descends = trace.descends();
    let trace_json = serde_json::to_value(&trace).ok();
    let cand = match (&trace.status, outcome.candidate) {
        (TraceStatus::FlatOutputsFound, Some(cand)) => cand,
        (TraceStatus::Unsupported(why), _) => {
            summary.push(format!("unsupported: {why}"));
            let mut o = Outcome::of(Verdict::Unsupported);
            o.summary = summary;
            o.trace = trace_json;
            return (o, None);
        }
        (TraceStatus::FlatOutputsFound, None) => unreachable!("outputs found without a candidate"),
    };
    summary.push(format!("flat outputs: ({})", trace.outputs.join(", ")));
    let fopts = FlatOptions {
        jet_order: c.jet_order,
        trials: c.trials.min(20),
        tol: c.tol,
        seed: c.seed,
    };
    let (verdict, check) = match check_flat_outputs(sys, &cand, &fopts) {
        Ok(r) => {
            summary.push(format!(
                "check: {} samples, max round-trip {:.3e}, max dynamics {:.3e}",
                r.samples, r.max_roundtrip, r.max_dynamics
            ));
            (r.verdict, serde_json::to_value(&r).unwrap_or(Value::Null))
        }
        Err(e) => {
            summary.push(format!("check failed: {e}"));
            (Verdict::Inconclusive, json!({ "error": e.to_string() }))
        }
    };
    let verdict = if descends { verdict } else { Verdict::Fail };
    let mut o = Outcome::of(verdict);
    o.summary = summary;
    o.trace = trace_json;
    o.residuals = json!({ "descends": descends, "check": check, "outputs": trace.outputs });
    (o, Some(cand))
}

fn cmd_verify(sys: &SystemDef, cand: &FlatOutputCandidate, c: &Common) -> Outcome {
    let opts = FlatOptions {
        jet_order: c.jet_order,
        trials: c.trials,
        tol: c.tol,
        seed: c.seed,
    };
    match check_flat_outputs(sys, cand, &opts) {
        Ok(r) => {
            let mut o = Outcome::of(r.verdict);
            o.summary.push(format!(
                "{}: {} samples, {} span failures, {} rank failures, max round-trip {:.3e}, max dynamics {:.3e}",
                r.candidate, r.samples, r.span_failures, r.rank_failures, r.max_roundtrip, r.max_dynamics
            ));
            o.residuals = serde_json::to_value(&r).unwrap_or(Value::Null);
            o
        }
        Err(e) => failure(Verdict::Inconclusive, e.to_string()),
    }
}

fn cmd_stationarity(sys: &SystemDef, cand: &FlatOutputCandidate, t: &str) -> Outcome {
    match check_stationarity(sys, cand, t) {
        Ok(r) => {
            let mut o = Outcome::of(r.verdict);
            for (b, w) in &r.witnesses {
                o.summary.push(format!("d/d{t} of {b}: {w}"));
            }
            if let Some(why) = &r.reason {
                o.summary.push(why.clone());
            }
            o.residuals = serde_json::to_value(&r).unwrap_or(Value::Null);
            o
        }
        Err(e) => failure(Verdict::Inconclusive, e.to_string()),
    }
}

fn run_corpus(json: Option<&PathBuf>, out: &mut dyn Write) -> Result<i32, CliError> {
    let start = Instant::now();
    let rows = corpus::run_all();
    let _ = writeln!(out, "{:<10} {:<58} {:<32} {:<32} ok", "fixture", "command", "expected", "got");
    for r in &rows {
        let _ = writeln!(
            out,
            "{:<10} {:<58} {:<32} {:<32} {}",
            r.fixture,
            r.command,
            format!("{} ({})", r.expected_verdict, r.expected_code),
            format!("{} ({})", r.verdict, r.code),
            if r.ok { "yes" } else { "NO" }
        );
    }
    let all = rows.iter().all(|r| r.ok);
    let _ = writeln!(out, "verdict: {}", if all { "Pass" } else { "Fail" });
    if let Some(path) = json {
        let texts: Vec<&[u8]> = corpus::FIXTURES.iter().map(|f| f.text.as_bytes()).collect();
        let report = Report {
            schema: SCHEMA,
            command: "corpus run".into(),
            inputs_digest: digest(texts),
            seed: 0,
            jet_order: 8,
            trials: 100,
            tol: 1e-8,
            verdict: if all { "Pass" } else { "Fail" }.into(),
            exit_code: if all { 0 } else { 1 },
            residuals: serde_json::to_value(&rows).unwrap_or(Value::Null),
            trace: None,
            timing_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        write_json(path, &report.to_json(), out)?;
    }
    Ok(if all { 0 } else { 1 })
}

/// Runs one command and returns its exit code and verdict label.
pub(crate) fn run_captured(args: &[String]) -> (i32, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run(args.iter().cloned(), &mut out, &mut err);
    let text = String::from_utf8_lossy(&out);
    let verdict = text
        .lines()
        .rev()
        .find_map(|l| l.strip_prefix("verdict: "))
        .unwrap_or("Error")
        .to_string();
    (code, verdict)
}
