mod common;

use flatcheck::diffiety::nth_derivative;
use flatcheck::expr::{equivalent, EquivOptions, Expr, VarKind, Variable};
use flatcheck::flatverify::{check_flat_outputs, FlatOptions, FlatOutputCandidate};
use flatcheck::reduction::{compute_flat_outputs, ReductionOptions, StepBranch, TraceStatus};
use flatcheck::Verdict;

use common::model;

fn b(j: usize, k: u32) -> Expr {
    Expr::var(Variable::new(format!("b{j}"), VarKind::Arbitrary, k))
}

fn opts() -> FlatOptions {
    FlatOptions { jet_order: 8, trials: 50, ..Default::default() }
}

// b2 = y - x tan(b1) gives b2' = -x b1'/cos(b1)^2
#[test]
fn hand_inverse_for_car_outputs() {
    let m = model("car");
    let sys = m.system("car").unwrap();
    let th = Expr::var(Variable::free("theta"));
    let x = Expr::var(Variable::free("x"));
    let y = Expr::var(Variable::state("y"));
    let x_of_b = -b(2, 1) * Expr::powi(Expr::cos(b(1, 0)), 2) / b(1, 1);
    let cand = FlatOutputCandidate::new("hand", "car", vec![th.clone(), y - x * Expr::tan(th)]).with_inverse(
        vec![
            ("theta".into(), b(1, 0)),
            ("x".into(), x_of_b.clone()),
            ("y".into(), b(2, 0) + x_of_b * Expr::tan(b(1, 0))),
        ],
        vec![b(1, 1), Expr::cos(b(1, 0))],
    );
    let rep = check_flat_outputs(sys, &cand, &opts()).unwrap();
    assert_eq!(rep.verdict, Verdict::Pass, "{rep:?}");
}

// b2 = x3 - x2' x1 gives b2' = -x2'' x1
#[test]
fn hand_inverse_for_bilinear_outputs() {
    let m = model("bilinear");
    let sys = m.system("bilinear").unwrap();
    let x1 = Expr::var(Variable::free("x1"));
    let x2 = Variable::free("x2");
    let x3 = Expr::var(Variable::state("x3"));
    let x1_of_b = -b(2, 1) / b(1, 2);
    let cand = FlatOutputCandidate::new("hand", "bilinear", vec![Expr::var(x2.clone()), x3 - Expr::var(x2.shifted(1)) * x1])
        .with_inverse(
            vec![
                ("x2".into(), b(1, 0)),
                ("x1".into(), x1_of_b.clone()),
                ("x3".into(), b(2, 0) + b(1, 1) * x1_of_b),
            ],
            vec![b(1, 2)],
        );
    let rep = check_flat_outputs(sys, &cand, &opts()).unwrap();
    assert_eq!(rep.verdict, Verdict::Pass, "{rep:?}");
}

#[test]
fn reduced_inverse_matches_hand_inverse() {
    let m = model("chained");
    let sys = m.system("chained").unwrap();
    let out = compute_flat_outputs(sys, None, None, &ReductionOptions::default()).unwrap();
    let cand = out.candidate.unwrap();
    let hand = m.candidate("good").unwrap();
    // both inverses describe the same x; compare after matching outputs
    let eo = EquivOptions::default();
    for (a, h) in cand.outputs.iter().zip(&hand.outputs) {
        assert!(equivalent(a, h, &eo).unwrap(), "{a} vs {h}");
    }
    for (name, e) in &hand.inverse {
        let ours = &cand.inverse.iter().find(|(n, _)| n == name).unwrap().1;
        assert!(equivalent(ours, e, &eo).unwrap(), "{name}: {ours} vs {e}");
    }
}

#[test]
fn outputs_generate_the_system() {
    // x1 and x3 follow from (x2, x3 - x2 x1) and one derivative
    let m = model("chained");
    let sys = m.system("chained").unwrap();
    let ctx = sys.context();
    let b2 = Expr::var(Variable::state("x3")) - Expr::var(Variable::free("x2")) * Expr::var(Variable::free("x1"));
    let d = nth_derivative(&b2, 1, &ctx).unwrap();
    let expect = -Expr::var(Variable::free("x2").shifted(1)) * Expr::var(Variable::free("x1"));
    assert!(equivalent(&d, &expect, &EquivOptions::default()).unwrap());
}

#[test]
fn traces_descend_and_branch_as_expected() {
    let cases = [
        ("chained", Some(("p", "main")), StepBranch::M2Linear),
        ("car", Some(("mu3", "plus")), StepBranch::M2Linear),
        ("bilinear", Some(("p", "main")), StepBranch::M2Ruled),
        ("m1", None, StepBranch::M1Linear),
    ];
    for (fixture, param, branch) in cases {
        let m = model(fixture);
        let sys = m.system(fixture).unwrap();
        let p = param.map(|(p, c)| (m.parametrization(p).unwrap(), c));
        let out = compute_flat_outputs(sys, p, p.map(|_| "z1"), &ReductionOptions::default()).unwrap();
        assert_eq!(out.trace.status, TraceStatus::FlatOutputsFound, "{fixture}");
        assert!(out.trace.descends(), "{fixture}");
        assert_eq!(out.trace.steps[0].branch, branch, "{fixture}");
        let rep = check_flat_outputs(sys, out.candidate.as_ref().unwrap(), &opts()).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass, "{fixture}");
    }
}

#[test]
fn wrong_outputs_are_refuted() {
    let m = model("chained");
    let sys = m.system("chained").unwrap();
    let rep = check_flat_outputs(sys, m.candidate("bad").unwrap(), &opts()).unwrap();
    assert_eq!(rep.verdict, Verdict::Fail);
    assert_eq!(rep.span_failures, rep.samples);
}

#[test]
fn nonruled_reduction_is_unsupported() {
    let m = model("nonruled");
    let sys = m.system("nonruled").unwrap();
    match compute_flat_outputs(sys, None, None, &ReductionOptions::default()) {
        Ok(out) => assert!(matches!(out.trace.status, TraceStatus::Unsupported(_))),
        Err(_) => {}
    }
}
