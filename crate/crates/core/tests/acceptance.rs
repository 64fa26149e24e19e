//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line with the
//! measured values, then asserts. Expensive experiments are shared between
//! tests through `OnceLock`.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use convergent_ilqr::bench::{
    evaluate, run_experiment, sample_perturbation, trial_stream, CellSummary, ExperimentConfig, ExperimentReport,
    LabeledArtifacts, SWEEP_COVARIANCES,
};
use convergent_ilqr::ilqr::{SolverMode, SolverOptions};
use convergent_ilqr::models::ModelKind;
use convergent_ilqr::oracles;

fn report_line(criterion: u32, passed: bool, detail: &str) {
    println!("criterion {criterion}: {} {detail}", if passed { "PASS" } else { "FAIL" });
}

fn check(criterion: u32, passed: bool, detail: String) {
    report_line(criterion, passed, &detail);
    assert!(passed, "criterion {criterion}: {detail}");
}

struct Experiment {
    report: ExperimentReport,
    solved: Vec<LabeledArtifacts>,
    config: ExperimentConfig,
    elapsed: Duration,
}

fn run(config: ExperimentConfig) -> Experiment {
    let start = Instant::now();
    let (report, solved) = run_experiment(&config).expect("experiment runs");
    Experiment {
        report,
        solved,
        config,
        elapsed: start.elapsed(),
    }
}

/// Four hopper weight settings, 100 paired rollouts at σ² = 1e-4.
fn hopper() -> &'static Experiment {
    static CELL: OnceLock<Experiment> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut config = ExperimentConfig::new(ModelKind::Hopper);
        config.covariances = vec![1e-4];
        config.trials_per_covariance = 100;
        config.seed = 1;
        run(config)
    })
}

/// Quadruped sweep over all six covariances, 100 paired rollouts each.
fn quadruped() -> &'static Experiment {
    static CELL: OnceLock<Experiment> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut config = ExperimentConfig::new(ModelKind::Quadruped);
        config.covariances = SWEEP_COVARIANCES.to_vec();
        config.trials_per_covariance = 100;
        config.seed = 1;
        run(config)
    })
}

fn chi_of(report: &ExperimentReport, label: &str) -> Option<f64> {
    report.solves.iter().find(|s| s.label == label).and_then(|s| s.chi)
}

fn cost_of(report: &ExperimentReport, label: &str) -> Option<f64> {
    report.solves.iter().find(|s| s.label == label).and_then(|s| s.cost)
}

fn cell<'a>(report: &'a ExperimentReport, label: &str, cov: f64) -> Option<&'a CellSummary> {
    report.cells.iter().find(|c| c.traj == label && c.cov == cov)
}

fn reduction(vanilla: f64, chi: f64) -> f64 {
    (vanilla - chi) / vanilla
}

#[test]
fn criterion_1_chi_gradient_oracle() {
    let start = Instant::now();
    let (problem, out) = oracles::hopper_solve(1, SolverMode::Vanilla, &SolverOptions::default()).unwrap();
    assert_eq!(out.termination, "converged");
    let errs = oracles::chi_gradient_errors(&problem, &out.trajectory, &out.tracking_gains.feedback).unwrap();
    let good = errs.iter().filter(|e| **e < 1e-4).count() as f64 / errs.len() as f64;
    let worst = errs.iter().copied().fold(0.0, f64::max);
    let elapsed = start.elapsed();
    check(
        1,
        good >= 0.95 && worst < 1e-2 && elapsed < Duration::from_secs(600),
        format!("{:.1}% of {} steps below 1e-4, max {worst:.2e}, {:.1}s", 100.0 * good, errs.len(), elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_2_saltation_oracle() {
    let start = Instant::now();
    let hop = oracles::benchmark_saltation_error(ModelKind::Hopper).unwrap();
    let quad = oracles::benchmark_saltation_error(ModelKind::Quadruped).unwrap();
    let elapsed = start.elapsed();
    check(
        2,
        hop < 1e-3 && quad < 1e-3 && elapsed < Duration::from_secs(60),
        format!("hopper {hop:.2e}, quadruped {quad:.2e}, {:.1}s", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_3_lqr_oracle() {
    let (gain, cost, iterations) = oracles::lqr_errors().unwrap();
    check(
        3,
        gain < 1e-8 && cost < 1e-8 && iterations <= 2,
        format!("gain error {gain:.2e}, cost error {cost:.2e}, {iterations} iterations"),
    );
}

#[test]
fn criterion_4_linear_regime() {
    let (problem, out) = oracles::hopper_solve(0, SolverMode::Vanilla, &SolverOptions::default()).unwrap();
    let (e, chi) = oracles::linear_regime(&problem, &out, 1e-6).unwrap();
    let rel = (e / chi - 1.0).abs();
    check(4, rel < 0.1, format!("E {e:.6} vs chi {chi:.6} ({:.2e} relative)", rel));
}

#[test]
fn criterion_5_hopper_chi_reduction() {
    let exp = hopper();
    let mut passed = exp.elapsed < Duration::from_secs(7200);
    let mut parts = Vec::new();
    for k in 1..=4 {
        let (v, c) = (chi_of(&exp.report, &format!("w{k}-vanilla")), chi_of(&exp.report, &format!("w{k}-chi")));
        let (Some(v), Some(c)) = (v, c) else {
            passed = false;
            parts.push(format!("w{k}: solve failed"));
            continue;
        };
        let r = reduction(v, c);
        passed &= r >= 0.10 && (v <= 1.0 || c < 1.0);
        parts.push(format!("w{k} {v:.4}->{c:.4} ({:.1}%)", 100.0 * r));
    }
    check(5, passed, format!("{}; {:.0}s", parts.join(", "), exp.elapsed.as_secs_f64()));
}

#[test]
fn criterion_6_hopper_monte_carlo() {
    let exp = hopper();
    let mut e_better = 0;
    let mut f_better = 0;
    let mut worst_chi_e: f64 = 0.0;
    let mut parts = Vec::new();
    for k in 1..=4 {
        let (Some(v), Some(c)) = (
            cell(&exp.report, &format!("w{k}-vanilla"), 1e-4),
            cell(&exp.report, &format!("w{k}-chi"), 1e-4),
        ) else {
            parts.push(format!("w{k}: missing"));
            continue;
        };
        worst_chi_e = worst_chi_e.max(c.max_e);
        let (ve, ce, vf, cf) = (v.mean_e.unwrap_or(f64::INFINITY), c.mean_e.unwrap_or(f64::INFINITY), v.mean_f.unwrap_or(f64::INFINITY), c.mean_f.unwrap_or(f64::INFINITY));
        if ce < ve && cf <= vf {
            e_better += 1;
        }
        if cf <= vf {
            f_better += 1;
        }
        parts.push(format!("w{k} E {ve:.4}->{ce:.4} F {vf:.3}->{cf:.3}"));
    }
    check(
        6,
        e_better >= 3 && worst_chi_e <= 1.0,
        format!("{e_better}/4 with lower E and no higher F ({f_better}/4 F), max convergent E {worst_chi_e:.3}; {}", parts.join(", ")),
    );
}

#[test]
fn criterion_7_quadruped() {
    let exp = quadruped();
    let r = &exp.report;
    let values = (
        chi_of(r, "w1-vanilla"),
        chi_of(r, "w1-chi"),
        cost_of(r, "w1-vanilla"),
        cost_of(r, "w1-chi"),
        cell(r, "w1-vanilla", 1e-4),
        cell(r, "w1-chi", 1e-4),
    );
    let (Some(vchi), Some(cchi), Some(vj), Some(cj), Some(v), Some(c)) = values else {
        check(7, false, "a quadruped solve failed".into());
        return;
    };
    let band = |x: f64| (0.05..=0.60).contains(&x);
    let chi_red = reduction(vchi, cchi);
    let e_red = reduction(v.mean_e.unwrap_or(f64::INFINITY), c.mean_e.unwrap_or(f64::INFINITY));
    let f_red = reduction(v.mean_f.unwrap_or(f64::INFINITY), c.mean_f.unwrap_or(f64::INFINITY));
    let j_inc = (cj - vj) / vj;
    let in_time = exp.elapsed < Duration::from_secs(8 * 3600);
    check(
        7,
        band(chi_red) && band(e_red) && band(f_red) && band(j_inc) && in_time,
        format!(
            "chi {vchi:.4}->{cchi:.4} ({:.1}%), mean E {:.1}% lower, mean F {:.1}% lower, J {vj:.3}->{cj:.3} ({:+.1}%); sweep {:.0}s",
            100.0 * chi_red,
            100.0 * e_red,
            100.0 * f_red,
            100.0 * j_inc,
            exp.elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_8_failure_onset() {
    let exp = quadruped();
    let onset = |label: &str| {
        exp.report
            .curves
            .iter()
            .find(|c| c.traj == label && c.threshold == 50.0)
            .and_then(|c| c.first_failure)
    };
    let (v, c) = (onset("w1-vanilla"), onset("w1-chi"));
    // A trajectory that never fails counts as failing beyond the sweep.
    let later = match (v, c) {
        (Some(v), Some(c)) => c > v,
        (Some(_), None) => true,
        _ => false,
    };
    check(8, later, format!("first E > 50: vanilla {v:?}, chi-iLQR {c:?}"));
}

#[test]
fn criterion_9_structural_invariants() {
    let start = Instant::now();
    let exp = hopper();
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    for entry in &exp.solved {
        let bench = exp.config.benchmark().unwrap();
        let weights = &exp.config.trials(&bench)[entry.weight_trial];
        let task = exp.config.task(&bench, weights).unwrap();
        let problem = task.problem(bench.system.clone(), exp.config.solve_options());
        worst = worst.max(oracles::structural_error(&problem, &entry.artifacts).unwrap());
        let accepted: Vec<f64> = entry
            .artifacts
            .iterations
            .iter()
            .filter(|l| l.iteration == 0 || l.alpha.is_some())
            .map(|l| l.j_chi)
            .collect();
        monotone &= accepted.windows(2).all(|w| w[1] <= w[0]);
    }
    // Pairing: every record of a (covariance, id) carries the sampled δx₀.
    let n = exp.solved[0].artifacts.trajectory.states[0].len();
    let paired = exp.report.trials.iter().all(|t| {
        let c = exp.config.covariances.iter().position(|c| *c == t.cov).unwrap();
        t.paired && t.dx0 == sample_perturbation(t.cov, n, exp.config.seed, trial_stream(c, t.trial_id)).as_slice()
    });
    let mut small = exp.config.clone();
    small.trials_per_covariance = 10;
    let again = evaluate(&small, &exp.solved).unwrap();
    let deterministic = again.iter().all(|t| exp.report.trials.contains(t));
    let text = serde_json::to_string(&exp.report).unwrap();
    let round_trip = serde_json::from_str::<ExperimentReport>(&text).unwrap() == exp.report;
    let elapsed = start.elapsed();
    check(
        9,
        worst < 1e-9 && monotone && paired && deterministic && round_trip,
        format!(
            "product identities {worst:.2e}, monotone {monotone}, pairing {paired}, determinism {deterministic}, round trip {round_trip}; {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
}
