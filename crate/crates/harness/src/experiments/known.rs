use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srcinv_core::control::{SegmentLayout, Source, Subdivision};
use srcinv_core::model::{ForwardModel, FullModel};
use srcinv_core::optimizer::{evaluate_cost, run, Method, RunOutcome, Truth};
use srcinv_core::sensitivity::{jacobian_cs, jacobian_fd, stack, Problem, Window};

use crate::config::{ExperimentConfig, NamedTruth};
use crate::data::{fmt, generate_measurements, inversion_model};
use crate::output::{Outcome, Table};
use crate::HarnessError;

pub(crate) fn known_problem(model: &FullModel, truth: &[Source], c_up: f64, data: nalgebra::DMatrix<f64>) -> Result<Problem, HarnessError> {
    let segs: Vec<_> = truth.iter().map(|s| s.segment()).collect();
    Ok(Problem::new(SegmentLayout::new(model.mesh(), &segs)?, c_up, data))
}

fn truth_of(cfg: &ExperimentConfig) -> Truth {
    Truth { sources: cfg.truth.clone(), x_range: (cfg.mesh.x_range[0], cfg.mesh.x_range[1]) }
}

pub(crate) fn max_rel_error(theta: &[f64], truth: &[Source]) -> f64 {
    theta.iter().zip(truth).map(|(t, s)| (t - s.value).abs() / s.value.abs()).fold(0.0, f64::max)
}

fn trace_rows(table: &mut Table, label: &str, out: &RunOutcome) {
    for r in &out.trace {
        table.push(vec![
            label.to_string(),
            r.iteration.to_string(),
            fmt(r.cost),
            r.l1_top.map(fmt).unwrap_or_default(),
            r.l1_bottom.map(fmt).unwrap_or_default(),
            fmt(r.cond),
            fmt(r.damping),
        ]);
    }
}

fn trace_table() -> Table {
    Table::new("trace", &["run", "iteration", "cost", "l1_top", "l1_bottom", "cond", "damping"])
}

fn estimate_row(table: &mut Table, label: &str, out: &RunOutcome, truth: &[Source]) {
    let theta = out.theta.iter().map(|v| fmt(*v)).collect::<Vec<_>>().join(";");
    table.push(vec![
        label.to_string(),
        theta,
        fmt(max_rel_error(&out.theta, truth)),
        out.iterations.to_string(),
        format!("{:?}", out.stop),
        fmt(out.cost),
    ]);
}

fn estimate_table() -> Table {
    Table::new("estimates", &["run", "theta", "max_rel_error", "iterations", "stop", "cost"])
}

pub fn example1(cfg: &ExperimentConfig, alpha: f64) -> Result<Outcome, HarnessError> {
    let mut outcome = Outcome::new("example1");
    let mut model = inversion_model(cfg)?;
    let meas = generate_measurements(cfg)?;
    let c_up = cfg.coefficients.c_up;
    let clean = known_problem(&model, &cfg.truth, c_up, meas.clean.clone())?;
    let noisy = known_problem(&model, &cfg.truth, c_up, meas.noisy.clone())?;
    let truth = truth_of(cfg);
    let all: Vec<usize> = (0..cfg.truth.len()).collect();
    let zero = vec![0.0; cfg.truth.len()];
    let full = Window::full(model.grid());
    let gn = cfg.algorithm.gn;

    let start = Instant::now();
    let exact = run(&mut model, &clean, &zero, &all, full, Method::Pdgn, &gn, Some(&truth))?;
    let with_noise = run(&mut model, &noisy, &zero, &all, full, Method::Pdgn, &gn, Some(&truth))?;
    let elapsed = start.elapsed().as_secs_f64();
    outcome.timings.push(("pdgn_runs".into(), elapsed));

    let mut trace = trace_table();
    let mut est = estimate_table();
    trace_rows(&mut trace, "pdgn", &exact);
    trace_rows(&mut trace, "pdgn_noisy", &with_noise);
    estimate_row(&mut est, "pdgn", &exact, &cfg.truth);
    estimate_row(&mut est, "pdgn_noisy", &with_noise, &cfg.truth);
    for (label, method) in [
        ("levenberg_marquardt", Method::LevenbergMarquardt { alpha }),
        ("steepest_descent", Method::SteepestDescent),
        ("tikhonov", Method::Tikhonov { alpha }),
    ] {
        let out = run(&mut model, &clean, &zero, &all, full, method, &gn, Some(&truth))?;
        trace_rows(&mut trace, label, &out);
        estimate_row(&mut est, label, &out, &cfg.truth);
    }

    let e0 = max_rel_error(&exact.theta, &cfg.truth);
    outcome.check(
        1,
        "noise-free recovery",
        e0 <= 1e-6 && exact.iterations <= 3,
        format!("relative error {e0:.3e} after {} iterations (need <= 1e-6 in <= 3)", exact.iterations),
    );
    let e1 = max_rel_error(&with_noise.theta, &cfg.truth);
    outcome.check(
        1,
        "noisy recovery",
        e1 <= 0.05 && with_noise.iterations <= 20,
        format!("relative error {e1:.3e} after {} iterations (need <= 5e-2 in <= 20)", with_noise.iterations),
    );
    outcome.check(
        1,
        "runtime",
        elapsed <= 60.0,
        if elapsed <= 60.0 { "both solves within 60 s" } else { "solves exceeded 60 s" },
    );
    outcome.tables.extend([meas.table("measurements_clean", false), meas.table("measurements_noisy", true), trace, est]);
    Ok(outcome)
}

pub fn example2(cfg: &ExperimentConfig) -> Result<Outcome, HarnessError> {
    let mut outcome = Outcome::new("example2");
    let mut model = inversion_model(cfg)?;
    let meas = generate_measurements(cfg)?;
    let c_up = cfg.coefficients.c_up;
    let clean = known_problem(&model, &cfg.truth, c_up, meas.clean.clone())?;
    let noisy = known_problem(&model, &cfg.truth, c_up, meas.noisy.clone())?;
    let truth = truth_of(cfg);
    let all: Vec<usize> = (0..cfg.truth.len()).collect();
    let zero = vec![0.0; cfg.truth.len()];
    let full = Window::full(model.grid());
    let gn = cfg.algorithm.gn;

    let exact = run(&mut model, &clean, &zero, &all, full, Method::Pdgn, &gn, Some(&truth))?;
    let with_noise = run(&mut model, &noisy, &zero, &all, full, Method::Pdgn, &gn, Some(&truth))?;
    let cost = evaluate_cost(&model, &clean, &exact.theta, full)?;
    let mut trace = trace_table();
    let mut est = estimate_table();
    trace_rows(&mut trace, "pdgn", &exact);
    trace_rows(&mut trace, "pdgn_noisy", &with_noise);
    estimate_row(&mut est, "pdgn", &exact, &cfg.truth);
    estimate_row(&mut est, "pdgn_noisy", &with_noise, &cfg.truth);

    let e = max_rel_error(&exact.theta, &cfg.truth);
    outcome.check(2, "parameters recovered", e <= 1e-4, format!("max relative error {e:.3e} (need <= 1e-4)"));
    outcome.check(2, "unreduced final cost", cost <= 1e-12, format!("cost {cost:.3e} (need <= 1e-12)"));
    outcome.tables.extend([meas.table("measurements_clean", false), meas.table("measurements_noisy", true), trace, est]);
    Ok(outcome)
}

fn rel_diff(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax()
}

pub fn jacobian_check(
    cfg: &ExperimentConfig,
    cases: &[NamedTruth],
    delta: f64,
    complex_step: f64,
) -> Result<Outcome, HarnessError> {
    let mut outcome = Outcome::new("jacobian-check");
    let model = inversion_model(cfg)?;
    let full = Window::full(model.grid());
    let mut table = Table::new("jacobian", &["case", "fd_vs_cs", "fd_vs_superposition", "cs_vs_superposition"]);
    let mut worst = [0.0f64; 3];
    for case in cases {
        let n = model.n_obs();
        let problem = known_problem(&model, &case.truth, cfg.coefficients.c_up, nalgebra::DMatrix::zeros(n, model.grid().n))?;
        let theta: Vec<f64> = case.truth.iter().map(|s| s.value).collect();
        let active: Vec<usize> = (0..theta.len()).collect();
        let fd = jacobian_fd(&model, &problem, &theta, &active, delta, full, None)?;
        let cs = jacobian_cs(&model, &problem, &theta, &active, complex_step, full)?;
        let mut oracle = nalgebra::DMatrix::zeros(fd.nrows(), fd.ncols());
        let layout = SegmentLayout::new(model.mesh(), problem.segments())?;
        for j in 0..theta.len() {
            let mut unit = vec![0.0; theta.len()];
            unit[j] = 1.0;
            let y = model.predict(&layout.dirichlet_vector(&unit, 0.0), full.end)?;
            oracle.column_mut(j).copy_from_slice(&stack(&y, full));
        }
        let d = [rel_diff(&fd, &cs), rel_diff(&fd, &oracle), rel_diff(&cs, &oracle)];
        table.push(vec![case.name.clone(), fmt(d[0]), fmt(d[1]), fmt(d[2])]);
        for k in 0..3 {
            worst[k] = worst[k].max(d[k]);
        }
    }
    outcome.check(5, "finite difference vs complex step", worst[0] <= 1e-6, format!("max relative difference {:.3e} (need <= 1e-6)", worst[0]));
    outcome.check(
        5,
        "superposition oracle",
        worst[1] <= 1e-8 && worst[2] <= 1e-8,
        format!("finite difference {:.3e}, complex step {:.3e} (need <= 1e-8)", worst[1], worst[2]),
    );
    outcome.tables.push(table);
    Ok(outcome)
}

/// Random ordered control pairs on the finest subdivision; reports the most
/// negative entry of `Π C(θ₂) − Π C(θ₁)`.
pub fn monotonicity(cfg: &ExperimentConfig, pairs: usize) -> Result<Outcome, HarnessError> {
    let mut outcome = Outcome::new("monotonicity");
    let model = inversion_model(cfg)?;
    let fine = Subdivision::finest((cfg.mesh.x_range[0], cfg.mesh.x_range[1]), cfg.n_fine())?;
    let layout = SegmentLayout::new(model.mesh(), &fine.segments())?;
    let n = fine.n_params();
    let last = model.grid().n - 1;
    let c_up = cfg.coefficients.c_up;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise.seed);
    let mut table = Table::new("pairs", &["pair", "min_difference", "min_difference_final", "raised_segments"]);
    let (mut violations, mut worst, mut not_strict) = (0usize, f64::INFINITY, 0usize);
    for p in 0..pairs {
        let lower: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { rng.random_range(0.0..100.0) } else { 0.0 }).collect();
        let mut upper = lower.clone();
        let mut raised = 0;
        while raised == 0 {
            for v in upper.iter_mut() {
                if rng.random_bool(0.3) {
                    *v += rng.random_range(1e-3..50.0);
                    raised += 1;
                }
            }
        }
        let y1 = model.predict(&layout.dirichlet_vector(&lower, c_up), last)?;
        let y2 = model.predict(&layout.dirichlet_vector(&upper, c_up), last)?;
        let d = y2 - y1;
        let min = d.min();
        let min_final = d.column(last).min();
        violations += d.iter().filter(|&&v| v < -1e-10).count();
        not_strict += usize::from(!(min_final > 0.0));
        worst = worst.min(min);
        table.push(vec![p.to_string(), fmt(min), fmt(min_final), raised.to_string()]);
    }
    outcome.check(
        4,
        "ordered outflow",
        violations == 0,
        format!("{violations} entries below -1e-10 over {pairs} pairs, most negative difference {worst:.3e}"),
    );
    outcome.check(
        4,
        "strict order at final time",
        not_strict == 0,
        format!("{not_strict} of {pairs} pairs without a strictly larger final outflow"),
    );
    outcome.tables.push(table);
    Ok(outcome)
}
