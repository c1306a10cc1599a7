use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srcinv_core::analytic1d::{fd_outflow, linear_r2, peclet_sweep, solve_closed_form, Ode1dProblem};
use srcinv_core::control::Source;
use srcinv_core::mesh::Edge;
use srcinv_core::model::ForwardModel;
use srcinv_core::sensitivity::{condition_number, jacobian_fd, Window};

use crate::config::ExperimentConfig;
use crate::data::{fmt, inversion_model};
use crate::experiments::known::known_problem;
use crate::output::{Outcome, Table};
use crate::HarnessError;

pub struct FlatnessParams {
    pub instances: usize,
    pub mu: f64,
    pub peclet: f64,
    pub doublings: usize,
    pub half_width: f64,
    pub x_lo: f64,
    pub x_hi: f64,
    pub points: usize,
    pub masses: Vec<f64>,
}

fn random_problem(rng: &mut ChaCha8Rng) -> Ode1dProblem {
    let mu = rng.random_range(0.05..1.0);
    let u = rng.random_range(0.5..20.0);
    let h = rng.random_range(0.02..0.2);
    let x_m = rng.random_range(h + 0.05..1.0 - h - 0.05);
    Ode1dProblem::new(mu, u, rng.random_range(0.1..10.0), x_m, h)
}

pub fn ode1d_flatness(cfg: &ExperimentConfig, p: &FlatnessParams) -> Result<Outcome, HarnessError> {
    let mut outcome = Outcome::new("ode1d-flatness");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise.seed);
    let mut oracle = Table::new("oracle", &["instance", "mu", "u", "m", "x_m", "h", "closed_form", "finite_difference", "rel_diff"]);
    let mut worst = 0.0f64;
    for i in 0..p.instances {
        let q = random_problem(&mut rng);
        let exact = solve_closed_form(&q)?.outflow();
        let fd = fd_outflow(&q, 4000)?;
        let rel = (exact - fd).abs() / exact.abs();
        worst = worst.max(rel);
        oracle.push(vec![i.to_string(), fmt(q.mu), fmt(q.u), fmt(q.m), fmt(q.x_m), fmt(q.h), fmt(exact), fmt(fd), fmt(rel)]);
    }
    outcome.check(6, "closed form vs BVP oracle", worst <= 1e-6, format!("largest relative difference {worst:.3e} (need <= 1e-6)"));

    let base = Ode1dProblem::new(p.mu, 2.0 * p.mu * p.peclet, 1.0, 0.5 * (p.x_lo + p.x_hi), p.half_width);
    let sweep = peclet_sweep(&base, p.doublings, p.x_lo, p.x_hi, p.points)?;
    let mut flat = Table::new("flatness", &["peclet", "min", "max", "spread"]);
    for f in &sweep {
        flat.push(vec![fmt(f.peclet), fmt(f.min), fmt(f.max), fmt(f.spread)]);
    }
    let s0 = sweep[0].spread;
    outcome.check(
        6,
        "outflow flat in source position",
        s0 <= 1e-2,
        format!("relative spread {s0:.3e} at Pe = {} (need <= 1e-2)", p.peclet),
    );
    let monotone = sweep.windows(2).all(|w| w[1].spread <= w[0].spread);
    let spreads = sweep.iter().map(|f| format!("{:.3e}", f.spread)).collect::<Vec<_>>().join(", ");
    outcome.check(6, "spread non-increasing in Pe", monotone, format!("spreads {spreads}"));

    let mut linear = Table::new("mass", &["m", "outflow"]);
    let mut outflow = Vec::with_capacity(p.masses.len());
    for &m in &p.masses {
        let c = solve_closed_form(&Ode1dProblem { m, ..base })?.outflow();
        linear.push(vec![fmt(m), fmt(c)]);
        outflow.push(c);
    }
    let r2 = linear_r2(&p.masses, &outflow);
    outcome.check(6, "outflow linear in mass", (1.0 - r2).abs() <= 1e-12, format!("R^2 = 1 - {:.3e}", 1.0 - r2));
    outcome.tables.extend([oracle, flat, linear]);
    Ok(outcome)
}

/// Two sources of width `h` ending at `top_end` and `bottom_end`.
pub fn width_family(h: f64, top_end: f64, bottom_end: f64, values: [f64; 2]) -> Vec<Source> {
    vec![
        Source { edge: Edge::Top, a: top_end - h, b: top_end, value: values[0] },
        Source { edge: Edge::Bottom, a: bottom_end - h, b: bottom_end, value: values[1] },
    ]
}

pub fn conditioning_vs_h(
    cfg: &ExperimentConfig,
    widths: &[f64],
    top_end: f64,
    bottom_end: f64,
    values: [f64; 2],
) -> Result<Outcome, HarnessError> {
    let mut outcome = Outcome::new("conditioning-vs-h");
    let model = inversion_model(cfg)?;
    let full = Window::full(model.grid());
    let mut table = Table::new("conditioning", &["h", "cond", "sigma_max", "sigma_min"]);
    let mut sorted = widths.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut conds = Vec::with_capacity(sorted.len());
    for &h in &sorted {
        let truth = width_family(h, top_end, bottom_end, values);
        let data = nalgebra::DMatrix::zeros(model.n_obs(), model.grid().n);
        let problem = known_problem(&model, &truth, cfg.coefficients.c_up, data)?;
        let psi = jacobian_fd(&model, &problem, &values, &[0, 1], 1e-3, full, None)?;
        let s = psi.singular_values();
        let c = condition_number(s.as_slice());
        table.push(vec![fmt(h), fmt(c), fmt(s.max()), fmt(s.min())]);
        conds.push(c);
    }
    let increasing = conds.windows(2).filter(|w| w[1] > w[0]).count();
    let pairs = conds.len().saturating_sub(1);
    outcome.check(
        7,
        "cond grows as segments shrink",
        pairs > 0 && increasing == pairs,
        format!("{increasing} of {pairs} consecutive comparisons increase; cond {}", conds.iter().map(|c| format!("{c:.3e}")).collect::<Vec<_>>().join(", ")),
    );
    outcome.tables.push(table);
    Ok(outcome)
}
