use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control::{l1_error, Source};
use crate::mesh::Edge;
use crate::model::ForwardModel;
use crate::sensitivity::{
    condition_number, diagonal_scaling, jacobian, scaled_tsvd_solve, JacobianMode, Problem, TsvdConfig, Window,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    /// Projected damped Gauss-Newton with TSVD.
    Pdgn,
    /// `(ΨᵀΨ + αI) s = Ψᵀe`
    LevenbergMarquardt { alpha: f64 },
    /// `s = Ψᵀe`, started at the Cauchy step length.
    SteepestDescent,
    /// Minimizes `‖Ψs − e‖² + α‖θ + s‖²`.
    Tikhonov { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnConfig {
    pub tol: f64,
    pub max_it: usize,
    pub jacobian: JacobianMode,
    pub tsvd: TsvdConfig,
    pub scaling: bool,
    pub damping_floor: f64,
}

impl Default for GnConfig {
    fn default() -> Self {
        GnConfig {
            tol: 1e-10,
            max_it: 20,
            jacobian: JacobianMode::default(),
            tsvd: TsvdConfig::default(),
            scaling: true,
            damping_floor: 2f64.powi(-20),
        }
    }
}

impl GnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_it == 0 || !(self.damping_floor > 0.0 && self.damping_floor <= 1.0) {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// Ground truth used to report control errors while iterating.
#[derive(Debug, Clone)]
pub struct Truth {
    pub sources: Vec<Source>,
    pub x_range: (f64, f64),
}

impl Truth {
    pub fn l1(&self, problem: &Problem, theta: &[f64]) -> (f64, f64) {
        let e = |edge| l1_error(problem.segments(), theta, &self.sources, edge, self.x_range);
        (e(Edge::Top), e(Edge::Bottom))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    MaxIterations,
    Stagnation,
    NoDirection,
    NothingActive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub l1_top: Option<f64>,
    pub l1_bottom: Option<f64>,
    pub cond: f64,
    pub rank: usize,
    pub n_active: usize,
    pub damping: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub theta: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub stop: StopReason,
    pub trace: Vec<IterationRecord>,
}

/// `(1/N_w) Σ_j ‖Π C(θ; j) − C_s(j)‖²` over the window levels.
pub fn evaluate_cost<M: ForwardModel>(model: &M, problem: &Problem, theta: &[f64], window: Window) -> Result<f64> {
    let e = problem.residual(model, theta, window)?;
    Ok(e.iter().map(|v| v * v).sum::<f64>() / window.len() as f64)
}

/// A search direction over the active parameters.
#[derive(Debug, Clone)]
pub struct Direction {
    pub step: Vec<f64>,
    pub cond: f64,
    pub rank: usize,
    /// Initial damping for the line search.
    pub alpha0: f64,
}

pub fn direction(
    method: Method,
    psi: &DMatrix<f64>,
    e: &[f64],
    theta_active: &[f64],
    weights: &[f64],
    cfg: &GnConfig,
) -> Direction {
    let n = psi.ncols();
    let psi_t_e = psi.transpose() * DVector::from_column_slice(e);
    let normal = |alpha: f64, rhs: DVector<f64>| -> (Vec<f64>, f64) {
        let a = psi.transpose() * psi + DMatrix::identity(n, n) * alpha;
        let s = a.clone().lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(n));
        (s.iter().copied().collect(), singular_cond(psi))
    };
    match method {
        Method::Pdgn => {
            let d = if cfg.scaling { weights.to_vec() } else { vec![1.0; n] };
            let st = scaled_tsvd_solve(psi, e, &d, cfg.tsvd);
            Direction { cond: st.condition_number(), rank: st.rank, step: st.step, alpha0: 1.0 }
        }
        Method::LevenbergMarquardt { alpha } => {
            let (step, cond) = normal(alpha, psi_t_e);
            Direction { rank: n, step, cond, alpha0: 1.0 }
        }
        Method::Tikhonov { alpha } => {
            let rhs = psi_t_e - DVector::from_column_slice(theta_active) * alpha;
            let (step, cond) = normal(alpha, rhs);
            Direction { rank: n, step, cond, alpha0: 1.0 }
        }
        Method::SteepestDescent => {
            let pg = psi * &psi_t_e;
            let denom = pg.norm_squared();
            let alpha0 = if denom > 0.0 { psi_t_e.norm_squared() / denom } else { 0.0 };
            Direction {
                step: psi_t_e.iter().copied().collect(),
                cond: singular_cond(psi),
                rank: n,
                alpha0,
            }
        }
    }
}

fn singular_cond(psi: &DMatrix<f64>) -> f64 {
    if psi.ncols() == 0 {
        return f64::NAN;
    }
    condition_number(psi.singular_values().as_slice())
}

/// Projected, damped update `max(0, θ + α s)` on the active entries.
pub fn project_step(theta: &[f64], active: &[usize], step: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = theta.to_vec();
    for (&i, &s) in active.iter().zip(step) {
        out[i] = (theta[i] + alpha * s).max(0.0);
    }
    out
}

/// Runs `max_it` iterations of `method` on the active parameters within
/// `window`. Inactive entries of `theta0` are held fixed.
#[allow(clippy::too_many_arguments)]
pub fn run<M: ForwardModel>(
    model: &mut M,
    problem: &Problem,
    theta0: &[f64],
    active: &[usize],
    window: Window,
    method: Method,
    cfg: &GnConfig,
    truth: Option<&Truth>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut theta = theta0.to_vec();
    if theta.len() != problem.n_params() || active.iter().any(|&i| i >= theta.len()) {
        return Err(Error::Dimension(format!("{} values for {} parameters", theta.len(), problem.n_params())));
    }
    let mut trace = Vec::new();
    let record = |it: usize, cost: f64, theta: &[f64], cond: f64, rank: usize, damping: f64| {
        let (t, b) = truth.map(|t| t.l1(problem, theta)).unzip();
        IterationRecord { iteration: it, cost, l1_top: t, l1_bottom: b, cond, rank, n_active: active.len(), damping }
    };
    let meas = problem.measurements(window)?;
    let n_levels = window.len() as f64;

    let mut cost;
    let mut it = 0;
    let mut cached: Option<Vec<f64>> = None;
    let stop = loop {
        let changed = model.prepare(&problem.boundary_data(&excitation(&theta, active)))?;
        let base = match cached.take() {
            Some(p) if !changed => p,
            _ => problem.predict(model, &theta, window)?,
        };
        let e: Vec<f64> = meas.iter().zip(&base).map(|(m, p)| m - p).collect();
        cost = e.iter().map(|v| v * v).sum::<f64>() / n_levels;
        if it == 0 {
            trace.push(record(0, cost, &theta, f64::NAN, 0, 0.0));
        }
        if cost < cfg.tol {
            break StopReason::Tolerance;
        }
        if active.is_empty() {
            break StopReason::NothingActive;
        }
        if it >= cfg.max_it {
            break StopReason::MaxIterations;
        }
        let psi = jacobian(model, problem, &theta, active, cfg.jacobian, window, Some(&base))?;
        let weights = diagonal_scaling(problem.segments(), active);
        let theta_active: Vec<f64> = active.iter().map(|&i| theta[i]).collect();
        let dir = direction(method, &psi, &e, &theta_active, &weights, cfg);
        if dir.rank == 0 || dir.step.iter().all(|&s| s == 0.0) {
            break StopReason::NoDirection;
        }
        let mut alpha = dir.alpha0;
        let mut accepted = None;
        while alpha >= cfg.damping_floor * dir.alpha0 && alpha > 0.0 {
            let cand = project_step(&theta, active, &dir.step, alpha);
            if linearized_cost(&psi, &e, &theta, &cand, active) / n_levels >= cost {
                alpha *= 0.5;
                continue;
            }
            let pred = problem.predict(model, &cand, window)?;
            let c = meas.iter().zip(&pred).map(|(m, p)| (m - p) * (m - p)).sum::<f64>() / n_levels;
            if c < cost {
                accepted = Some((cand, c, pred));
                break;
            }
            alpha *= 0.5;
        }
        it += 1;
        match accepted {
            Some((cand, c, pred)) => {
                theta = cand;
                cost = c;
                cached = Some(pred);
                trace.push(record(it, cost, &theta, dir.cond, dir.rank, alpha));
            }
            None => {
                trace.push(record(it, cost, &theta, dir.cond, dir.rank, 0.0));
                break StopReason::Stagnation;
            }
        }
    };
    let iterations = trace.iter().filter(|r| r.iteration > 0 && r.damping > 0.0).count();
    Ok(RunOutcome { theta, cost, iterations, stop, trace })
}

/// `‖e − Ψ (cand − θ)‖²` on the active entries: the Gauss-Newton model of
/// the cost at a trial point. Trial points the model does not expect to
/// improve are skipped without a forward solve.
fn linearized_cost(psi: &DMatrix<f64>, e: &[f64], theta: &[f64], cand: &[f64], active: &[usize]) -> f64 {
    let ds = DVector::from_iterator(active.len(), active.iter().map(|&i| cand[i] - theta[i]));
    let r = DVector::from_column_slice(e) - psi * ds;
    r.norm_squared()
}

/// Boundary data used to refresh a reduced model: the current iterate, or
/// unit values on the active set while the iterate is still zero.
fn excitation(theta: &[f64], active: &[usize]) -> Vec<f64> {
    if theta.iter().any(|&v| v != 0.0) {
        return theta.to_vec();
    }
    let mut t = theta.to_vec();
    for &i in active {
        t[i] = 1.0;
    }
    t
}

/// Costs along the coordinate homotopy from `start` to `target`, replacing
/// one coordinate at a time.
pub fn homotopy_costs<M: ForwardModel>(
    model: &M,
    problem: &Problem,
    start: &[f64],
    target: &[f64],
    window: Window,
) -> Result<Vec<f64>> {
    let mut t = start.to_vec();
    let mut out = vec![evaluate_cost(model, problem, &t, window)?];
    for j in 0..t.len() {
        t[j] = target[j];
        out.push(evaluate_cost(model, problem, &t, window)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::control::{Segment, SegmentLayout};
    use crate::fem::PhysicalCoefficients;
    use crate::forward::TimeGrid;
    use crate::mesh::StructuredMesh;
    use crate::model::FullModel;

    fn setup(truth: &[f64]) -> (FullModel, Problem) {
        let mesh = StructuredMesh::new((0.0, 8.0), (0.0, 1.0), 33, 9).unwrap();
        let model =
            FullModel::new(mesh, &PhysicalCoefficients::river(), TimeGrid::new(0.0, 1.0, 0.05).unwrap()).unwrap();
        let segs = [Segment::new(Edge::Top, 4.5, 5.0), Segment::new(Edge::Bottom, 1.5, 2.0)];
        let layout = SegmentLayout::new(model.mesh(), &segs).unwrap();
        let y = model.predict(&layout.dirichlet_vector(truth, 0.1), 20).unwrap();
        (model, Problem::new(layout, 0.1, y))
    }

    #[test]
    fn pdgn_recovers_known_location_in_one_step() {
        let (mut m, p) = setup(&[100.0, 80.0]);
        let w = Window::full(m.grid());
        let out = run(&mut m, &p, &[0.0, 0.0], &[0, 1], w, Method::Pdgn, &GnConfig::default(), None).unwrap();
        assert_eq!(out.stop, StopReason::Tolerance);
        assert!(out.iterations <= 2);
        assert!((out.theta[0] - 100.0).abs() < 1e-6 && (out.theta[1] - 80.0).abs() < 1e-6);
        assert!(out.trace.windows(2).all(|w| w[1].cost <= w[0].cost));
    }

    #[test]
    fn zero_truth_converges_immediately() {
        let (mut m, p) = setup(&[0.0, 0.0]);
        let w = Window::full(m.grid());
        let out = run(&mut m, &p, &[0.0, 0.0], &[0, 1], w, Method::Pdgn, &GnConfig::default(), None).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.stop, StopReason::Tolerance);
    }

    #[test]
    fn projection_clips_negative_entries() {
        assert_eq!(project_step(&[1.0, 2.0, 3.0], &[0, 2], &[-5.0, 1.0], 1.0), vec![0.0, 2.0, 4.0]);
        assert_eq!(project_step(&[1.0, 2.0], &[0, 1], &[0.0, 0.0], 0.5), vec![1.0, 2.0]);
    }

    #[test]
    fn lm_with_vanishing_alpha_matches_gn() {
        let psi = DMatrix::from_row_slice(4, 2, &[1.0, 0.2, 0.3, 2.0, 0.5, 0.1, 0.0, 1.0]);
        let e = [1.0, 2.0, 0.5, -1.0];
        let cfg = GnConfig { scaling: false, ..GnConfig::default() };
        let gn = direction(Method::Pdgn, &psi, &e, &[0.0, 0.0], &[1.0, 1.0], &cfg);
        let lm = direction(Method::LevenbergMarquardt { alpha: 1e-12 }, &psi, &e, &[0.0, 0.0], &[1.0, 1.0], &cfg);
        for (a, b) in gn.step.iter().zip(&lm.step) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn uniform_scaling_is_neutral() {
        let psi = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 0.2, 1.0, 0.3, 0.3]);
        let e = [1.0, 0.0, 2.0];
        let on = direction(Method::Pdgn, &psi, &e, &[0.0; 2], &[1.0, 1.0], &GnConfig::default());
        let off = direction(Method::Pdgn, &psi, &e, &[0.0; 2], &[1.0, 1.0], &GnConfig { scaling: false, ..GnConfig::default() });
        assert_eq!(on.step, off.step);
    }

    #[test]
    fn comparison_methods_decrease_cost() {
        let (mut m, p) = setup(&[100.0, 80.0]);
        let w = Window::full(m.grid());
        let cfg = GnConfig::default();
        let gn = run(&mut m, &p, &[0.0, 0.0], &[0, 1], w, Method::Pdgn, &cfg, None).unwrap();
        for method in [Method::LevenbergMarquardt { alpha: 0.01 }, Method::SteepestDescent] {
            let out = run(&mut m, &p, &[0.0, 0.0], &[0, 1], w, method, &cfg, None).unwrap();
            assert!(out.trace.windows(2).all(|w| w[1].cost <= w[0].cost), "{method:?}");
            assert!(out.cost < out.trace[0].cost * 1e-2, "{method:?}");
            assert!(out.iterations >= gn.iterations, "{method:?}");
        }
    }

    #[test]
    fn tikhonov_settles_at_regularized_solution() {
        let (mut m, p) = setup(&[100.0, 80.0]);
        let w = Window::full(m.grid());
        let alpha = 0.01;
        let out = run(&mut m, &p, &[0.0, 0.0], &[0, 1], w, Method::Tikhonov { alpha }, &GnConfig::default(), None).unwrap();
        let psi = jacobian(&m, &p, &[0.0, 0.0], &[0, 1], JacobianMode::default(), w, None).unwrap();
        let e0 = DVector::from_vec(p.residual(&m, &[0.0, 0.0], w).unwrap());
        let oracle = (psi.transpose() * &psi + DMatrix::identity(2, 2) * alpha).lu().solve(&(psi.transpose() * e0)).unwrap();
        for i in 0..2 {
            assert!((out.theta[i] - oracle[i]).abs() < 1e-3 * oracle[i], "{:?} vs {oracle}", out.theta);
        }
    }

    #[test]
    fn homotopy_costs_decrease() {
        let (m, p) = setup(&[100.0, 80.0]);
        let c = homotopy_costs(&m, &p, &[20.0, 10.0], &[100.0, 80.0], Window::full(m.grid())).unwrap();
        assert!(c.windows(2).all(|w| w[1] < w[0]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn iterates_stay_nonnegative_with_nonincreasing_cost(
            truth in (0.0f64..100.0, 0.0f64..100.0),
            start in (0.0f64..150.0, 0.0f64..150.0),
            which in 0usize..3,
        ) {
            let (mut m, p) = setup(&[truth.0, truth.1]);
            let w = Window::full(m.grid());
            let method = [Method::Pdgn, Method::LevenbergMarquardt { alpha: 0.01 }, Method::SteepestDescent][which];
            let cfg = GnConfig { max_it: 8, ..GnConfig::default() };
            let out = run(&mut m, &p, &[start.0, start.1], &[0, 1], w, method, &cfg, None).unwrap();
            prop_assert!(out.theta.iter().all(|&v| v >= 0.0));
            prop_assert!(out.trace.windows(2).all(|w| w[1].cost <= w[0].cost));
        }
    }
}
