use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::control::{distance_from_optimal, l1_error, ControlVector, SegmentLayout, Source, Subdivision};
use crate::localization::{section_windows, SectionPartition, WindowRule};
use crate::mesh::Edge;
use crate::model::{ForwardModel, SolveStats};
use crate::optimizer::{evaluate_cost, run, GnConfig, Method, RunOutcome};
use crate::sensitivity::{Problem, Window};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Finest,
    FinestTime,
    Adaptive,
    AdaptiveTime,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] =
        [Algorithm::Finest, Algorithm::FinestTime, Algorithm::Adaptive, Algorithm::AdaptiveTime];

    pub fn number(self) -> usize {
        match self {
            Algorithm::Finest => 1,
            Algorithm::FinestTime => 2,
            Algorithm::Adaptive => 3,
            Algorithm::AdaptiveTime => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Finest => "finest",
            Algorithm::FinestTime => "finest_time",
            Algorithm::Adaptive => "adaptive",
            Algorithm::AdaptiveTime => "adaptive_time",
        }
    }

    pub fn localized(self) -> bool {
        matches!(self, Algorithm::FinestTime | Algorithm::AdaptiveTime)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlgorithmConfig {
    pub gn: GnConfig,
    /// Refinement threshold.
    pub eps1: f64,
    /// Activity threshold.
    pub eps2: f64,
    /// Carry-over threshold between sections.
    pub eps3: f64,
    /// Maximal number of bisections per refinement pass.
    pub refine_cap: Option<usize>,
    /// Sweeps of the localized variants; the adaptive variant is capped by
    /// `gn.max_it` single Gauss-Newton steps.
    pub max_outer: usize,
    /// Adaptive iterations per section.
    pub max_inner: usize,
    /// Relative cost decrease below which a loop is considered converged.
    pub min_decrease: f64,
    /// Window rule; `None` uses the defaults for the model's time step.
    pub windows: Option<WindowRule>,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        AlgorithmConfig {
            gn: GnConfig::default(),
            eps1: 0.4,
            eps2: 0.4,
            eps3: 0.4,
            refine_cap: Some(4),
            max_outer: 10,
            max_inner: 10,
            min_decrease: 1e-3,
            windows: None,
        }
    }
}

impl AlgorithmConfig {
    pub fn validate(&self) -> Result<()> {
        self.gn.validate()?;
        if [self.eps1, self.eps2, self.eps3].iter().any(|e| !(*e > 0.0)) {
            return Err(Error::Config(format!(
                "thresholds must be positive, got {}, {}, {}",
                self.eps1, self.eps2, self.eps3
            )));
        }
        if self.max_outer == 0 || self.max_inner == 0 || !(self.min_decrease >= 0.0) {
            return Err(Error::Config("loop limits must be positive".into()));
        }
        if self.refine_cap == Some(0) {
            return Err(Error::Config("refine_cap must be positive".into()));
        }
        Ok(())
    }
}

/// What the algorithms identify: data on a coarse initial subdivision.
#[derive(Debug, Clone, Copy)]
pub struct Setup<'a> {
    pub coarse: &'a Subdivision,
    pub data: &'a DMatrix<f64>,
    pub c_up: f64,
    pub truth: Option<&'a [Source]>,
}

/// Size of one sensitivity matrix: `levels` time levels by `n_params` columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GnShape {
    pub levels: usize,
    pub n_params: usize,
    pub windowed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub algorithm: Algorithm,
    pub theta: Vec<f64>,
    #[serde(skip)]
    pub subdivision: Subdivision,
    pub top_breakpoints: Vec<f64>,
    pub bottom_breakpoints: Vec<f64>,
    pub l1: Option<(f64, f64)>,
    pub distance: Option<(i64, i64)>,
    /// Gauss-Newton iterations, sub-iterations inside sections included.
    pub iterations: usize,
    pub outer_iterations: usize,
    /// Cost over the full time horizon at the final estimate.
    pub cost: f64,
    pub forward_solves: usize,
    pub stats: SolveStats,
    pub cond_trace: Vec<f64>,
    pub shapes: Vec<GnShape>,
}

impl RunReport {
    pub fn mean_cond(&self) -> f64 {
        let v: Vec<f64> = self.cond_trace.iter().copied().filter(|c| c.is_finite()).collect();
        if v.is_empty() {
            return f64::NAN;
        }
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn max_cond(&self) -> f64 {
        self.cond_trace.iter().copied().filter(|c| c.is_finite()).fold(f64::NAN, f64::max)
    }
}

#[derive(Default)]
struct Tally {
    iterations: usize,
    cond: Vec<f64>,
    shapes: Vec<GnShape>,
}

impl Tally {
    #[allow(clippy::too_many_arguments)]
    fn gn<M: ForwardModel>(
        &mut self,
        model: &mut M,
        problem: &Problem,
        theta: &[f64],
        active: &[usize],
        window: Window,
        windowed: bool,
        cfg: &AlgorithmConfig,
        max_it: usize,
    ) -> Result<RunOutcome> {
        let gn = GnConfig { max_it, ..cfg.gn };
        let out = run(model, problem, theta, active, window, Method::Pdgn, &gn, None)?;
        for r in out.trace.iter().filter(|r| r.iteration > 0) {
            self.iterations += 1;
            self.cond.push(r.cond);
            self.shapes.push(GnShape { levels: window.len(), n_params: r.n_active, windowed });
        }
        Ok(out)
    }
}

fn problem_on<M: ForwardModel>(model: &M, sub: &Subdivision, setup: &Setup) -> Result<Problem> {
    let layout = SegmentLayout::new(model.full().mesh(), &sub.segments())?;
    Ok(Problem::new(layout, setup.c_up, setup.data.clone()))
}

fn finest_of(coarse: &Subdivision) -> Result<Subdivision> {
    let (a, b) = coarse.x_range();
    Subdivision::finest((a, b), coarse.n_fine())
}

fn windows_for<M: ForwardModel>(
    model: &M,
    partition: &SectionPartition,
    finest: &Subdivision,
    cfg: &AlgorithmConfig,
) -> Result<Vec<Window>> {
    let rule = cfg.windows.unwrap_or_else(|| WindowRule::for_step(model.grid().dt));
    section_windows(model.full(), partition, finest, rule)
}

fn converged(prev: f64, cost: f64, cfg: &AlgorithmConfig) -> bool {
    cost < cfg.gn.tol || prev - cost <= cfg.min_decrease * prev
}

fn union(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut v: Vec<usize> = a.iter().chain(b).copied().collect();
    v.sort_unstable();
    v.dedup();
    v
}

pub fn run_algorithm<M: ForwardModel>(
    algorithm: Algorithm,
    model: &mut M,
    setup: &Setup,
    cfg: &AlgorithmConfig,
) -> Result<RunReport> {
    cfg.validate()?;
    let before = model.stats();
    let mut tally = Tally::default();
    let (control, outer) = match algorithm {
        Algorithm::Finest => finest(model, setup, cfg, &mut tally)?,
        Algorithm::FinestTime => finest_time(model, setup, cfg, &mut tally)?,
        Algorithm::Adaptive => adaptive(model, setup, cfg, &mut tally)?,
        Algorithm::AdaptiveTime => adaptive_time(model, setup, cfg, &mut tally)?,
    };
    let problem = problem_on(model, &control.sub, setup)?;
    let cost = evaluate_cost(model.full(), &problem, &control.theta, Window::full(model.grid()))?;
    let stats = model.stats().since(&before);
    let segments = control.sub.segments();
    let range = control.sub.x_range();
    let l1 = setup.truth.map(|t| {
        let e = |edge| l1_error(&segments, &control.theta, t, edge, range);
        (e(Edge::Top), e(Edge::Bottom))
    });
    let distance = match setup.truth {
        Some(t) => Some(distance_from_optimal(&control.sub, setup.coarse, t)?),
        None => None,
    };
    Ok(RunReport {
        algorithm,
        top_breakpoints: control.sub.breakpoints(Edge::Top),
        bottom_breakpoints: control.sub.breakpoints(Edge::Bottom),
        theta: control.theta,
        subdivision: control.sub,
        l1,
        distance,
        iterations: tally.iterations,
        outer_iterations: outer,
        cost,
        forward_solves: stats.forward_solves(),
        stats,
        cond_trace: tally.cond,
        shapes: tally.shapes,
    })
}

fn finest<M: ForwardModel>(
    model: &mut M,
    setup: &Setup,
    cfg: &AlgorithmConfig,
    tally: &mut Tally,
) -> Result<(ControlVector, usize)> {
    let mut control = ControlVector::zeros(finest_of(setup.coarse)?);
    let problem = problem_on(model, &control.sub, setup)?;
    let active: Vec<usize> = (0..control.len()).collect();
    let window = Window::full(model.grid());
    let out = tally.gn(model, &problem, &control.theta, &active, window, false, cfg, cfg.gn.max_it)?;
    control.theta = out.theta;
    Ok((control, 1))
}

fn finest_time<M: ForwardModel>(
    model: &mut M,
    setup: &Setup,
    cfg: &AlgorithmConfig,
    tally: &mut Tally,
) -> Result<(ControlVector, usize)> {
    let mut control = ControlVector::zeros(finest_of(setup.coarse)?);
    let partition = SectionPartition::from_subdivision(&control.sub);
    let windows = windows_for(model, &partition, &control.sub, cfg)?;
    let problem = problem_on(model, &control.sub, setup)?;
    let segments = control.sub.segments();
    let full = Window::full(model.grid());
    let mut prev = evaluate_cost(model, &problem, &control.theta, full)?;
    let mut sweeps = 0;
    while sweeps < cfg.max_outer && prev >= cfg.gn.tol {
        let mut carry: Vec<usize> = Vec::new();
        for i in (0..partition.n_sections()).rev() {
            let active = union(&partition.params_in(i, &segments), &carry);
            let out = tally.gn(model, &problem, &control.theta, &active, windows[i], true, cfg, 1)?;
            control.theta = out.theta;
            carry = active.into_iter().filter(|&j| control.theta[j] > cfg.eps3).collect();
        }
        sweeps += 1;
        let cost = evaluate_cost(model, &problem, &control.theta, full)?;
        if converged(prev, cost, cfg) {
            break;
        }
        prev = cost;
    }
    Ok((control, sweeps))
}

fn adaptive<M: ForwardModel>(
    model: &mut M,
    setup: &Setup,
    cfg: &AlgorithmConfig,
    tally: &mut Tally,
) -> Result<(ControlVector, usize)> {
    let mut control = ControlVector::zeros(setup.coarse.clone());
    let mut live = vec![true; control.len()];
    let full = Window::full(model.grid());
    let mut prev: Option<f64> = None;
    let mut k = 0;
    while k < cfg.gn.max_it {
        let refinement = control.refine_by_threshold(cfg.eps1, cfg.refine_cap);
        live = refinement.parent.iter().map(|&p| live[p]).collect();
        control = refinement.control;
        let problem = problem_on(model, &control.sub, setup)?;
        let active: Vec<usize> = (0..control.len()).filter(|&j| live[j]).collect();
        let out = tally.gn(model, &problem, &control.theta, &active, full, false, cfg, 1)?;
        control.theta = out.theta;
        live = control.theta.iter().map(|&v| v > cfg.eps2).collect();
        k += 1;
        let refined = !refinement.bisected.is_empty();
        if out.cost < cfg.gn.tol || (!refined && prev.is_some_and(|p| converged(p, out.cost, cfg))) {
            break;
        }
        prev = Some(out.cost);
    }
    Ok((control, k))
}

fn adaptive_time<M: ForwardModel>(
    model: &mut M,
    setup: &Setup,
    cfg: &AlgorithmConfig,
    tally: &mut Tally,
) -> Result<(ControlVector, usize)> {
    let coarse = setup.coarse;
    if coarse.breakpoint_indices(Edge::Top) != coarse.breakpoint_indices(Edge::Bottom) {
        return Err(Error::Subdivision("sections need matching top and bottom breakpoints".into()));
    }
    let partition = SectionPartition::from_subdivision(coarse);
    let windows = windows_for(model, &partition, &finest_of(coarse)?, cfg)?;
    let mut control = ControlVector::zeros(coarse.clone());
    let full = Window::full(model.grid());
    let mut prev = evaluate_cost(model, &problem_on(model, &control.sub, setup)?, &control.theta, full)?;
    let mut sweeps = 0;
    while sweeps < cfg.max_outer && prev >= cfg.gn.tol {
        let mut carry: Vec<usize> = Vec::new();
        for i in (0..partition.n_sections()).rev() {
            let mut member = vec![false; control.len()];
            for j in union(&partition.params_in(i, &control.sub.segments()), &carry) {
                member[j] = true;
            }
            let mut live = member.clone();
            let mut last: Option<f64> = None;
            for _ in 0..cfg.max_inner {
                let problem = problem_on(model, &control.sub, setup)?;
                let active: Vec<usize> = (0..control.len()).filter(|&j| member[j] && live[j]).collect();
                let out = tally.gn(model, &problem, &control.theta, &active, windows[i], true, cfg, 1)?;
                control.theta = out.theta;
                let refinement = control.refine_within(cfg.eps1, cfg.refine_cap, |j| member[j]);
                member = refinement.parent.iter().map(|&p| member[p]).collect();
                control = refinement.control;
                live = (0..control.len()).map(|j| member[j] && control.theta[j] > cfg.eps2).collect();
                let refined = !refinement.bisected.is_empty();
                if out.cost < cfg.gn.tol
                    || (!refined && (active.is_empty() || last.is_some_and(|p| converged(p, out.cost, cfg))))
                {
                    break;
                }
                last = Some(out.cost);
            }
            carry = (0..control.len()).filter(|&j| member[j] && control.theta[j] > cfg.eps3).collect();
        }
        sweeps += 1;
        let cost = evaluate_cost(model, &problem_on(model, &control.sub, setup)?, &control.theta, full)?;
        if converged(prev, cost, cfg) {
            break;
        }
        prev = cost;
    }
    Ok((control, sweeps))
}

/// Problem dimensions entering the operation-count model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostDims {
    pub n_h: f64,
    pub n_y: f64,
    /// Time levels of the full horizon.
    pub n_levels: f64,
}

/// Operation count of a sequence of Gauss-Newton iterations: sensitivity
/// columns, the SVD of the (possibly windowed) sensitivity matrix, and one
/// full prediction per iteration.
pub fn analytic_cost(shapes: &[GnShape], dims: CostDims) -> f64 {
    let CostDims { n_h, n_y, n_levels: n } = dims;
    let solve = n_h.powi(3);
    shapes
        .iter()
        .map(|s| {
            let p = s.n_params as f64;
            let l = if s.windowed { s.levels as f64 } else { n };
            let svd_cubic = if s.windowed { 1.0 } else { 9.0 };
            p * l * solve + 4.0 * n_y * n_y * l * l * p + 8.0 * l * n_y * p * p + svd_cubic * p.powi(3) + n * solve
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostSummary {
    pub forward_solves: usize,
    pub analytic: f64,
}

pub fn count_cost(report: &RunReport, dims: CostDims) -> CostSummary {
    CostSummary { forward_solves: report.forward_solves, analytic: analytic_cost(&report.shapes, dims) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::PhysicalCoefficients;
    use crate::forward::TimeGrid;
    use crate::mesh::StructuredMesh;
    use crate::model::FullModel;

    fn model() -> FullModel {
        let mesh = StructuredMesh::new((0.0, 8.0), (0.0, 1.0), 33, 9).unwrap();
        FullModel::new(mesh, &PhysicalCoefficients::river(), TimeGrid::new(0.0, 0.6, 0.02).unwrap()).unwrap()
    }

    fn coarse() -> Subdivision {
        Subdivision::uniform((0.0, 8.0), 8, 2).unwrap()
    }

    fn data(m: &FullModel, truth: &[Source]) -> DMatrix<f64> {
        let segs: Vec<_> = truth.iter().map(|s| s.segment()).collect();
        let layout = SegmentLayout::new(m.mesh(), &segs).unwrap();
        let theta: Vec<f64> = truth.iter().map(|s| s.value).collect();
        m.predict(&layout.dirichlet_vector(&theta, 0.1), m.grid().n - 1).unwrap()
    }

    #[test]
    fn zero_data_needs_no_work() {
        let mut m = model();
        let y = data(&m, &[]);
        let coarse = coarse();
        let setup = Setup { coarse: &coarse, data: &y, c_up: 0.1, truth: Some(&[]) };
        let cfg = AlgorithmConfig::default();
        for alg in [Algorithm::Finest, Algorithm::Adaptive] {
            let r = run_algorithm(alg, &mut m, &setup, &cfg).unwrap();
            assert_eq!(r.iterations, 0, "{alg:?}");
            assert!(r.theta.iter().all(|&v| v == 0.0));
            assert!(r.cost < 1e-20);
        }
        let r = run_algorithm(Algorithm::AdaptiveTime, &mut m, &setup, &cfg);
        if let Ok(r) = r {
            assert!(r.outer_iterations <= 1 && r.iterations == 0);
        }
    }

    #[test]
    fn adaptive_recovers_a_representable_source() {
        let mut m = model();
        let truth = [Source { edge: Edge::Top, a: 4.0, b: 6.0, value: 50.0 }];
        let y = data(&m, &truth);
        let coarse = coarse();
        let setup = Setup { coarse: &coarse, data: &y, c_up: 0.1, truth: Some(&truth) };
        let r = run_algorithm(Algorithm::Adaptive, &mut m, &setup, &AlgorithmConfig::default()).unwrap();
        let (t, b) = r.l1.unwrap();
        assert!(t < 0.5 && b < 0.5, "l1 = ({t}, {b})");
        assert!(r.theta.iter().all(|&v| v >= 0.0));
        assert!(r.subdivision.refines(&coarse));
        assert!(r.forward_solves > 0 && r.cond_trace.len() == r.iterations);
    }

    #[test]
    fn finest_solves_an_aligned_source_exactly() {
        let mut m = model();
        let truth = [Source { edge: Edge::Bottom, a: 5.0, b: 6.0, value: 20.0 }];
        let y = data(&m, &truth);
        let coarse = coarse();
        let setup = Setup { coarse: &coarse, data: &y, c_up: 0.1, truth: Some(&truth) };
        let r = run_algorithm(Algorithm::Finest, &mut m, &setup, &AlgorithmConfig::default()).unwrap();
        assert!(r.cost < 1e-8, "cost {}", r.cost);
        assert_eq!(r.distance, Some((6, 4)));
    }

    #[test]
    fn analytic_cost_matches_hand_count() {
        let dims = CostDims { n_h: 10.0, n_y: 2.0, n_levels: 5.0 };
        let full = GnShape { levels: 5, n_params: 3, windowed: false };
        let expect = 3.0 * 5.0 * 1000.0 + 4.0 * 4.0 * 25.0 * 3.0 + 8.0 * 5.0 * 2.0 * 9.0 + 9.0 * 27.0 + 5000.0;
        assert_eq!(analytic_cost(&[full], dims), expect);
        let win = GnShape { levels: 2, n_params: 1, windowed: true };
        let expect = 2.0 * 1000.0 + 4.0 * 4.0 * 4.0 + 8.0 * 2.0 * 2.0 + 1.0 + 5000.0;
        assert_eq!(analytic_cost(&[win], dims), expect);
        assert_eq!(analytic_cost(&[], dims), 0.0);
    }

    #[test]
    fn rejects_bad_thresholds() {
        let cfg = AlgorithmConfig { eps1: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
