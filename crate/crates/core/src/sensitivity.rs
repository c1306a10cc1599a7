use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{Segment, SegmentLayout};
use crate::forward::TimeGrid;
use crate::model::ForwardModel;
use crate::{Error, Field, Result};

/// Inclusive range of observed time levels. Level 0 carries the initial
/// state and is never observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn full(grid: &TimeGrid) -> Self {
        Window { start: 1, end: grid.n - 1 }
    }

    pub fn new(grid: &TimeGrid, start: usize, end: usize) -> Result<Self> {
        if start == 0 || start > end || end >= grid.n {
            return Err(Error::Window(format!("levels {start}..={end} outside 1..={}", grid.n - 1)));
        }
        Ok(Window { start, end })
    }

    /// Levels whose times fall in `[t0, t1]`.
    pub fn from_times(grid: &TimeGrid, t0: f64, t1: f64) -> Result<Self> {
        if t0 < grid.t0 - 1e-12 || t1 > grid.tf + 1e-12 || t1 < t0 {
            return Err(Error::Window(format!("[{t0}, {t1}] is not inside [{}, {}]", grid.t0, grid.tf)));
        }
        let start = ((t0 - grid.t0) / grid.dt - 1e-9).ceil().max(1.0) as usize;
        let end = grid.index_at(t1);
        Self::new(grid, start, end)
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// An identification problem: parameter layout on the mesh plus the
/// measured outflow data (`n_y × N`).
#[derive(Debug, Clone)]
pub struct Problem {
    pub layout: SegmentLayout,
    pub c_up: f64,
    pub data: DMatrix<f64>,
}

impl Problem {
    pub fn new(layout: SegmentLayout, c_up: f64, data: DMatrix<f64>) -> Self {
        Problem { layout, c_up, data }
    }

    pub fn n_params(&self) -> usize {
        self.layout.len()
    }

    pub fn segments(&self) -> &[Segment] {
        self.layout.segments()
    }

    pub fn boundary_data<T: Field>(&self, theta: &[T]) -> Vec<T> {
        self.layout.dirichlet_vector(theta, T::from_real(self.c_up))
    }

    /// Stacked predictions `ℛ(Π C(θ))` over `window`, time-major.
    pub fn predict<M: ForwardModel, T: Field>(&self, model: &M, theta: &[T], window: Window) -> Result<Vec<T>> {
        let y = model.predict(&self.boundary_data(theta), window.end)?;
        Ok(stack(&y, window))
    }

    pub fn measurements(&self, window: Window) -> Result<Vec<f64>> {
        if window.end >= self.data.ncols() {
            return Err(Error::Window(format!("measurements stop at level {}", self.data.ncols() - 1)));
        }
        Ok(stack(&self.data, window))
    }

    /// Prediction error `e = ℛ(C_s) − ℛ(Π C(θ))`.
    pub fn residual<M: ForwardModel>(&self, model: &M, theta: &[f64], window: Window) -> Result<Vec<f64>> {
        let meas = self.measurements(window)?;
        let pred = self.predict(model, theta, window)?;
        Ok(meas.iter().zip(&pred).map(|(m, p)| m - p).collect())
    }
}

/// Columns `window.start..=window.end` of `y`, concatenated.
pub fn stack<T: Field>(y: &DMatrix<T>, window: Window) -> Vec<T> {
    y.columns(window.start, window.len()).iter().copied().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum JacobianMode {
    FiniteDifference { delta: f64 },
    ComplexStep { delta: f64 },
}

impl Default for JacobianMode {
    fn default() -> Self {
        JacobianMode::FiniteDifference { delta: 1e-3 }
    }
}

pub fn jacobian_fd<M: ForwardModel>(
    model: &M,
    problem: &Problem,
    theta: &[f64],
    active: &[usize],
    delta: f64,
    window: Window,
    base: Option<&[f64]>,
) -> Result<DMatrix<f64>> {
    if !(delta > 0.0) {
        return Err(Error::Config(format!("perturbation must be positive, got {delta}")));
    }
    let owned;
    let base = match base {
        Some(b) => b,
        None => {
            owned = problem.predict(model, theta, window)?;
            &owned
        }
    };
    let cols: Vec<Vec<f64>> = active
        .par_iter()
        .map(|&j| {
            let mut t = theta.to_vec();
            t[j] += delta;
            let p = problem.predict(model, &t, window)?;
            Ok(p.iter().zip(base).map(|(a, b)| (a - b) / delta).collect())
        })
        .collect::<Result<_>>()?;
    Ok(assemble_columns(base.len(), &cols))
}

pub fn jacobian_cs<M: ForwardModel>(
    model: &M,
    problem: &Problem,
    theta: &[f64],
    active: &[usize],
    delta: f64,
    window: Window,
) -> Result<DMatrix<f64>> {
    if !(delta > 0.0) {
        return Err(Error::Config(format!("perturbation must be positive, got {delta}")));
    }
    let rows = model.n_obs() * window.len();
    let cols: Vec<Vec<f64>> = active
        .par_iter()
        .map(|&j| {
            let mut t: Vec<Complex64> = theta.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            t[j].im = delta;
            let p = problem.predict(model, &t, window)?;
            Ok(p.iter().map(|z| z.im / delta).collect())
        })
        .collect::<Result<_>>()?;
    Ok(assemble_columns(rows, &cols))
}

pub fn jacobian<M: ForwardModel>(
    model: &M,
    problem: &Problem,
    theta: &[f64],
    active: &[usize],
    mode: JacobianMode,
    window: Window,
    base: Option<&[f64]>,
) -> Result<DMatrix<f64>> {
    match mode {
        JacobianMode::FiniteDifference { delta } => jacobian_fd(model, problem, theta, active, delta, window, base),
        JacobianMode::ComplexStep { delta } => jacobian_cs(model, problem, theta, active, delta, window),
    }
}

fn assemble_columns(rows: usize, cols: &[Vec<f64>]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols.len());
    for (j, c) in cols.iter().enumerate() {
        m.column_mut(j).copy_from_slice(c);
    }
    m
}

/// Column weights `d_i = max length / length_i` over the active segments.
pub fn diagonal_scaling(segments: &[Segment], active: &[usize]) -> Vec<f64> {
    let longest = active.iter().map(|&i| segments[i].len()).fold(0.0, f64::max);
    active.iter().map(|&i| longest / segments[i].len()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsvdConfig {
    /// Triplets with `σ_i < rel_tol σ_1` are dropped.
    pub rel_tol: f64,
    /// Optional absolute floor on kept singular values.
    pub abs_tol: Option<f64>,
}

impl Default for TsvdConfig {
    fn default() -> Self {
        TsvdConfig { rel_tol: 1e-6, abs_tol: None }
    }
}

#[derive(Debug, Clone)]
pub struct TsvdStep {
    pub step: Vec<f64>,
    pub rank: usize,
    pub singular_values: Vec<f64>,
}

impl TsvdStep {
    /// `σ_max / σ_min` of the full spectrum; infinite for a rank-deficient matrix.
    pub fn condition_number(&self) -> f64 {
        condition_number(&self.singular_values)
    }

    pub fn identifiable(&self) -> bool {
        self.rank > 0
    }
}

pub fn condition_number(s: &[f64]) -> f64 {
    let max = s.iter().copied().fold(0.0, f64::max);
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Minimum-norm least-squares solution of `psi s = e` over the retained
/// singular triplets.
pub fn tsvd_solve(psi: &DMatrix<f64>, e: &[f64], cfg: TsvdConfig) -> TsvdStep {
    let n = psi.ncols();
    if n == 0 || psi.nrows() == 0 {
        return TsvdStep { step: vec![0.0; n], rank: 0, singular_values: Vec::new() };
    }
    let svd = psi.clone().svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let s = svd.singular_values;
    let s1 = s.iter().copied().fold(0.0, f64::max);
    let cut = (s1 * cfg.rel_tol.max(1e-8)).max(cfg.abs_tol.unwrap_or(0.0));
    let e = DVector::from_column_slice(e);
    let mut step = DVector::zeros(n);
    let mut rank = 0;
    for i in 0..s.len() {
        if s[i] > 0.0 && s[i] >= cut {
            let coef = u.column(i).dot(&e) / s[i];
            step += vt.row(i).transpose() * coef;
            rank += 1;
        }
    }
    let mut sv: Vec<f64> = s.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    TsvdStep { step: step.iter().copied().collect(), rank, singular_values: sv }
}

/// Solves `psi D s̃ = e` by TSVD and returns `s = D s̃`.
pub fn scaled_tsvd_solve(psi: &DMatrix<f64>, e: &[f64], d: &[f64], cfg: TsvdConfig) -> TsvdStep {
    let mut scaled = psi.clone();
    for (j, &dj) in d.iter().enumerate() {
        scaled.column_mut(j).scale_mut(dj);
    }
    let mut out = tsvd_solve(&scaled, e, cfg);
    for (s, &dj) in out.step.iter_mut().zip(d) {
        *s *= dj;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::PhysicalCoefficients;
    use crate::mesh::{Edge, StructuredMesh};
    use crate::model::FullModel;

    fn setup() -> (FullModel, Problem) {
        let mesh = StructuredMesh::new((0.0, 8.0), (0.0, 1.0), 33, 9).unwrap();
        let model =
            FullModel::new(mesh, &PhysicalCoefficients::river(), TimeGrid::new(0.0, 1.0, 0.05).unwrap()).unwrap();
        let segs = [Segment::new(Edge::Top, 4.5, 5.0), Segment::new(Edge::Bottom, 1.5, 2.0)];
        let layout = SegmentLayout::new(model.mesh(), &segs).unwrap();
        let y = model.predict(&layout.dirichlet_vector(&[100.0, 80.0], 0.1), 20).unwrap();
        (model, Problem::new(layout, 0.1, y))
    }

    #[test]
    fn windows() {
        let g = TimeGrid::new(0.0, 1.0, 0.05).unwrap();
        assert_eq!(Window::full(&g), Window { start: 1, end: 20 });
        assert_eq!(Window::from_times(&g, 0.2, 0.5).unwrap(), Window { start: 4, end: 10 });
        assert!(Window::from_times(&g, 0.5, 1.5).is_err());
        assert!(Window::new(&g, 0, 3).is_err());
    }

    #[test]
    fn residual_vanishes_at_truth_and_is_time_major() {
        let (m, p) = setup();
        let w = Window::full(m.grid());
        let e = p.residual(&m, &[100.0, 80.0], w).unwrap();
        assert_eq!(e.len(), 9 * 20);
        assert!(e.iter().all(|v| v.abs() <= 1e-8));
        let e0 = p.residual(&m, &[0.0, 0.0], w).unwrap();
        assert!(e0[e0.len() - 9..].iter().all(|&v| v >= 0.0));
        assert_eq!(e0[9], p.data[(0, 2)] - m.predict(&p.boundary_data(&[0.0, 0.0]), 2).unwrap()[(0, 2)]);

        let a = Window::new(m.grid(), 1, 7).unwrap();
        let b = Window::new(m.grid(), 8, 20).unwrap();
        let mut joined = p.residual(&m, &[3.0, 1.0], a).unwrap();
        joined.extend(p.residual(&m, &[3.0, 1.0], b).unwrap());
        assert_eq!(joined, p.residual(&m, &[3.0, 1.0], w).unwrap());
    }

    #[test]
    fn jacobians_agree_with_superposition() {
        let (m, p) = setup();
        let w = Window::full(m.grid());
        let fd = jacobian_fd(&m, &p, &[10.0, 5.0], &[0, 1], 1e-3, w, None).unwrap();
        let fd_big = jacobian_fd(&m, &p, &[0.0, 0.0], &[0, 1], 1.0, w, None).unwrap();
        let cs = jacobian_cs(&m, &p, &[10.0, 5.0], &[0, 1], 1e-8, w).unwrap();
        let cs_tiny = jacobian_cs(&m, &p, &[10.0, 5.0], &[0, 1], 1e-20, w).unwrap();
        let base = p.predict(&m, &[0.0, 0.0], w).unwrap();
        let unit = p.predict(&m, &[1.0, 0.0], w).unwrap();
        let oracle: Vec<f64> = unit.iter().zip(&base).map(|(a, b)| a - b).collect();
        let scale = cs.abs().max();
        assert!((&fd - &cs).abs().max() <= 1e-6 * scale);
        assert!((&fd - &fd_big).abs().max() <= 1e-9 * scale);
        assert!((&cs - &cs_tiny).abs().max() <= 1e-10 * scale);
        for (a, b) in cs.column(0).iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-8 * scale);
        }
        assert_eq!(jacobian_fd(&m, &p, &[0.0, 0.0], &[1], 1e-3, w, None).unwrap().ncols(), 1);
    }

    #[test]
    fn scaling_weights() {
        let s = |a, b| Segment::new(Edge::Top, a, b);
        assert_eq!(diagonal_scaling(&[s(0.0, 2.0), s(2.0, 3.0), s(3.0, 3.5)], &[0, 1, 2]), vec![1.0, 2.0, 4.0]);
        assert_eq!(diagonal_scaling(&[s(0.0, 1.0), s(1.0, 2.0)], &[0, 1]), vec![1.0, 1.0]);
        assert_eq!(diagonal_scaling(&[s(0.0, 2.0), s(2.0, 3.0)], &[1]), vec![1.0]);
    }

    #[test]
    fn tsvd_cases() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
        let x = [1.0, -2.0, 0.5];
        let b: Vec<f64> = (&a * DVector::from_column_slice(&x)).iter().copied().collect();
        let s = tsvd_solve(&a, &b, TsvdConfig::default());
        assert_eq!(s.rank, 3);
        for i in 0..3 {
            assert!((s.step[i] - x[i]).abs() < 1e-10);
        }
        let dup = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 0.5, 0.5]);
        let e = [2.0, 4.0, 1.0];
        let s = tsvd_solve(&dup, &e, TsvdConfig::default());
        assert_eq!(s.rank, 1);
        assert!((s.step[0] - 1.0).abs() < 1e-12 && (s.step[1] - 1.0).abs() < 1e-12);
        assert!(s.condition_number().is_infinite() || s.condition_number() > 1e12);
        let zero = tsvd_solve(&a, &[0.0; 3], TsvdConfig::default());
        assert!(zero.step.iter().all(|&v| v == 0.0));
        let none = tsvd_solve(&DMatrix::zeros(3, 2), &e, TsvdConfig::default());
        assert!(!none.identifiable() && none.step == vec![0.0, 0.0]);
    }
}
