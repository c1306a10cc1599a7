use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::forward::TimeGrid;
use crate::model::{Counters, ForwardModel, FullModel, SolveStats};
use crate::{Error, Field, Result};

/// Full states sampled every `dtau` on `[t0, t_m]`.
#[derive(Debug, Clone)]
pub struct SnapshotMatrix {
    pub columns: DMatrix<f64>,
    pub dtau: f64,
    pub t_m: f64,
}

/// Collects snapshots of the unreduced model driven by boundary data `g`.
/// `dtau` must be a whole multiple of the model time step.
pub fn collect_snapshots(model: &FullModel, g: &[f64], t_m: f64, dtau: f64) -> Result<SnapshotMatrix> {
    let grid = model.grid();
    if !(t_m > grid.t0) || t_m >= grid.tf {
        return Err(Error::Snapshots(format!("t_m = {t_m} must lie inside ({}, {})", grid.t0, grid.tf)));
    }
    let stride = (dtau / grid.dt).round();
    if stride < 1.0 || (stride * grid.dt - dtau).abs() > 1e-9 * dtau {
        return Err(Error::Snapshots(format!("dtau = {dtau} is not a multiple of dt = {}", grid.dt)));
    }
    let stride = stride as usize;
    let span = (t_m - grid.t0) / (stride as f64 * grid.dt);
    let n_bar = span.round();
    if (span - n_bar).abs() > 1e-9 * span.max(1.0) {
        return Err(Error::Snapshots(format!("dtau = {dtau} does not divide t_m = {t_m}")));
    }
    let n_bar = n_bar as usize;
    let states = model.states(g, n_bar * stride)?;
    let columns = DMatrix::from_fn(states.nrows(), n_bar + 1, |r, c| states[(r, c * stride)]);
    Ok(SnapshotMatrix { columns, dtau, t_m })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum Truncation {
    /// Smallest `k` whose captured energy fraction reaches `tol`.
    EnergyRatio { tol: f64 },
    /// Number of singular values above `tau`.
    SingularFloor { tau: f64 },
}

#[derive(Debug, Clone)]
pub struct PodBasis {
    pub modes: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub k: usize,
}

impl PodBasis {
    pub fn truncate(snapshots: &SnapshotMatrix, rule: Truncation) -> Result<Self> {
        let svd = snapshots.columns.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let s: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
        let k = truncation_rank(&s, rule)?;
        let modes = DMatrix::from_fn(u.nrows(), k, |r, c| u[(r, order[c])]);
        Ok(PodBasis { modes, singular_values: s, k })
    }

    /// Wraps an orthonormal basis supplied by the caller.
    pub fn from_modes(modes: DMatrix<f64>) -> Self {
        let k = modes.ncols();
        PodBasis { modes, singular_values: Vec::new(), k }
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    /// `Σ_j ‖x_j − U Uᵀ x_j‖²` over the columns of `x`.
    pub fn projection_error(&self, x: &DMatrix<f64>) -> f64 {
        let proj = &self.modes * (self.modes.transpose() * x);
        (x - proj).norm_squared()
    }
}

pub fn truncation_rank(s: &[f64], rule: Truncation) -> Result<usize> {
    let s1 = s.first().copied().unwrap_or(0.0);
    if !(s1 > 0.0) {
        return Err(Error::Snapshots("snapshot matrix is zero, no basis can be built".into()));
    }
    let numerical = s.iter().filter(|&&v| v > s1 * 1e-13 * s.len() as f64).count();
    let k = match rule {
        Truncation::SingularFloor { tau } => s.iter().filter(|&&v| v > tau).count(),
        Truncation::EnergyRatio { tol } => {
            let total: f64 = s.iter().map(|v| v * v).sum();
            let allowed = (1.0 - tol).max(0.0) * total;
            let mut k = s.len();
            for i in 0..s.len() {
                let tail: f64 = s[i + 1..].iter().map(|v| v * v).sum();
                if tail <= allowed {
                    k = i + 1;
                    break;
                }
            }
            k.min(numerical)
        }
    };
    if k == 0 {
        return Err(Error::Snapshots(format!("truncation {rule:?} keeps no mode")));
    }
    Ok(k)
}

/// Galerkin projection of the implicit Euler step onto a POD basis.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    basis: PodBasis,
    pub reduced_mass: DMatrix<f64>,
    pub reduced_operator: DMatrix<f64>,
    /// `L⁻¹ M_r`, with `L = M_r + dt A_r`.
    propagator: DMatrix<f64>,
    /// `L⁻¹ Uᵀ`
    input: DMatrix<f64>,
    /// Rows of the modes at the observation nodes.
    observed: DMatrix<f64>,
}

impl ReducedSystem {
    pub fn new(model: &FullModel, basis: PodBasis) -> Result<Self> {
        let sys = model.system();
        let u = &basis.modes;
        let reduced_mass = sys.mass_free().congruence(u);
        let reduced_operator = sys.operator_free().congruence(u);
        let lhs = &reduced_mass + &reduced_operator * model.grid().dt;
        let lu = lhs.lu();
        let inv = lu.try_inverse().ok_or(Error::Singular(0))?;
        let propagator = &inv * &reduced_mass;
        let input = &inv * u.transpose();
        let nodes = model.observation().nodes();
        let observed = DMatrix::from_fn(nodes.len(), basis.k, |r, c| u[(nodes[r], c)]);
        Ok(ReducedSystem { basis, reduced_mass, reduced_operator, propagator, input, observed })
    }

    pub fn basis(&self) -> &PodBasis {
        &self.basis
    }

    fn forcing<T: Field>(&self, model: &FullModel, g: &[T]) -> Vec<T> {
        let dt = T::from_real(model.grid().dt);
        let f: Vec<T> = model.system().lift(g).into_iter().map(|v| v * dt).collect();
        real_matvec(&self.input, &f)
    }

    /// Reduced coefficients at levels `start..=last`, starting from `a0`.
    pub fn coefficients<T: Field>(&self, model: &FullModel, g: &[T], a0: &[T], start: usize, last: usize) -> DMatrix<T> {
        let b = self.forcing(model, g);
        let mut a = a0.to_vec();
        let mut out = DMatrix::zeros(self.basis.k, last - start + 1);
        out.column_mut(0).copy_from_slice(&a);
        for j in 1..=last - start {
            let mut next = real_matvec(&self.propagator, &a);
            for (n, &bi) in next.iter_mut().zip(&b) {
                *n += bi;
            }
            a = next;
            out.column_mut(j).copy_from_slice(&a);
        }
        out
    }

    /// Lifted estimate `U a` at levels `start..=last`.
    pub fn solve_from<T: Field>(&self, model: &FullModel, g: &[T], a0: &[T], start: usize, last: usize) -> DMatrix<T> {
        let a = self.coefficients(model, g, a0, start, last);
        let u = self.basis.modes.map(T::from_real);
        u * a
    }

    pub fn project<T: Field>(&self, state: &[T]) -> Vec<T> {
        real_matvec(&self.basis.modes.transpose(), state)
    }
}

fn real_matvec<T: Field>(a: &DMatrix<f64>, x: &[T]) -> Vec<T> {
    let mut y = vec![T::zero(); a.nrows()];
    for (c, &xc) in x.iter().enumerate() {
        if xc == T::zero() {
            continue;
        }
        for (r, yr) in y.iter_mut().enumerate() {
            *yr += xc * T::from_real(a[(r, c)]);
        }
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PodConfig {
    pub t_m: f64,
    pub dtau: Option<f64>,
    pub truncation: Truncation,
    pub n_bar: usize,
    pub staleness_threshold: f64,
}

impl Default for PodConfig {
    fn default() -> Self {
        PodConfig {
            t_m: 5.0,
            dtau: None,
            truncation: Truncation::SingularFloor { tau: 0.01 },
            n_bar: 5,
            staleness_threshold: 0.1,
        }
    }
}

/// `(1/n̄) ‖Σ_{j=1}^{n̄} (C̃_j − C_j)‖²` for the data `g`.
pub fn staleness_index(model: &FullModel, reduced: &ReducedSystem, g: &[f64], n_bar: usize) -> Result<f64> {
    let n_bar = n_bar.clamp(1, model.grid().n - 1);
    let full = model.states(g, n_bar)?;
    let a0 = reduced.project(model.initial_state());
    let approx = reduced.solve_from(model, g, &a0, 0, n_bar);
    model.counters().reduced(n_bar);
    let mut sum = DVector::zeros(full.nrows());
    for j in 1..=n_bar {
        sum += approx.column(j) - full.column(j);
    }
    Ok(sum.norm_squared() / n_bar as f64)
}

/// Forward model whose predictions come from a POD-reduced system that is
/// rebuilt whenever the staleness index of the current iterate exceeds the
/// configured threshold.
#[derive(Debug)]
pub struct PodModel {
    full: FullModel,
    config: PodConfig,
    reduced: Option<ReducedSystem>,
    last_staleness: Option<f64>,
}

impl PodModel {
    pub fn new(full: FullModel, config: PodConfig) -> Result<Self> {
        if config.n_bar == 0 || !(config.staleness_threshold >= 0.0) {
            return Err(Error::Config(format!("invalid reduction settings {config:?}")));
        }
        Ok(PodModel { full, config, reduced: None, last_staleness: None })
    }

    pub fn reduced(&self) -> Option<&ReducedSystem> {
        self.reduced.as_ref()
    }

    pub fn dim(&self) -> Option<usize> {
        self.reduced.as_ref().map(|r| r.basis.k)
    }

    /// Time level of `t_m`, where the unreduced solve hands over to the
    /// reduced one.
    pub fn switch_level(&self) -> usize {
        let grid = self.full.grid();
        (((self.config.t_m - grid.t0) / grid.dt).round() as usize).min(grid.n - 1)
    }

    pub fn last_staleness(&self) -> Option<f64> {
        self.last_staleness
    }

    /// Discards the current basis and rebuilds it from snapshots at `g`.
    pub fn rebuild(&mut self, g: &[f64]) -> Result<()> {
        let dtau = self.config.dtau.unwrap_or(self.full.grid().dt);
        let snaps = collect_snapshots(&self.full, g, self.config.t_m, dtau)?;
        let basis = PodBasis::truncate(&snaps, self.config.truncation)?;
        self.reduced = Some(ReducedSystem::new(&self.full, basis)?);
        self.full.counters().basis_update();
        Ok(())
    }
}

impl ForwardModel for PodModel {
    fn grid(&self) -> &TimeGrid {
        self.full.grid()
    }

    fn n_nodes(&self) -> usize {
        self.full.n_nodes()
    }

    fn n_obs(&self) -> usize {
        self.full.n_obs()
    }

    fn predict<T: Field>(&self, g: &[T], last: usize) -> Result<DMatrix<T>> {
        let red = self
            .reduced
            .as_ref()
            .ok_or_else(|| Error::Snapshots("reduced model used before any snapshots were collected".into()))?;
        if g.len() != self.n_nodes() || last >= self.grid().n {
            return Err(Error::Dimension(format!("data of length {} up to level {last}", g.len())));
        }
        let switch = self.switch_level().min(last);
        let full = self.full.states(g, switch)?;
        let nodes = self.full.observation().nodes();
        let a0 = red.project(full.column(switch).as_slice());
        let a = red.coefficients(&self.full, g, &a0, switch, last);
        self.full.counters().reduced(last - switch);
        let reduced = red.observed.map(T::from_real) * a;
        Ok(DMatrix::from_fn(nodes.len(), last + 1, |r, c| {
            if c <= switch {
                full[(nodes[r], c)]
            } else {
                reduced[(r, c - switch)]
            }
        }))
    }

    fn prepare(&mut self, g: &[f64]) -> Result<bool> {
        match &self.reduced {
            None => {
                self.last_staleness = None;
                self.rebuild(g)?;
                Ok(true)
            }
            Some(red) => {
                let idx = staleness_index(&self.full, red, g, self.config.n_bar)?;
                self.last_staleness = Some(idx);
                let stale = idx > self.config.staleness_threshold;
                if stale {
                    self.rebuild(g)?;
                }
                Ok(stale)
            }
        }
    }

    fn stats(&self) -> SolveStats {
        self.full.stats()
    }

    fn full(&self) -> &FullModel {
        &self.full
    }
}

impl PodModel {
    pub fn counters(&self) -> &Counters {
        self.full.counters()
    }
}
