use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;

use crate::fem::{assemble, FemSystem, PhysicalCoefficients};
use crate::forward::{ObservationOperator, Stepper, TimeGrid};
use crate::mesh::StructuredMesh;
use crate::{Error, Field, Result};

/// Work counters shared by all forward models.
#[derive(Debug, Default)]
pub struct Counters {
    full_solves: AtomicUsize,
    full_steps: AtomicUsize,
    reduced_solves: AtomicUsize,
    reduced_steps: AtomicUsize,
    basis_updates: AtomicUsize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct SolveStats {
    pub full_solves: usize,
    pub full_steps: usize,
    pub reduced_solves: usize,
    pub reduced_steps: usize,
    pub basis_updates: usize,
}

impl SolveStats {
    pub fn forward_solves(&self) -> usize {
        self.full_solves + self.reduced_solves
    }

    pub fn since(&self, earlier: &SolveStats) -> SolveStats {
        SolveStats {
            full_solves: self.full_solves - earlier.full_solves,
            full_steps: self.full_steps - earlier.full_steps,
            reduced_solves: self.reduced_solves - earlier.reduced_solves,
            reduced_steps: self.reduced_steps - earlier.reduced_steps,
            basis_updates: self.basis_updates - earlier.basis_updates,
        }
    }
}

impl Counters {
    pub fn full(&self, steps: usize) {
        self.full_solves.fetch_add(1, Ordering::Relaxed);
        self.full_steps.fetch_add(steps, Ordering::Relaxed);
    }

    pub fn reduced(&self, steps: usize) {
        self.reduced_solves.fetch_add(1, Ordering::Relaxed);
        self.reduced_steps.fetch_add(steps, Ordering::Relaxed);
    }

    pub fn basis_update(&self) {
        self.basis_updates.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> SolveStats {
        SolveStats {
            full_solves: self.full_solves.load(Ordering::Relaxed),
            full_steps: self.full_steps.load(Ordering::Relaxed),
            reduced_solves: self.reduced_solves.load(Ordering::Relaxed),
            reduced_steps: self.reduced_steps.load(Ordering::Relaxed),
            basis_updates: self.basis_updates.load(Ordering::Relaxed),
        }
    }
}

/// Maps full Dirichlet data `g` (length `N_h`) to outflow predictions.
pub trait ForwardModel: Sync {
    fn grid(&self) -> &TimeGrid;

    fn n_nodes(&self) -> usize;

    fn n_obs(&self) -> usize;

    /// Outflow values at time levels `0..=last`, one column per level.
    fn predict<T: Field>(&self, g: &[T], last: usize) -> Result<DMatrix<T>>;

    /// Hook run between optimizer iterations with the data of the current
    /// iterate. Returns whether the model changed.
    fn prepare(&mut self, _g: &[f64]) -> Result<bool> {
        Ok(false)
    }

    /// The finite element model underneath.
    fn full(&self) -> &FullModel;

    fn stats(&self) -> SolveStats;
}

/// The unreduced finite element model with a cached factorization.
#[derive(Debug)]
pub struct FullModel {
    mesh: StructuredMesh,
    system: FemSystem,
    stepper: Stepper,
    grid: TimeGrid,
    obs: ObservationOperator,
    c0: Vec<f64>,
    counters: Counters,
}

impl FullModel {
    pub fn new(mesh: StructuredMesh, coeffs: &PhysicalCoefficients, grid: TimeGrid) -> Result<Self> {
        let system = assemble(&mesh, coeffs)?;
        let stepper = Stepper::new(&system, &mesh, grid.dt)?;
        let obs = ObservationOperator::outflow(&mesh);
        let c0 = vec![0.0; mesh.n_nodes()];
        Ok(FullModel { mesh, system, stepper, grid, obs, c0, counters: Counters::default() })
    }

    pub fn with_initial_state(mut self, c0: Vec<f64>) -> Result<Self> {
        if c0.len() != self.mesh.n_nodes() {
            return Err(Error::Dimension(format!("initial state has {} entries, expected {}", c0.len(), self.mesh.n_nodes())));
        }
        self.c0 = c0;
        Ok(self)
    }

    pub fn mesh(&self) -> &StructuredMesh {
        &self.mesh
    }

    pub fn system(&self) -> &FemSystem {
        &self.system
    }

    pub fn observation(&self) -> &ObservationOperator {
        &self.obs
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.c0
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    fn check(&self, g: usize, last: usize) -> Result<()> {
        if g != self.mesh.n_nodes() {
            return Err(Error::Dimension(format!("boundary data has {g} entries, expected {}", self.mesh.n_nodes())));
        }
        if last >= self.grid.n {
            return Err(Error::TimeGrid(format!("level {last} beyond the {} levels of the grid", self.grid.n)));
        }
        Ok(())
    }

    /// Full states at levels `0..=last`.
    pub fn states<T: Field>(&self, g: &[T], last: usize) -> Result<DMatrix<T>> {
        self.check(g.len(), last)?;
        let load = self.stepper.scaled_load(&self.system, g);
        let mut c: Vec<T> = self.c0.iter().map(|&v| T::from_real(v)).collect();
        let mut out = DMatrix::zeros(c.len(), last + 1);
        out.column_mut(0).copy_from_slice(&c);
        for j in 1..=last {
            self.stepper.step_in_place(&mut c, &load);
            out.column_mut(j).copy_from_slice(&c);
        }
        self.counters.full(last);
        Ok(out)
    }
}

impl ForwardModel for FullModel {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn n_nodes(&self) -> usize {
        self.mesh.n_nodes()
    }

    fn n_obs(&self) -> usize {
        self.obs.len()
    }

    fn predict<T: Field>(&self, g: &[T], last: usize) -> Result<DMatrix<T>> {
        self.check(g.len(), last)?;
        let load = self.stepper.scaled_load(&self.system, g);
        let nodes = self.obs.nodes();
        let mut c: Vec<T> = self.c0.iter().map(|&v| T::from_real(v)).collect();
        let mut out = DMatrix::zeros(nodes.len(), last + 1);
        for (i, &k) in nodes.iter().enumerate() {
            out[(i, 0)] = c[k];
        }
        for j in 1..=last {
            self.stepper.step_in_place(&mut c, &load);
            for (i, &k) in nodes.iter().enumerate() {
                out[(i, j)] = c[k];
            }
        }
        self.counters.full(last);
        Ok(out)
    }

    fn stats(&self) -> SolveStats {
        self.counters.snapshot()
    }

    fn full(&self) -> &FullModel {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{Segment, SegmentLayout};
    use crate::forward::{observe, solve};
    use crate::mesh::Edge;
    use num_complex::Complex64;

    fn model() -> FullModel {
        let mesh = StructuredMesh::new((0.0, 8.0), (0.0, 1.0), 33, 9).unwrap();
        FullModel::new(mesh, &PhysicalCoefficients::river(), TimeGrid::new(0.0, 1.0, 0.05).unwrap()).unwrap()
    }

    #[test]
    fn prediction_matches_trajectory_observation() {
        let m = model();
        let layout = SegmentLayout::new(m.mesh(), &[Segment::new(Edge::Top, 4.0, 4.5)]).unwrap();
        let g = layout.dirichlet_vector(&[100.0], 0.1);
        let y = m.predict(&g, 20).unwrap();
        let ctrl = layout.nodal_control(&[100.0]);
        let traj = solve(m.system(), m.mesh(), m.grid(), m.initial_state(), &ctrl, 0.1).unwrap();
        let oracle = observe(&traj, m.observation()).unwrap();
        assert!((&y - &oracle).abs().max() < 1e-12);
        let short = m.predict(&g, 7).unwrap();
        assert_eq!(short.ncols(), 8);
        assert_eq!(short, y.columns(0, 8));
        assert_eq!(m.stats().full_solves, 2);
        assert_eq!(m.stats().full_steps, 27);
    }

    #[test]
    fn complex_prediction_carries_real_part() {
        let m = model();
        let layout = SegmentLayout::new(m.mesh(), &[Segment::new(Edge::Bottom, 2.0, 3.0)]).unwrap();
        let g = layout.dirichlet_vector(&[10.0], 0.1);
        let gz = layout.dirichlet_vector(&[Complex64::new(10.0, 1e-8)], Complex64::new(0.1, 0.0));
        let y = m.predict(&g, 20).unwrap();
        let yz = m.predict(&gz, 20).unwrap();
        for (a, b) in y.iter().zip(yz.iter()) {
            assert!((a - b.re).abs() <= 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn rejects_bad_dimensions() {
        let m = model();
        assert!(m.predict(&[0.0; 3], 2).is_err());
        assert!(m.predict(&vec![0.0; m.n_nodes()], 21).is_err());
    }
}
