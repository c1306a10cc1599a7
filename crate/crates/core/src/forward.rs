use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::banded::BandedLu;
use crate::fem::{FemSystem, NodalControl};
use crate::mesh::StructuredMesh;
use crate::sparse::Csr;
use crate::{Error, Field, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub tf: f64,
    pub dt: f64,
    /// Number of time levels, `(n - 1) * dt = tf - t0`.
    pub n: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, tf: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !(tf > t0) {
            return Err(Error::TimeGrid(format!("need dt > 0 and tf > t0, got dt={dt}, [{t0}, {tf}]")));
        }
        let steps = ((tf - t0) / dt).round();
        if steps < 1.0 || ((steps * dt) - (tf - t0)).abs() > 1e-12 * (tf - t0).abs().max(1.0) {
            return Err(Error::TimeGrid(format!("dt={dt} does not divide [{t0}, {tf}]")));
        }
        Ok(TimeGrid { t0, tf, dt, n: steps as usize + 1 })
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.dt
    }

    /// Index of the last time level not later than `t`.
    pub fn index_at(&self, t: f64) -> usize {
        let k = ((t - self.t0) / self.dt + 1e-9).floor();
        (k.max(0.0) as usize).min(self.n - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationOperator {
    nodes: Vec<usize>,
}

impl ObservationOperator {
    pub fn new(nodes: Vec<usize>) -> Self {
        ObservationOperator { nodes }
    }

    /// One observation per node of the outflow edge, bottom to top.
    pub fn outflow(mesh: &StructuredMesh) -> Self {
        ObservationOperator { nodes: mesh.outflow_nodes() }
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: TimeGrid,
    /// Column `j` holds the nodal state at time level `j`.
    pub states: DMatrix<f64>,
}

/// Implicit Euler integrator with a single factorization of `M + dt A`.
#[derive(Debug, Clone)]
pub struct Stepper {
    lu: BandedLu,
    mass_free: Csr,
    dt: f64,
}

impl Stepper {
    pub fn new(system: &FemSystem, mesh: &StructuredMesh, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::TimeGrid(format!("dt must be positive, got {dt}")));
        }
        let lhs = system.mass_free().add_scaled(system.operator_free(), dt);
        let lu = BandedLu::factor(&lhs, Some(&mesh.band_ordering()))?;
        Ok(Stepper { lu, mass_free: system.mass_free().clone(), dt })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `state` by one step given the precomputed `dt * F`.
    pub fn step_in_place<T: Field>(&self, state: &mut [T], dt_load: &[T]) {
        let mut rhs = self.mass_free.matvec(state);
        for (r, &f) in rhs.iter_mut().zip(dt_load) {
            *r += f;
        }
        self.lu.solve_in_place(&mut rhs);
        state.copy_from_slice(&rhs);
    }

    pub fn scaled_load<T: Field>(&self, system: &FemSystem, g: &[T]) -> Vec<T> {
        let dt = T::from_real(self.dt);
        system.lift(g).into_iter().map(|f| f * dt).collect()
    }
}

/// One implicit Euler step from `state` with the given boundary data.
pub fn step(
    system: &FemSystem,
    mesh: &StructuredMesh,
    state: &[f64],
    control: &NodalControl<f64>,
    c_up: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    let stepper = Stepper::new(system, mesh, dt)?;
    let f = system.load_vector(mesh, control, c_up)?;
    let dt_f: Vec<f64> = f.iter().map(|v| v * dt).collect();
    let mut next = state.to_vec();
    stepper.step_in_place(&mut next, &dt_f);
    Ok(next)
}

pub fn solve(
    system: &FemSystem,
    mesh: &StructuredMesh,
    grid: &TimeGrid,
    c0: &[f64],
    control: &NodalControl<f64>,
    c_up: f64,
) -> Result<Trajectory> {
    if c0.len() != system.n() {
        return Err(Error::Dimension(format!("initial state has {} entries, expected {}", c0.len(), system.n())));
    }
    let stepper = Stepper::new(system, mesh, grid.dt)?;
    let f = system.load_vector(mesh, control, c_up)?;
    let dt_f: Vec<f64> = f.iter().map(|v| v * grid.dt).collect();
    let mut states = DMatrix::zeros(system.n(), grid.n);
    states.column_mut(0).copy_from_slice(c0);
    let mut c = c0.to_vec();
    for j in 1..grid.n {
        stepper.step_in_place(&mut c, &dt_f);
        states.column_mut(j).copy_from_slice(&c);
    }
    Ok(Trajectory { grid: *grid, states })
}

pub fn observe(traj: &Trajectory, op: &ObservationOperator) -> Result<DMatrix<f64>> {
    let n = traj.states.nrows();
    if let Some(&bad) = op.nodes().iter().find(|&&k| k >= n) {
        return Err(Error::ObservationIndex(bad));
    }
    Ok(DMatrix::from_fn(op.len(), traj.states.ncols(), |i, j| traj.states[(op.nodes()[i], j)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::fem::{assemble, PhysicalCoefficients};
    use crate::mesh::Edge;

    fn setup() -> (StructuredMesh, FemSystem) {
        let m = StructuredMesh::new((0.0, 8.0), (0.0, 1.0), 33, 9).unwrap();
        let s = assemble(&m, &PhysicalCoefficients::river()).unwrap();
        (m, s)
    }

    fn example1(m: &StructuredMesh) -> NodalControl<f64> {
        let mut c = NodalControl::zeros(m);
        for (k, &node) in m.edge_nodes(Edge::Top).iter().enumerate() {
            if (4.0..=4.5).contains(&m.nodes()[node][0]) {
                c.top[k] = 100.0;
            }
        }
        c
    }

    #[test]
    fn time_grid_arithmetic() {
        let g = TimeGrid::new(0.0, 10.0, 0.05).unwrap();
        assert_eq!(g.n, 201);
        assert!(((g.n - 1) as f64 * g.dt - 10.0).abs() < 1e-12);
        assert_eq!(g.index_at(2.5), 50);
        assert!(TimeGrid::new(0.0, 1.0, 0.3).is_err());
        assert!(TimeGrid::new(0.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn zero_data_gives_zero_trajectory() {
        let (m, s) = setup();
        let g = TimeGrid::new(0.0, 1.0, 0.1).unwrap();
        let t = solve(&s, &m, &g, &vec![0.0; m.n_nodes()], &NodalControl::zeros(&m), 0.0).unwrap();
        assert!(t.states.iter().all(|&v| v == 0.0));
        let y = observe(&t, &ObservationOperator::outflow(&m)).unwrap();
        assert_eq!(y.shape(), (9, 11));
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn large_step_reaches_steady_state() {
        let (m, s) = setup();
        let ctrl = example1(&m);
        let g = s.dirichlet_values(&m, &ctrl, 0.1).unwrap();
        let steady = s.steady_state(&m, &g).unwrap();
        let next = step(&s, &m, &vec![0.0; m.n_nodes()], &ctrl, 0.1, 1e6).unwrap();
        let num: f64 = next.iter().zip(&steady).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = steady.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(num / den < 1e-6, "relative gap {}", num / den);
    }

    #[test]
    fn constant_patch_is_fixed_point() {
        let (m, _) = setup();
        let coeffs = PhysicalCoefficients { sigma: 0.0, c_up: 0.3, ..PhysicalCoefficients::river() };
        let s = assemble(&m, &coeffs).unwrap();
        let n = m.nx() - 2;
        let ctrl = NodalControl { top: vec![0.3; n], bottom: vec![0.3; n] };
        let c = vec![0.3; m.n_nodes()];
        let next = step(&s, &m, &c, &ctrl, 0.3, 0.05).unwrap();
        assert!(next.iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn mean_outflow_rises_to_steady_value() {
        let m = StructuredMesh::new((0.0, 8.0), (0.0, 1.0), 51, 21).unwrap();
        let s = assemble(&m, &PhysicalCoefficients::river()).unwrap();
        let ctrl = example1(&m);
        let grid = TimeGrid::new(0.0, 10.0, 0.05).unwrap();
        let t = solve(&s, &m, &grid, &vec![0.0; m.n_nodes()], &ctrl, 0.1).unwrap();
        let y = observe(&t, &ObservationOperator::outflow(&m)).unwrap();
        let mean: Vec<f64> = (0..grid.n).map(|j| y.column(j).mean()).collect();
        assert!(mean.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        let g = s.dirichlet_values(&m, &ctrl, 0.1).unwrap();
        let steady = s.steady_state(&m, &g).unwrap();
        let steady_mean: f64 = m.outflow_nodes().iter().map(|&k| steady[k]).sum::<f64>() / m.ny() as f64;
        assert!((mean[grid.n - 1] - steady_mean).abs() < 1e-3 * steady_mean);
        for i in 1..m.ny() - 1 {
            assert!(y[(i, grid.n - 1)] > 0.0);
        }
    }

    #[test]
    fn trajectory_is_linear_in_data() {
        let (m, s) = setup();
        let grid = TimeGrid::new(0.0, 2.0, 0.1).unwrap();
        let ctrl = example1(&m);
        let c0: Vec<f64> = (0..m.n_nodes()).map(|k| (k % 7) as f64 * 0.01).collect();
        let a = solve(&s, &m, &grid, &c0, &ctrl, 0.1).unwrap();
        let ctrl2 = NodalControl { top: ctrl.top.iter().map(|v| 2.0 * v).collect(), bottom: ctrl.bottom.clone() };
        let c02: Vec<f64> = c0.iter().map(|v| 2.0 * v).collect();
        let b = solve(&s, &m, &grid, &c02, &ctrl2, 0.2).unwrap();
        let diff = (&b.states - &a.states * 2.0).abs().max();
        assert!(diff <= 1e-10 * a.states.abs().max());
    }

    #[test]
    fn observation_rejects_foreign_nodes() {
        let (m, s) = setup();
        let grid = TimeGrid::new(0.0, 0.2, 0.1).unwrap();
        let t = solve(&s, &m, &grid, &vec![0.0; m.n_nodes()], &NodalControl::zeros(&m), 0.0).unwrap();
        let op = ObservationOperator::new(vec![m.n_nodes()]);
        assert!(matches!(observe(&t, &op), Err(Error::ObservationIndex(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn solve_superposes(
            nx in 4usize..12,
            ny in 3usize..7,
            a in proptest::collection::vec(0.0f64..10.0, 100),
            b in proptest::collection::vec(0.0f64..10.0, 100),
            ups in (0.0f64..1.0, 0.0f64..1.0),
        ) {
            let m = StructuredMesh::new((0.0, 8.0), (0.0, 1.0), nx, ny).unwrap();
            let s = assemble(&m, &PhysicalCoefficients::river()).unwrap();
            let grid = TimeGrid::new(0.0, 0.5, 0.05).unwrap();
            let k = nx - 2;
            let ctrl = |v: &[f64]| NodalControl { top: v[..k].to_vec(), bottom: v[k..2 * k].to_vec() };
            let c0 = |v: &[f64]| (0..m.n_nodes()).map(|i| v[i % v.len()] * 0.1).collect::<Vec<_>>();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let ta = solve(&s, &m, &grid, &c0(&a), &ctrl(&a), ups.0).unwrap();
            let tb = solve(&s, &m, &grid, &c0(&b), &ctrl(&b), ups.1).unwrap();
            let tab = solve(&s, &m, &grid, &c0(&sum), &ctrl(&sum), ups.0 + ups.1).unwrap();
            let scale = ta.states.abs().max() + tb.states.abs().max();
            prop_assert!((&tab.states - &ta.states - &tb.states).abs().max() <= 1e-10 * scale.max(1.0));
        }
    }
}
