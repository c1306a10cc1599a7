use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use srcinv_core::control::{SegmentLayout, Source};
use srcinv_core::model::{ForwardModel, FullModel};

use crate::config::{ExperimentConfig, MeshSpec};
use crate::output::Table;
use crate::HarnessError;

/// Outflow observations, one column per time level, rows ordered bottom to
/// top.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    pub times: Vec<f64>,
    pub y: Vec<f64>,
    pub clean: DMatrix<f64>,
    pub noisy: DMatrix<f64>,
}

impl Measurements {
    pub fn table(&self, name: &str, noisy: bool) -> Table {
        let mut header = vec!["t".to_string()];
        header.extend(self.y.iter().map(|y| format!("y={y:.6}")));
        let data = if noisy { &self.noisy } else { &self.clean };
        let rows = self
            .times
            .iter()
            .enumerate()
            .map(|(j, t)| {
                let mut r = vec![fmt(*t)];
                r.extend(data.column(j).iter().map(|v| fmt(*v)));
                r
            })
            .collect();
        Table { name: name.to_string(), header, rows }
    }
}

pub fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

pub fn model_on(cfg: &ExperimentConfig, mesh: &MeshSpec) -> Result<FullModel, HarnessError> {
    Ok(FullModel::new(mesh.build()?, &cfg.coefficients.physical(), cfg.time.grid()?)?)
}

/// The unreduced model the inversion runs on.
pub fn inversion_model(cfg: &ExperimentConfig) -> Result<FullModel, HarnessError> {
    model_on(cfg, &cfg.mesh)
}

/// Outflow data for `truth`, generated on `cfg.data_mesh` when set and
/// interpolated linearly in y onto the outflow nodes of the inversion mesh.
pub fn simulate(cfg: &ExperimentConfig, truth: &[Source]) -> Result<DMatrix<f64>, HarnessError> {
    let source_mesh = cfg.data_mesh.unwrap_or(cfg.mesh);
    let model = model_on(cfg, &source_mesh)?;
    let segs: Vec<_> = truth.iter().map(|s| s.segment()).collect();
    let theta: Vec<f64> = truth.iter().map(|s| s.value).collect();
    let layout = SegmentLayout::new(model.mesh(), &segs)?;
    let y = model.predict(&layout.dirichlet_vector(&theta, cfg.coefficients.c_up), model.grid().n - 1)?;
    let (fine, coarse) = (source_mesh.ny - 1, cfg.mesh.ny - 1);
    Ok(DMatrix::from_fn(cfg.mesh.ny, y.ncols(), |r, c| {
        let (k, rem) = ((r * fine) / coarse, (r * fine) % coarse);
        if rem == 0 {
            return y[(k, c)];
        }
        let w = rem as f64 / coarse as f64;
        (1.0 - w) * y[(k, c)] + w * y[(k + 1, c)]
    }))
}

/// Adds independent zero-mean Gaussian noise of the given variance.
pub fn add_noise(clean: &DMatrix<f64>, variance: f64, seed: u64) -> DMatrix<f64> {
    if variance == 0.0 {
        return clean.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite variance");
    clean.map(|v| v + normal.sample(&mut rng))
}

pub fn generate_measurements(cfg: &ExperimentConfig) -> Result<Measurements, HarnessError> {
    generate_for(cfg, &cfg.truth)
}

pub fn generate_for(cfg: &ExperimentConfig, truth: &[Source]) -> Result<Measurements, HarnessError> {
    let clean = simulate(cfg, truth)?;
    let noisy = add_noise(&clean, cfg.noise.variance, cfg.noise.seed);
    let grid = cfg.time.grid()?;
    let (y0, y1) = (cfg.mesh.y_range[0], cfg.mesh.y_range[1]);
    let y = (0..cfg.mesh.ny).map(|k| y0 + (y1 - y0) * k as f64 / (cfg.mesh.ny - 1) as f64).collect();
    Ok(Measurements { times: (0..grid.n).map(|j| grid.time(j)).collect(), y, clean, noisy })
}

/// Magnitude of the most negative nodal concentration over a run; zero when
/// the discrete solution stays nonnegative.
pub fn oscillation_indicator(states: &DMatrix<f64>) -> f64 {
    states.iter().fold(0.0f64, |m, &v| m.max(-v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{builtin, TimeSpec};

    fn short(name: &str) -> ExperimentConfig {
        let mut cfg = builtin(name).unwrap();
        cfg.mesh = MeshSpec::river(33, 9);
        cfg.time = TimeSpec { t0: 0.0, tf: 2.0, dt: 0.05 };
        cfg
    }

    #[test]
    fn zero_truth_without_noise_is_zero() {
        let mut cfg = short("example1");
        cfg.coefficients.c_up = 0.0;
        cfg.noise.variance = 0.0;
        let m = generate_for(&cfg, &[]).unwrap();
        assert!(m.clean.iter().chain(m.noisy.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let cfg = short("example1");
        let a = generate_measurements(&cfg).unwrap();
        let b = generate_measurements(&cfg).unwrap();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.noise.seed += 1;
        assert_ne!(generate_measurements(&other).unwrap().noisy, a.noisy);
        let d = &a.noisy - &a.clean;
        let var = d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64;
        assert!((var - 0.05).abs() < 0.01, "sample variance {var}");
    }

    #[test]
    fn example1_outflow_is_positive_late() {
        let cfg = short("example1");
        let m = generate_measurements(&cfg).unwrap();
        let last = m.clean.column(m.clean.ncols() - 1);
        assert!(last.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn data_mesh_is_interpolated_onto_the_inversion_outflow() {
        let mut cfg = short("example1");
        cfg.noise.variance = 0.0;
        cfg.data_mesh = Some(MeshSpec::river(65, 17));
        cfg.validate().unwrap();
        let fine = generate_measurements(&cfg).unwrap();
        assert_eq!(fine.clean.nrows(), 9);
        cfg.data_mesh = None;
        let same = generate_measurements(&cfg).unwrap();
        let late = fine.clean.ncols() - 1;
        let rel = (fine.clean.column(late) - same.clean.column(late)).norm() / same.clean.column(late).norm();
        assert!(rel > 0.0 && rel < 0.2, "{rel}");
    }

    #[test]
    fn non_nested_data_mesh_interpolates_between_neighbours() {
        let mut cfg = short("example1");
        cfg.noise.variance = 0.0;
        cfg.data_mesh = Some(MeshSpec::river(33, 13));
        cfg.validate().unwrap();
        let coarse = generate_measurements(&cfg).unwrap();
        cfg.mesh = MeshSpec::river(33, 13);
        cfg.data_mesh = None;
        let fine = generate_measurements(&cfg).unwrap();
        let c = fine.clean.ncols() - 1;
        // coarse node 1 sits at y = 1/8, between fine nodes 1 (y = 1/12) and 2 (y = 2/12)
        let expect = 0.5 * fine.clean[(1, c)] + 0.5 * fine.clean[(2, c)];
        assert!((coarse.clean[(1, c)] - expect).abs() <= 1e-14 * expect.abs().max(1.0));
        assert_eq!(coarse.clean[(2, c)], fine.clean[(3, c)]);
    }

    #[test]
    fn indicator_reads_the_most_negative_value() {
        let s = DMatrix::from_row_slice(2, 2, &[0.5, -0.25, -1e-3, 2.0]);
        assert_eq!(oscillation_indicator(&s), 0.25);
        assert_eq!(oscillation_indicator(&DMatrix::zeros(3, 3)), 0.0);
    }
}
