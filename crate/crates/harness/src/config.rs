use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use srcinv_core::algorithms::{Algorithm, AlgorithmConfig};
use srcinv_core::control::{Source, Subdivision};
use srcinv_core::fem::{PhysicalCoefficients, Velocity};
use srcinv_core::forward::TimeGrid;
use srcinv_core::mesh::{Edge, StructuredMesh};
use srcinv_core::pod::{PodConfig, Truncation};

use crate::suite;
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub nx: usize,
    pub ny: usize,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
}

impl MeshSpec {
    pub fn river(nx: usize, ny: usize) -> Self {
        MeshSpec { nx, ny, x_range: [0.0, 8.0], y_range: [0.0, 1.0] }
    }

    pub fn build(&self) -> srcinv_core::Result<StructuredMesh> {
        StructuredMesh::new((self.x_range[0], self.x_range[1]), (self.y_range[0], self.y_range[1]), self.nx, self.ny)
    }
}

impl Default for MeshSpec {
    fn default() -> Self {
        MeshSpec::river(51, 21)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoefficientSpec {
    pub mu: f64,
    pub sigma: f64,
    /// Poiseuille amplitude.
    pub nu: f64,
    pub c_up: f64,
}

impl Default for CoefficientSpec {
    fn default() -> Self {
        CoefficientSpec { mu: 0.1, sigma: 0.1, nu: 50.0, c_up: 0.1 }
    }
}

impl CoefficientSpec {
    pub fn physical(&self) -> PhysicalCoefficients {
        PhysicalCoefficients {
            mu: self.mu,
            sigma: self.sigma,
            velocity: Velocity::Poiseuille { nu: self.nu },
            c_up: self.c_up,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSpec {
    pub t0: f64,
    pub tf: f64,
    pub dt: f64,
}

impl Default for TimeSpec {
    fn default() -> Self {
        TimeSpec { t0: 0.0, tf: 10.0, dt: 0.05 }
    }
}

impl TimeSpec {
    pub fn grid(&self) -> srcinv_core::Result<TimeGrid> {
        TimeGrid::new(self.t0, self.tf, self.dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub variance: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { variance: 0.05, seed: 20_240_517 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSpec {
    /// Length of the finest segments.
    pub fine_dx: f64,
    /// Breakpoints of the coarse initial subdivision, shared by both edges.
    pub coarse: Vec<f64>,
}

impl Default for ControlSpec {
    fn default() -> Self {
        ControlSpec { fine_dx: 0.5, coarse: vec![0.0, 4.0, 8.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PodRow {
    pub t_m: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTruth {
    pub name: String,
    pub truth: Vec<Source>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdPair {
    pub eps1: f64,
    pub eps2: f64,
}

/// The experiment to run and its sweep parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    Example1 {
        /// Regularization of the Levenberg-Marquardt and Tikhonov comparisons.
        alpha: f64,
    },
    Example2,
    PodTable1 {
        rows: Vec<PodRow>,
    },
    Monotonicity {
        pairs: usize,
    },
    JacobianCheck {
        cases: Vec<NamedTruth>,
        finite_difference: f64,
        complex_step: f64,
    },
    Ode1dFlatness {
        instances: usize,
        mu: f64,
        peclet: f64,
        doublings: usize,
        half_width: f64,
        x_lo: f64,
        x_hi: f64,
        points: usize,
        masses: Vec<f64>,
    },
    ConditioningVsH {
        widths: Vec<f64>,
        top_end: f64,
        bottom_end: f64,
        values: [f64; 2],
    },
    #[serde(rename = "tests1-9")]
    Tests {
        tests: Vec<usize>,
        algorithms: Vec<Algorithm>,
        /// Mesh dimensions plugged into the operation-count model.
        cost_n_h: f64,
        cost_n_y: f64,
        expected_exponents: [i32; 4],
    },
    CondTimeLocalization {
        tests: Vec<usize>,
    },
    ThresholdsTable4 {
        test: usize,
        pairs: Vec<ThresholdPair>,
    },
    #[serde(rename = "appendixA-stabilization")]
    AppendixAStabilization {
        meshes: Vec<[usize; 2]>,
    },
    PodOptimality {
        instances: usize,
        trials: usize,
    },
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Example1 { .. } => "example1",
            Experiment::Example2 => "example2",
            Experiment::PodTable1 { .. } => "pod-table1",
            Experiment::Monotonicity { .. } => "monotonicity",
            Experiment::JacobianCheck { .. } => "jacobian-check",
            Experiment::Ode1dFlatness { .. } => "ode1d-flatness",
            Experiment::ConditioningVsH { .. } => "conditioning-vs-h",
            Experiment::Tests { .. } => "tests1-9",
            Experiment::CondTimeLocalization { .. } => "cond-time-localization",
            Experiment::ThresholdsTable4 { .. } => "thresholds-table4",
            Experiment::AppendixAStabilization { .. } => "appendixA-stabilization",
            Experiment::PodOptimality { .. } => "pod-optimality",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub mesh: MeshSpec,
    /// Finer mesh for the synthetic data; `None` generates data on `mesh`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_mesh: Option<MeshSpec>,
    #[serde(default)]
    pub coefficients: CoefficientSpec,
    #[serde(default)]
    pub time: TimeSpec,
    #[serde(default)]
    pub truth: Vec<Source>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub control: ControlSpec,
    #[serde(default)]
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub pod: PodConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

fn invalid(path: &str, msg: impl Into<String>) -> HarnessError {
    HarnessError::Config { path: path.to_string(), msg: msg.into() }
}

fn on_grid(x: f64, x0: f64, dx: f64) -> bool {
    let k = (x - x0) / dx;
    (k - k.round()).abs() < 1e-9
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let path = e.span().map(|s| format!("byte {}..{}", s.start, s.end)).unwrap_or_else(|| "<root>".into());
            invalid(&path, e.message())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn n_fine(&self) -> usize {
        ((self.mesh.x_range[1] - self.mesh.x_range[0]) / self.control.fine_dx).round() as usize
    }

    pub fn coarse(&self) -> srcinv_core::Result<Subdivision> {
        let range = (self.mesh.x_range[0], self.mesh.x_range[1]);
        Subdivision::from_breakpoints(range, self.n_fine(), &self.control.coarse, &self.control.coarse)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let m = &self.mesh;
        if m.nx < 2 || m.ny < 2 {
            return Err(invalid("mesh", format!("need at least 2 x 2 nodes, got {} x {}", m.nx, m.ny)));
        }
        if !(m.x_range[1] > m.x_range[0] && m.y_range[1] > m.y_range[0]) {
            return Err(invalid("mesh", "ranges must be increasing"));
        }
        if let Some(d) = &self.data_mesh {
            if d.x_range != m.x_range || d.y_range != m.y_range || d.nx < m.nx || d.ny < m.ny {
                return Err(invalid("data_mesh", "must cover the same domain at least as finely as the inversion mesh"));
            }
        }
        self.coefficients.physical().validate().map_err(|e| invalid("coefficients", e.to_string()))?;
        self.time.grid().map_err(|e| invalid("time", e.to_string()))?;
        if !(self.noise.variance >= 0.0 && self.noise.variance.is_finite()) {
            return Err(invalid("noise.variance", format!("must be nonnegative, got {}", self.noise.variance)));
        }
        let dx = self.control.fine_dx;
        let span = m.x_range[1] - m.x_range[0];
        if !(dx > 0.0) || !on_grid(span, 0.0, dx) {
            return Err(invalid("control.fine_dx", format!("{dx} does not divide the edge length {span}")));
        }
        self.coarse().map_err(|e| invalid("control.coarse", e.to_string()))?;
        for (i, s) in self.truth.iter().enumerate() {
            let p = format!("truth[{i}]");
            if !(s.a < s.b) || s.a < m.x_range[0] || s.b > m.x_range[1] {
                return Err(invalid(&p, format!("interval [{}, {}] is empty or leaves the edge", s.a, s.b)));
            }
            if !on_grid(s.a, m.x_range[0], dx) || !on_grid(s.b, m.x_range[0], dx) {
                return Err(invalid(&p, format!("interval [{}, {}] is not on the finest grid (dx = {dx})", s.a, s.b)));
            }
            if !(s.value >= 0.0 && s.value.is_finite()) {
                return Err(invalid(&format!("{p}.value"), "must be nonnegative"));
            }
        }
        self.algorithm.validate().map_err(|e| invalid("algorithm", e.to_string()))?;
        self.validate_experiment()
    }

    fn validate_experiment(&self) -> Result<(), HarnessError> {
        let known_test = |t: usize| (1..=suite::N_TESTS).contains(&t);
        match &self.experiment {
            Experiment::Example1 { alpha } if !(*alpha > 0.0) => {
                Err(invalid("experiment.alpha", "must be positive"))
            }
            Experiment::Example1 { .. } | Experiment::Example2 if self.truth.is_empty() => {
                Err(invalid("truth", "the known-location examples need at least one source"))
            }
            Experiment::PodTable1 { rows } => {
                for (i, r) in rows.iter().enumerate() {
                    if !(r.t_m > self.time.t0 && r.t_m < self.time.tf) || !(r.tau > 0.0) {
                        return Err(invalid(&format!("experiment.rows[{i}]"), "need t0 < t_m < tf and tau > 0"));
                    }
                }
                match self.pod.truncation {
                    Truncation::EnergyRatio { tol } if !(tol > 0.0 && tol <= 1.0) => {
                        Err(invalid("pod.truncation", "energy ratio must lie in (0, 1]"))
                    }
                    _ => Ok(()),
                }
            }
            Experiment::Monotonicity { pairs } if *pairs == 0 => Err(invalid("experiment.pairs", "must be positive")),
            Experiment::JacobianCheck { cases, finite_difference, complex_step } => {
                if !(*finite_difference > 0.0 && *complex_step > 0.0) {
                    return Err(invalid("experiment", "perturbations must be positive"));
                }
                for (i, c) in cases.iter().enumerate() {
                    if c.truth.is_empty() {
                        return Err(invalid(&format!("experiment.cases[{i}].truth"), "needs at least one source"));
                    }
                    for (j, s) in c.truth.iter().enumerate() {
                        if !(s.a < s.b) {
                            return Err(invalid(&format!("experiment.cases[{i}].truth[{j}]"), "empty interval"));
                        }
                    }
                }
                Ok(())
            }
            Experiment::Ode1dFlatness { instances, mu, peclet, half_width, x_lo, x_hi, points, masses, .. } => {
                if *instances == 0 || !(*mu > 0.0) || !(*peclet > 0.0) || *points < 2 || masses.len() < 2 {
                    return Err(invalid("experiment", "1D study needs instances, mu, peclet > 0, 2 points, 2 masses"));
                }
                if !(x_lo - half_width > 0.0 && x_hi + half_width < 1.0 && x_lo < x_hi) {
                    return Err(invalid("experiment.x_lo", "source support must stay inside (0, 1)"));
                }
                Ok(())
            }
            Experiment::ConditioningVsH { widths, top_end, bottom_end, .. } => {
                for (i, &h) in widths.iter().enumerate() {
                    if !(h > 0.0) || top_end - h < self.mesh.x_range[0] || bottom_end - h < self.mesh.x_range[0] {
                        return Err(invalid(&format!("experiment.widths[{i}]"), "segment leaves the edge"));
                    }
                }
                Ok(())
            }
            Experiment::Tests { tests, algorithms, .. } => {
                if tests.iter().any(|&t| !known_test(t)) {
                    return Err(invalid("experiment.tests", format!("tests are numbered 1..={}", suite::N_TESTS)));
                }
                if algorithms.is_empty() {
                    return Err(invalid("experiment.algorithms", "at least one algorithm"));
                }
                Ok(())
            }
            Experiment::CondTimeLocalization { tests } if tests.iter().any(|&t| !known_test(t)) => {
                Err(invalid("experiment.tests", format!("tests are numbered 1..={}", suite::N_TESTS)))
            }
            Experiment::ThresholdsTable4 { test, pairs } => {
                if !known_test(*test) {
                    return Err(invalid("experiment.test", format!("tests are numbered 1..={}", suite::N_TESTS)));
                }
                for (i, p) in pairs.iter().enumerate() {
                    if !(p.eps1 > 0.0 && p.eps2 > 0.0) {
                        return Err(invalid(&format!("experiment.pairs[{i}]"), "thresholds must be positive"));
                    }
                }
                Ok(())
            }
            Experiment::AppendixAStabilization { meshes } if meshes.iter().any(|m| m[0] < 2 || m[1] < 2) => {
                Err(invalid("experiment.meshes", "every mesh needs at least 2 x 2 nodes"))
            }
            Experiment::PodOptimality { instances, trials } if *instances == 0 || *trials == 0 => {
                Err(invalid("experiment", "instances and trials must be positive"))
            }
            _ => Ok(()),
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn source(edge: Edge, a: f64, b: f64, value: f64) -> Source {
    Source { edge, a, b, value }
}

pub fn example1_truth() -> Vec<Source> {
    vec![source(Edge::Top, 4.0, 4.5, 100.0)]
}

pub fn example2_truth() -> Vec<Source> {
    vec![source(Edge::Top, 4.5, 5.0, 100.0), source(Edge::Bottom, 1.5, 2.0, 80.0)]
}

/// Names of the shipped experiments, in registry order.
pub const EXPERIMENTS: [&str; 12] = [
    "example1",
    "example2",
    "pod-table1",
    "monotonicity",
    "jacobian-check",
    "ode1d-flatness",
    "conditioning-vs-h",
    "tests1-9",
    "cond-time-localization",
    "thresholds-table4",
    "appendixA-stabilization",
    "pod-optimality",
];

/// Mesh and time grid on which the outflow transients of the localization
/// studies are resolved.
pub fn suite_setup(experiment: Experiment) -> ExperimentConfig {
    ExperimentConfig {
        mesh: MeshSpec::river(81, 21),
        time: TimeSpec { t0: 0.0, tf: 0.6, dt: 0.004 },
        truth: Vec::new(),
        noise: NoiseSpec { variance: 0.0, ..NoiseSpec::default() },
        ..builtin_base(experiment)
    }
}

fn builtin_base(experiment: Experiment) -> ExperimentConfig {
    ExperimentConfig {
        output: PathBuf::from("results"),
        experiment,
        mesh: MeshSpec::default(),
        data_mesh: None,
        coefficients: CoefficientSpec::default(),
        time: TimeSpec::default(),
        truth: Vec::new(),
        noise: NoiseSpec::default(),
        control: ControlSpec::default(),
        algorithm: AlgorithmConfig::default(),
        pod: PodConfig::default(),
    }
}

/// The shipped configuration of a named experiment.
pub fn builtin(name: &str) -> Option<ExperimentConfig> {
    let cfg = match name {
        "example1" => ExperimentConfig { truth: example1_truth(), ..builtin_base(Experiment::Example1 { alpha: 0.01 }) },
        "example2" => ExperimentConfig { truth: example2_truth(), ..builtin_base(Experiment::Example2) },
        "pod-table1" => {
            let rows = [(2.5, 0.01), (3.75, 0.01), (5.0, 0.01), (2.5, 1e-4)]
                .iter()
                .map(|&(t_m, tau)| PodRow { t_m, tau })
                .collect();
            ExperimentConfig { truth: example2_truth(), ..builtin_base(Experiment::PodTable1 { rows }) }
        }
        "monotonicity" => {
            ExperimentConfig { mesh: MeshSpec::river(81, 21), ..builtin_base(Experiment::Monotonicity { pairs: 50 }) }
        }
        "jacobian-check" => builtin_base(Experiment::JacobianCheck {
            cases: vec![
                NamedTruth { name: "example1".into(), truth: example1_truth() },
                NamedTruth { name: "example2".into(), truth: example2_truth() },
            ],
            finite_difference: 1e-3,
            complex_step: 1e-20,
        }),
        "ode1d-flatness" => builtin_base(Experiment::Ode1dFlatness {
            instances: 20,
            mu: 0.5,
            peclet: 10.0,
            doublings: 3,
            half_width: 0.1,
            x_lo: 0.2,
            x_hi: 0.8,
            points: 61,
            masses: vec![0.5, 1.0, 2.0, 4.0, 8.0],
        }),
        "conditioning-vs-h" => ExperimentConfig {
            mesh: MeshSpec::river(81, 21),
            ..builtin_base(Experiment::ConditioningVsH {
                widths: vec![2.0, 1.0, 0.5, 0.25, 0.125, 0.0625],
                top_end: 5.0,
                bottom_end: 2.0,
                values: [100.0, 80.0],
            })
        },
        "tests1-9" => suite_setup(Experiment::Tests {
            tests: (1..=suite::N_TESTS).collect(),
            algorithms: Algorithm::ALL.to_vec(),
            cost_n_h: 1071.0,
            cost_n_y: 21.0,
            expected_exponents: [14, 13, 12, 11],
        }),
        "cond-time-localization" => suite_setup(Experiment::CondTimeLocalization { tests: vec![1, 2, 3, 9] }),
        "thresholds-table4" => suite_setup(Experiment::ThresholdsTable4 {
            test: 1,
            pairs: [(0.4, 0.4), (0.3, 0.4), (0.01, 0.4), (0.4, 0.3), (0.4, 0.01), (0.01, 0.01)]
                .iter()
                .map(|&(eps1, eps2)| ThresholdPair { eps1, eps2 })
                .collect(),
        }),
        "appendixA-stabilization" => ExperimentConfig {
            truth: vec![source(Edge::Top, 0.5, 1.0, 100.0)],
            data_mesh: Some(MeshSpec::river(81, 21)),
            ..suite_setup(Experiment::AppendixAStabilization { meshes: vec![[41, 9], [81, 13], [81, 21]] })
        },
        "pod-optimality" => ExperimentConfig {
            truth: example2_truth(),
            ..builtin_base(Experiment::PodOptimality { instances: 20, trials: 500 })
        },
        _ => return None,
    };
    Some(ExperimentConfig { output: PathBuf::from("results").join(name), ..cfg })
}
