mod ill_posed;
mod known;
mod localization;
mod reduction;

pub use ill_posed::{conditioning_vs_h, ode1d_flatness, width_family, FlatnessParams};
pub use known::{example1, example2, jacobian_check, monotonicity};
pub use localization::{
    cond_checks, cond_time_localization, cost_dims, run_suite, stabilization, suite_checks, suite_tables, tests_suite,
    thresholds, SuiteRun,
};
pub use reduction::{pod_optimality, pod_table1};

use crate::config::{Experiment, ExperimentConfig};
use crate::output::Outcome;
use crate::HarnessError;

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome, HarnessError> {
    cfg.validate()?;
    match &cfg.experiment {
        Experiment::Example1 { alpha } => example1(cfg, *alpha),
        Experiment::Example2 => example2(cfg),
        Experiment::PodTable1 { rows } => pod_table1(cfg, rows),
        Experiment::Monotonicity { pairs } => monotonicity(cfg, *pairs),
        Experiment::JacobianCheck { cases, finite_difference, complex_step } => {
            jacobian_check(cfg, cases, *finite_difference, *complex_step)
        }
        Experiment::Ode1dFlatness { instances, mu, peclet, doublings, half_width, x_lo, x_hi, points, masses } => {
            let p = FlatnessParams {
                instances: *instances,
                mu: *mu,
                peclet: *peclet,
                doublings: *doublings,
                half_width: *half_width,
                x_lo: *x_lo,
                x_hi: *x_hi,
                points: *points,
                masses: masses.clone(),
            };
            ode1d_flatness(cfg, &p)
        }
        Experiment::ConditioningVsH { widths, top_end, bottom_end, values } => {
            conditioning_vs_h(cfg, widths, *top_end, *bottom_end, *values)
        }
        Experiment::Tests { tests, algorithms, cost_n_h, cost_n_y, expected_exponents } => {
            tests_suite(cfg, tests, algorithms, cost_dims(cfg, *cost_n_h, *cost_n_y)?, *expected_exponents)
        }
        Experiment::CondTimeLocalization { tests } => cond_time_localization(cfg, tests),
        Experiment::ThresholdsTable4 { test, pairs } => thresholds(cfg, *test, pairs),
        Experiment::AppendixAStabilization { meshes } => stabilization(cfg, meshes),
        Experiment::PodOptimality { instances, trials } => pod_optimality(cfg, *instances, *trials),
    }
}
