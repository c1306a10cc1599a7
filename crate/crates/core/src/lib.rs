pub mod algorithms;
pub mod analytic1d;
pub mod banded;
pub mod control;
pub mod error;
pub mod fem;
pub mod forward;
pub mod localization;
pub mod mesh;
pub mod model;
pub mod optimizer;
pub mod pod;
pub mod sensitivity;
pub mod sparse;

pub use error::{Error, Result};

/// Scalar type accepted by the linear solvers: `f64`, or `Complex64` for
/// complex-step differentiation.
pub trait Field: nalgebra::ComplexField<RealField = f64> + Copy {}

impl<T: nalgebra::ComplexField<RealField = f64> + Copy> Field for T {}
