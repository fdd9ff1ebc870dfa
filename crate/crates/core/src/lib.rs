pub mod error;
pub mod eval;
pub mod experiments;
pub mod gp;
pub mod inference;
pub mod io;
pub mod kde;
pub mod marginals;
pub mod mixture;
pub mod model;
pub mod models;
pub mod numeric;
pub mod sample;
pub mod transform;
pub mod vine;

pub use error::{Error, Result};
pub use sample::{Bounds, SampleSet};
pub use model::{DensityModel, Estimator, FitConfig, TransformMode};
pub use transform::Transform;
