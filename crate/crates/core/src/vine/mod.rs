//! Pair copulas and regular vines.

mod bicop;
mod tau;

pub use bicop::{fit_bicop, Bicop, Family, CLAMP, MIN_PAIRS};
pub use tau::kendall_tau;
mod rvine;

pub use rvine::{fit_vine, VineEdge, VineModel, MAX_DIM};
