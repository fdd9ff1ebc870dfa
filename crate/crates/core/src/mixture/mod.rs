//! Gaussian mixtures, truncated Gaussian mixtures and 1-D parametric mixtures.

mod gmm;
mod mvn_box;
mod truncated;
mod univariate;

pub use gmm::{bic, fit_gmm, fit_gmm_k, Component, GmModel, EM_MAX_ITER, EM_TOL, RESTARTS};
pub use mvn_box::{mvn_box_probability, truncated_moments, BoxProbability, TruncatedMoments};
pub use truncated::{fit_truncated_gmm, fit_truncated_gmm_k, TgmModel};
pub use univariate::{fit_mixture_1d, fit_mixture_1d_family, Component1d, Family1d, Mixture1d};

/// Default upper limit on the number of components tried by BIC selection.
pub const DEFAULT_G_MAX: usize = 9;
