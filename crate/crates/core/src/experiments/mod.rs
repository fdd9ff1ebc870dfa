//! Experiment suites on synthetic problems. Each suite takes a serde config
//! with defaults and returns a serializable report.

mod bench;
mod lv;
mod recovery;
mod signaling;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::ks_statistic;
use crate::inference::{run_mh, McmcConfig, McmcOutput, PosteriorSpec};
use crate::model::{fit_model, DensityModel, FitConfig, TransformMode};
use crate::sample::{Bounds, SampleSet};

pub use bench::{run_complexity_bench, BenchConfig, BenchReport, TimingRow};
pub use lv::{run_lv_bounded, run_lv_sequential, LvBoundedConfig, LvBoundedReport, LvSequentialConfig, LvSequentialReport};
pub use recovery::{run_gm_recovery, RecoveryConfig, RecoveryReport, RecoveryRow};
pub use signaling::{run_signaling_split, SignalingSplitConfig, SignalingSplitReport};

pub const SUITES: [&str; 5] = ["gm-recovery", "lv-sequential", "lv-bounded", "signaling-split", "complexity-bench"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_samples: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl ChainConfig {
    pub fn new(n_samples: usize, burn_in: usize, thin: usize) -> Self {
        Self { n_samples, burn_in, thin }
    }

    fn mcmc(&self, seed: u64, init: Option<Vec<f64>>) -> McmcConfig {
        McmcConfig { n_samples: self.n_samples, burn_in: self.burn_in, thin: self.thin, seed, init }
    }
}

/// Per-parameter KS distances of one approximation against the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodKs {
    pub method: String,
    pub ks: Vec<f64>,
    pub max_ks: f64,
    pub acceptance: f64,
}

impl MethodKs {
    fn new(method: &str, ks: Vec<f64>, acceptance: f64) -> Self {
        let max_ks = ks.iter().copied().fold(0.0, f64::max);
        Self { method: method.to_string(), ks, max_ks, acceptance }
    }
}

/// "gmm" fits untransformed, "gmm:auto" fits on the unbounded transform of
/// the prior box.
pub fn parse_method(spec: &str) -> Result<(&str, TransformMode)> {
    match spec.split_once(':') {
        None => Ok((spec, TransformMode::None)),
        Some((m, t)) => Ok((m, t.parse()?)),
    }
}

pub fn fit_method(spec: &str, samples: &SampleSet, bounds: Option<&Bounds>, seed: u64, g_max: usize) -> Result<Box<dyn DensityModel>> {
    let (method, mode) = parse_method(spec)?;
    let cfg = FitConfig { bounds: bounds.cloned(), seed, g_max, ..FitConfig::with_seed(seed) };
    fit_model(method, samples, &cfg, mode)
}

/// KS between column `a_cols[j]` of `a` and column `b_cols[j]` of `b`.
pub(crate) fn column_ks(a: &SampleSet, a_cols: &[usize], b: &SampleSet, b_cols: &[usize]) -> Vec<f64> {
    a_cols.iter().zip(b_cols).map(|(&i, &j)| ks_statistic(&a.column(i), a.weights(), &b.column(j), b.weights())).collect()
}

/// Second-stage chain whose prior is `approx` on the coordinates `cols`
/// times `rest_prior` on the full vector. Chains start from stage-one draws.
#[allow(clippy::too_many_arguments)]
pub fn approx_prior_chain(
    approx: &dyn DensityModel,
    cols: &[usize],
    rest_prior: &(dyn Fn(&[f64]) -> f64 + Sync),
    loglik: &(dyn Fn(&[f64]) -> f64 + Sync),
    bounds: &Bounds,
    starts: &[Vec<f64>],
    chain: &ChainConfig,
    seed: u64,
) -> Result<McmcOutput> {
    if starts.is_empty() {
        return Err(Error::InitFailure("no starting points".into()));
    }
    let spec = PosteriorSpec::new(
        Box::new(|x: &[f64]| loglik(x)),
        Box::new(move |x: &[f64]| {
            let sub: Vec<f64> = cols.iter().map(|&j| x[j]).collect();
            let a = approx.log_pdf(&sub);
            if a == f64::NEG_INFINITY {
                return a;
            }
            a + rest_prior(x)
        }),
        bounds.clone(),
    )
    .with_prior_draw(Box::new(move |rng: &mut ChaCha8Rng| Some(starts[rng.random_range(0..starts.len())].clone())));
    run_mh(&spec, &chain.mcmc(seed, None))
}

pub(crate) fn chain_from(
    loglik: &(dyn Fn(&[f64]) -> f64 + Sync),
    logprior: &(dyn Fn(&[f64]) -> f64 + Sync),
    bounds: &Bounds,
    init: Vec<f64>,
    chain: &ChainConfig,
    seed: u64,
) -> Result<McmcOutput> {
    let spec = PosteriorSpec::new(Box::new(|x: &[f64]| loglik(x)), Box::new(|x: &[f64]| logprior(x)), bounds.clone());
    run_mh(&spec, &chain.mcmc(seed, Some(init)))
}

pub(crate) fn sub_seed(seed: u64, k: u64) -> u64 {
    ChaCha8Rng::seed_from_u64(seed ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15)).random()
}

/// Parses a config from JSON, falling back to defaults for missing keys.
pub fn config_from_json<T: for<'de> Deserialize<'de>>(v: &serde_json::Value) -> Result<T> {
    Ok(serde_json::from_value(v.clone())?)
}
