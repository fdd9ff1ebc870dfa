//! Density-model registry: every approximation method behind one
//! fit/evaluate/sample interface, plus the versioned JSON model envelope.

use std::any::Any;
use std::fmt::Debug;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::gp::{fit_gp, GpModel, Kernel, DEFAULT_FOLDS};
use crate::kde::{fit_kde, KdeModel};
use crate::marginals::MarginalKind;
use crate::mixture::{fit_gmm, fit_truncated_gmm, GmModel, TgmModel, DEFAULT_G_MAX};
use crate::sample::{Bounds, SampleSet};
use crate::transform::Transform;
use crate::vine::{fit_vine, VineModel};

pub const SCHEMA_VERSION: u32 = 1;

pub trait DensityModel: Send + Sync + Debug {
    /// Registry name of the method that produced the model.
    fn method(&self) -> &str;
    fn dim(&self) -> usize;
    fn log_pdf(&self, x: &[f64]) -> f64;
    fn pdf(&self, x: &[f64]) -> f64 {
        self.log_pdf(x).exp()
    }
    fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>>;
    fn payload(&self) -> Result<Value>;
    /// Support box the model was fitted for, if any.
    fn bounds(&self) -> Option<&Bounds> {
        None
    }
    fn as_any(&self) -> &dyn Any;
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub bounds: Option<Bounds>,
    pub seed: u64,
    pub g_max: usize,
    pub folds: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { bounds: None, seed: 0, g_max: DEFAULT_G_MAX, folds: DEFAULT_FOLDS }
    }
}

impl FitConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn with_bounds(mut self, bounds: Option<Bounds>) -> Self {
        self.bounds = bounds;
        self
    }
}

pub trait Estimator: Send + Sync {
    fn name(&self) -> &'static str;
    /// Whether the fitted density itself respects `FitConfig::bounds`.
    fn handles_bounds(&self) -> bool;
    fn fit(&self, samples: &SampleSet, cfg: &FitConfig) -> Result<Box<dyn DensityModel>>;
    fn load(&self, payload: &Value) -> Result<Box<dyn DensityModel>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformMode {
    None,
    Auto,
}

impl std::str::FromStr for TransformMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "auto" => Ok(Self::Auto),
            other => Err(Error::InvalidInput(format!("transform must be `auto` or `none`, got `{other}`"))),
        }
    }
}

// Model implementations.

impl DensityModel for KdeModel {
    fn method(&self) -> &str {
        "kde"
    }
    fn dim(&self) -> usize {
        KdeModel::dim(self)
    }
    fn log_pdf(&self, x: &[f64]) -> f64 {
        KdeModel::log_pdf(self, x)
    }
    fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        Ok(KdeModel::sample(self, n, seed))
    }
    fn payload(&self) -> Result<Value> {
        self.to_payload()
    }
    fn as_any(&self) -> &dyn Any {
        self
    }
}

impl DensityModel for GmModel {
    fn method(&self) -> &str {
        "gmm"
    }
    fn dim(&self) -> usize {
        GmModel::dim(self)
    }
    fn log_pdf(&self, x: &[f64]) -> f64 {
        GmModel::log_pdf(self, x)
    }
    fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        Ok(GmModel::sample(self, n, seed))
    }
    fn payload(&self) -> Result<Value> {
        self.to_payload()
    }
    fn as_any(&self) -> &dyn Any {
        self
    }
}

impl DensityModel for TgmModel {
    fn method(&self) -> &str {
        "tgmm"
    }
    fn dim(&self) -> usize {
        TgmModel::dim(self)
    }
    fn log_pdf(&self, x: &[f64]) -> f64 {
        TgmModel::log_pdf(self, x)
    }
    fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        TgmModel::sample(self, n, seed)
    }
    fn payload(&self) -> Result<Value> {
        self.to_payload()
    }
    fn bounds(&self) -> Option<&Bounds> {
        Some(TgmModel::bounds(self))
    }
    fn as_any(&self) -> &dyn Any {
        self
    }
}

impl DensityModel for VineModel {
    fn method(&self) -> &str {
        match self.marginals()[0].kind() {
            MarginalKind::EcdfKd => "vine-ecdf",
            MarginalKind::ParetoTail => "vine-pareto",
            MarginalKind::ParamMixture => "vine-mixture",
        }
    }
    fn dim(&self) -> usize {
        VineModel::dim(self)
    }
    fn log_pdf(&self, x: &[f64]) -> f64 {
        VineModel::log_pdf(self, x)
    }
    fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        VineModel::sample(self, n, seed)
    }
    fn payload(&self) -> Result<Value> {
        self.to_payload()
    }
    fn as_any(&self) -> &dyn Any {
        self
    }
}

impl DensityModel for GpModel {
    fn method(&self) -> &str {
        match self.kernel() {
            Kernel::Se => "gp-se",
            Kernel::Matern32 => "gp-matern32",
        }
    }
    fn dim(&self) -> usize {
        GpModel::dim(self)
    }
    fn log_pdf(&self, x: &[f64]) -> f64 {
        GpModel::log_pdf(self, x)
    }
    fn pdf(&self, x: &[f64]) -> f64 {
        GpModel::pdf(self, x)
    }
    fn sample(&self, _n: usize, _seed: u64) -> Result<Vec<Vec<f64>>> {
        Err(Error::Unsupported("sampling from a Gaussian-process density".into()))
    }
    fn payload(&self) -> Result<Value> {
        self.to_payload()
    }
    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// A model fitted on transformed (unbounded) coordinates, evaluated and
/// sampled on the original bounded space.
#[derive(Debug)]
pub struct TransformedModel {
    inner: Box<dyn DensityModel>,
    bounds: Bounds,
    transform: Transform,
}

impl TransformedModel {
    pub fn new(inner: Box<dyn DensityModel>, bounds: Bounds) -> Result<Self> {
        if inner.dim() != bounds.dim() {
            return Err(Error::InvalidBounds(format!("model has dimension {}, bounds {}", inner.dim(), bounds.dim())));
        }
        let transform = Transform::from_bounds(&bounds);
        Ok(Self { inner, bounds, transform })
    }

    pub fn inner(&self) -> &dyn DensityModel {
        self.inner.as_ref()
    }

    pub fn transform(&self) -> &Transform {
        &self.transform
    }
}

impl DensityModel for TransformedModel {
    fn method(&self) -> &str {
        self.inner.method()
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn log_pdf(&self, x: &[f64]) -> f64 {
        match (self.transform.forward(x), self.transform.log_jacobian(x)) {
            (Ok(y), Ok(lj)) => self.inner.log_pdf(&y) + lj,
            _ => f64::NEG_INFINITY,
        }
    }
    fn pdf(&self, x: &[f64]) -> f64 {
        match (self.transform.forward(x), self.transform.log_jacobian(x)) {
            (Ok(y), Ok(lj)) => self.inner.pdf(&y) * lj.exp(),
            _ => 0.0,
        }
    }
    fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        Ok(self.transform.inverse_many(&self.inner.sample(n, seed)?))
    }
    fn payload(&self) -> Result<Value> {
        self.inner.payload()
    }
    fn bounds(&self) -> Option<&Bounds> {
        Some(&self.bounds)
    }
    fn as_any(&self) -> &dyn Any {
        self
    }
}

// Estimators.

struct KdeEstimator;
struct GmmEstimator;
struct TgmmEstimator;
struct VineEstimator(&'static str, MarginalKind);
struct GpEstimator(&'static str, Kernel);

impl Estimator for KdeEstimator {
    fn name(&self) -> &'static str {
        "kde"
    }
    fn handles_bounds(&self) -> bool {
        false
    }
    fn fit(&self, samples: &SampleSet, _cfg: &FitConfig) -> Result<Box<dyn DensityModel>> {
        Ok(Box::new(fit_kde(samples)?))
    }
    fn load(&self, payload: &Value) -> Result<Box<dyn DensityModel>> {
        Ok(Box::new(KdeModel::from_payload(payload)?))
    }
}

impl Estimator for GmmEstimator {
    fn name(&self) -> &'static str {
        "gmm"
    }
    fn handles_bounds(&self) -> bool {
        false
    }
    fn fit(&self, samples: &SampleSet, cfg: &FitConfig) -> Result<Box<dyn DensityModel>> {
        Ok(Box::new(fit_gmm(samples, cfg.g_max, cfg.seed)?))
    }
    fn load(&self, payload: &Value) -> Result<Box<dyn DensityModel>> {
        Ok(Box::new(GmModel::from_payload(payload)?))
    }
}

impl Estimator for TgmmEstimator {
    fn name(&self) -> &'static str {
        "tgmm"
    }
    fn handles_bounds(&self) -> bool {
        true
    }
    fn fit(&self, samples: &SampleSet, cfg: &FitConfig) -> Result<Box<dyn DensityModel>> {
        let bounds = cfg.bounds.clone().unwrap_or_else(|| Bounds::unbounded(samples.dim()));
        Ok(Box::new(fit_truncated_gmm(samples, &bounds, cfg.g_max, cfg.seed)?))
    }
    fn load(&self, payload: &Value) -> Result<Box<dyn DensityModel>> {
        Ok(Box::new(TgmModel::from_payload(payload)?))
    }
}

impl Estimator for VineEstimator {
    fn name(&self) -> &'static str {
        self.0
    }
    fn handles_bounds(&self) -> bool {
        true
    }
    fn fit(&self, samples: &SampleSet, cfg: &FitConfig) -> Result<Box<dyn DensityModel>> {
        Ok(Box::new(fit_vine(samples, self.1, cfg.bounds.as_ref(), cfg.g_max, cfg.seed)?))
    }
    fn load(&self, payload: &Value) -> Result<Box<dyn DensityModel>> {
        Ok(Box::new(VineModel::from_payload(payload)?))
    }
}

impl Estimator for GpEstimator {
    fn name(&self) -> &'static str {
        self.0
    }
    fn handles_bounds(&self) -> bool {
        false
    }
    fn fit(&self, samples: &SampleSet, cfg: &FitConfig) -> Result<Box<dyn DensityModel>> {
        Ok(Box::new(fit_gp(samples, self.1, cfg.folds, cfg.seed)?))
    }
    fn load(&self, payload: &Value) -> Result<Box<dyn DensityModel>> {
        Ok(Box::new(GpModel::from_payload(payload)?))
    }
}

static REGISTRY: [&dyn Estimator; 8] = [
    &KdeEstimator,
    &GmmEstimator,
    &TgmmEstimator,
    &VineEstimator("vine-ecdf", MarginalKind::EcdfKd),
    &VineEstimator("vine-pareto", MarginalKind::ParetoTail),
    &VineEstimator("vine-mixture", MarginalKind::ParamMixture),
    &GpEstimator("gp-se", Kernel::Se),
    &GpEstimator("gp-matern32", Kernel::Matern32),
];

pub fn estimators() -> &'static [&'static dyn Estimator] {
    &REGISTRY
}

pub fn method_names() -> Vec<&'static str> {
    REGISTRY.iter().map(|e| e.name()).collect()
}

pub fn estimator(name: &str) -> Result<&'static dyn Estimator> {
    REGISTRY.iter().copied().find(|e| e.name() == name).ok_or_else(|| Error::UnknownMethod(name.to_string()))
}

/// Fits `method`. With `TransformMode::Auto` and bounds, the samples are
/// mapped to the unbounded space first and the result is wrapped so that it
/// evaluates on the original space with the Jacobian correction.
pub fn fit_model(method: &str, samples: &SampleSet, cfg: &FitConfig, mode: TransformMode) -> Result<Box<dyn DensityModel>> {
    let est = estimator(method)?;
    match (&cfg.bounds, mode) {
        (Some(bounds), TransformMode::Auto) if !bounds.is_unbounded() => {
            let t = Transform::from_bounds(bounds);
            let moved = SampleSet::new(t.forward_many(&samples.to_rows())?, samples.log_post().map(|lp| {
                // Densities on the transformed space carry the Jacobian.
                samples.rows().zip(lp).map(|(x, v)| v - t.log_jacobian(x).unwrap_or(f64::INFINITY)).collect()
            }), samples.weights().map(<[f64]>::to_vec))?;
            let inner_cfg = FitConfig { bounds: None, ..cfg.clone() };
            let inner = est.fit(&moved, &inner_cfg)?;
            Ok(Box::new(TransformedModel::new(inner, bounds.clone())?))
        }
        _ => {
            if let Some(b) = &cfg.bounds {
                if !est.handles_bounds() && !b.is_unbounded() {
                    log::info!("{method} ignores bounds; densities may leak outside the box");
                }
            }
            est.fit(samples, cfg)
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Envelope {
    schema_version: u32,
    method: String,
    bounds: Option<Bounds>,
    transform: TransformMode,
    payload: Value,
}

pub fn to_envelope(model: &dyn DensityModel) -> Result<Value> {
    let transformed = model.as_any().downcast_ref::<TransformedModel>().is_some();
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        method: model.method().to_string(),
        bounds: model.bounds().cloned(),
        transform: if transformed { TransformMode::Auto } else { TransformMode::None },
        payload: model.payload()?,
    };
    Ok(serde_json::to_value(env)?)
}

pub fn from_envelope(v: &Value) -> Result<Box<dyn DensityModel>> {
    let env: Envelope = serde_json::from_value(v.clone()).map_err(|e| Error::Format(e.to_string()))?;
    if env.schema_version != SCHEMA_VERSION {
        return Err(Error::Format(format!("unsupported schema version {}", env.schema_version)));
    }
    let inner = estimator(&env.method)?.load(&env.payload)?;
    match env.transform {
        TransformMode::None => Ok(inner),
        TransformMode::Auto => {
            let bounds = env.bounds.ok_or_else(|| Error::Format("transformed model without bounds".into()))?;
            Ok(Box::new(TransformedModel::new(inner, bounds)?))
        }
    }
}

pub fn save_model(model: &dyn DensityModel, path: impl AsRef<std::path::Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(&to_envelope(model)?)?;
    crate::io::write_atomic(path.as_ref(), text.as_bytes())
}

pub fn load_model(path: impl AsRef<std::path::Path>) -> Result<Box<dyn DensityModel>> {
    let text = std::fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text)?;
    from_envelope(&v)
}
