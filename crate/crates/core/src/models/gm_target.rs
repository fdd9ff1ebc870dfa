use std::any::Any;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::mixture::{Component, GmModel};
use crate::model::DensityModel;

/// Two-component Gaussian mixture target with weights 2/3 and 1/3.
#[derive(Debug, Clone)]
pub struct GmTarget {
    model: GmModel,
}

fn random_cov(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let a: Vec<f64> = (0..d * d).map(|_| StandardNormal.sample(rng)).collect();
    let mut s = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            s[i * d + j] = (0..d).map(|k| a[k * d + i] * a[k * d + j]).sum::<f64>();
        }
        s[i * d + i] += d as f64;
    }
    s
}

/// Covariances are AᵀA + D·I with standard-normal A; μ₁ = 0, and μ₂ = μ₁ + 10
/// in every coordinate when `separated`.
pub fn gm_target(d: usize, separated: bool, seed: u64) -> Result<GmTarget> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu1 = vec![0.0; d];
    let mu2 = if separated { vec![10.0; d] } else { vec![0.0; d] };
    let c1 = Component::new(mu1, random_cov(d, &mut rng))?;
    let c2 = Component::new(mu2, random_cov(d, &mut rng))?;
    Ok(GmTarget { model: GmModel::new(vec![2.0 / 3.0, 1.0 / 3.0], vec![c1, c2])? })
}

impl GmTarget {
    pub fn mixture(&self) -> &GmModel {
        &self.model
    }
}

impl DensityModel for GmTarget {
    fn method(&self) -> &str {
        "gm-target"
    }
    fn dim(&self) -> usize {
        self.model.dim()
    }
    fn log_pdf(&self, x: &[f64]) -> f64 {
        self.model.log_pdf(x)
    }
    fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        Ok(self.model.sample(n, seed))
    }
    fn payload(&self) -> Result<serde_json::Value> {
        self.model.to_payload()
    }
    fn as_any(&self) -> &dyn Any {
        self
    }
}
