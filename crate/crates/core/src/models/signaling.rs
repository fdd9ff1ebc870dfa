//! Three-node signaling cascade with a drug-response factor and Student-t
//! observation noise.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub const STEEPNESS: f64 = 9.19024;
pub const NOISE_SIGMA: f64 = 0.2;
pub const NOISE_NU: f64 = 3.0;
pub const PARAM_NAMES: [&str; 10] = ["b1", "b2", "b3", "a1", "a2", "a3", "a4", "k", "s", "h"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalingParams {
    pub b: [f64; 3],
    pub a: [f64; 4],
    pub k: f64,
    pub s: f64,
    pub h: f64,
}

impl SignalingParams {
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 10 {
            return Err(Error::InvalidInput(format!("signaling model has 10 parameters, got {}", v.len())));
        }
        Ok(Self { b: [v[0], v[1], v[2]], a: [v[3], v[4], v[5], v[6]], k: v[7], s: v[8], h: v[9] })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.b.to_vec();
        v.extend(self.a);
        v.extend([self.k, self.s, self.h]);
        v
    }
}

/// Logistic activation centred at 0.5.
pub fn activation(x: f64) -> f64 {
    1.0 / (1.0 + (-STEEPNESS * (x - 0.5)).exp())
}

/// Remaining activity at inhibitor concentration `w`.
pub fn drug_response(w: f64, k: f64, s: f64, h: f64) -> f64 {
    k + (1.0 - k) / (10f64.powf(s * (w - h)) + 1.0)
}

/// Mean observations (p, q) for amplification `m`, mutation `n` and
/// concentration `w`.
pub fn signaling_predict(p: &SignalingParams, m: f64, n: f64, w: f64) -> (f64, f64) {
    let x = activation(p.b[0] + p.a[0] * m + p.a[1] * n) * drug_response(w, p.k, p.s, p.h);
    let y = activation(p.b[1] + p.a[2] * x);
    let z = activation(p.b[2] + p.a[3] * y);
    (y, z)
}

/// Location-scale Student-t log density.
pub fn student_t_logpdf(x: f64, mu: f64, sigma: f64, nu: f64) -> f64 {
    let r = (x - mu) / sigma;
    ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (nu * std::f64::consts::PI).ln() - sigma.ln()
        - (nu + 1.0) / 2.0 * (r * r / nu).ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalingRow {
    pub m: f64,
    pub n: f64,
    pub w: f64,
    pub p: f64,
    pub q: f64,
}

/// Which observables of each row enter the likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observables {
    Both,
    P,
    Q,
}

pub fn signaling_loglik(p: &SignalingParams, rows: &[SignalingRow]) -> f64 {
    signaling_loglik_of(p, rows, Observables::Both)
}

pub fn signaling_loglik_of(p: &SignalingParams, rows: &[SignalingRow], which: Observables) -> f64 {
    rows.iter()
        .map(|r| {
            let (y, z) = signaling_predict(p, r.m, r.n, r.w);
            let lp = student_t_logpdf(r.p, y, NOISE_SIGMA, NOISE_NU);
            let lq = student_t_logpdf(r.q, z, NOISE_SIGMA, NOISE_NU);
            match which {
                Observables::Both => lp + lq,
                Observables::P => lp,
                Observables::Q => lq,
            }
        })
        .sum()
}

/// Uniform prior box of the ten parameters, in `PARAM_NAMES` order.
pub fn prior_box() -> crate::sample::Bounds {
    let lo = vec![-1.0, -1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let hi = vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 1.0, 5.0, 2.0];
    crate::sample::Bounds::new(lo, hi).expect("static box is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalingConfig {
    pub version: u32,
    /// Parameters generating the untreated (w = 0) rows.
    pub pre: SignalingParams,
    /// Parameters generating the treated rows. Differs from `pre` so the two
    /// datasets pull the posterior in different directions.
    pub post: SignalingParams,
    pub concentrations: Vec<f64>,
    /// Replicate cell lines per (m, n) combination.
    pub replicates: usize,
}

impl Default for SignalingConfig {
    fn default() -> Self {
        let pre = SignalingParams { b: [0.2, 0.6, 0.1], a: [0.8, 0.6, 1.6, 1.2], k: 0.2, s: 2.0, h: 0.5 };
        let mut post = pre;
        post.b[1] = -0.4;
        post.a[2] = 0.4;
        Self { version: 1, pre, post, concentrations: vec![0.0, 0.25, 0.5, 1.0, 2.0, 4.0], replicates: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalingSynthetic {
    pub config: SignalingConfig,
    pub seed: u64,
    pub untreated: Vec<SignalingRow>,
    pub treated: Vec<SignalingRow>,
}

/// Four (m, n) combinations, each `replicates` times, observed
/// at every configured concentration with Student-t noise.
pub fn make_signaling_synthetic(config: &SignalingConfig, seed: u64) -> Result<SignalingSynthetic> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StudentT};
    let t = StudentT::new(NOISE_NU).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (mut untreated, mut treated) = (Vec::new(), Vec::new());
    for _ in 0..config.replicates {
        for (m, n) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
            for &w in &config.concentrations {
                let params = if w == 0.0 { &config.pre } else { &config.post };
                let (y, z) = signaling_predict(params, m, n, w);
                let row = SignalingRow {
                    m,
                    n,
                    w,
                    p: y + NOISE_SIGMA * t.sample(&mut rng),
                    q: z + NOISE_SIGMA * t.sample(&mut rng),
                };
                if w == 0.0 {
                    untreated.push(row);
                } else {
                    treated.push(row);
                }
            }
        }
    }
    Ok(SignalingSynthetic { config: config.clone(), seed, untreated, treated })
}
