//! Predator-prey model with predation split into killing and stress
//! effects, its observation models, and the inference problems built on it.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ode::{dopri45, Tolerance};
use crate::error::{Error, Result};
use crate::numeric::norm_logpdf;
use crate::sample::Bounds;

pub const SIGMA_DENSITY: f64 = 0.15;
pub const SIGMA_NATALITY: f64 = 2.0;
pub const RATE_NAMES: [&str; 5] = ["alpha", "beta_kill", "beta_stress", "delta", "gamma"];

static STIFF_FAILURES: AtomicU64 = AtomicU64::new(0);

/// Number of likelihood evaluations that returned -inf because the
/// integrator failed.
pub fn stiffness_failures() -> u64 {
    STIFF_FAILURES.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LvParams {
    pub alpha: f64,
    pub beta_kill: f64,
    pub beta_stress: f64,
    pub delta: f64,
    pub gamma: f64,
}

impl LvParams {
    pub fn from_slice(v: &[f64]) -> Self {
        Self { alpha: v[0], beta_kill: v[1], beta_stress: v[2], delta: v[3], gamma: v[4] }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.alpha, self.beta_kill, self.beta_stress, self.delta, self.gamma]
    }

    pub fn natality(&self, y: f64) -> f64 {
        2.0 * (self.alpha - self.beta_stress * y).exp()
    }

    /// Interior fixed point (x*, y*).
    pub fn equilibrium(&self) -> (f64, f64) {
        (self.gamma / self.delta, self.alpha / (self.beta_kill + self.beta_stress))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub natality: Vec<f64>,
}

/// Hare density x and lynx density y from (x0, y0) at `t_grid[0]`.
pub fn lv_simulate(p: &LvParams, x0: f64, y0: f64, t_grid: &[f64], tol: Tolerance) -> Result<Trajectory> {
    let rates = p.to_vec();
    // a zero stress term is allowed so the classical model is a special case
    if rates.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || [x0, y0].iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("rates must be non-negative and initial conditions positive".into()));
    }
    let f = |_: f64, s: &[f64], ds: &mut [f64]| {
        let (x, y) = (s[0], s[1]);
        ds[0] = p.alpha * x - (p.beta_kill + p.beta_stress) * x * y;
        ds[1] = p.delta * x * y - p.gamma * y;
    };
    let states = dopri45(f, &[x0, y0], t_grid, tol)?;
    let x: Vec<f64> = states.iter().map(|s| s[0]).collect();
    let y: Vec<f64> = states.iter().map(|s| s[1]).collect();
    let natality = y.iter().map(|&v| p.natality(v)).collect();
    Ok(Trajectory { t: t_grid.to_vec(), x, y, natality })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    /// Lynx density only.
    Lynx,
    /// Hare density and natality.
    Hare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvDataset {
    pub kind: Observation,
    pub t: Vec<f64>,
    /// Observed densities: lynx for `Lynx`, hare for `Hare`.
    pub density: Vec<f64>,
    /// Observed natality (hare data only).
    pub natality: Vec<f64>,
}

fn loglik_from(traj: &Trajectory, data: &LvDataset) -> f64 {
    let mut ll = 0.0;
    match data.kind {
        Observation::Lynx => {
            for (o, m) in data.density.iter().zip(&traj.y) {
                ll += norm_logpdf((o - m) / SIGMA_DENSITY) - SIGMA_DENSITY.ln();
            }
        }
        Observation::Hare => {
            for (o, m) in data.density.iter().zip(&traj.x) {
                ll += norm_logpdf((o - m) / SIGMA_DENSITY) - SIGMA_DENSITY.ln();
            }
            for (o, m) in data.natality.iter().zip(&traj.natality) {
                ll += norm_logpdf((o - m) / SIGMA_NATALITY) - SIGMA_NATALITY.ln();
            }
        }
    }
    ll
}

/// Gaussian log-likelihood of one dataset. Integrator failures give -inf and
/// are counted.
pub fn lv_loglik(p: &LvParams, x0: f64, y0: f64, data: &LvDataset) -> f64 {
    match lv_simulate(p, x0, y0, &data.t, Tolerance::default()) {
        Ok(traj) => loglik_from(&traj, data),
        Err(Error::StiffnessFailure(_)) => {
            STIFF_FAILURES.fetch_add(1, Ordering::Relaxed);
            f64::NEG_INFINITY
        }
        Err(_) => f64::NEG_INFINITY,
    }
}

/// True parameters and observation design for synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvConfig {
    pub version: u32,
    pub params: LvParams,
    /// (x0, y0) of the lynx-style dataset.
    pub lynx_init: [f64; 2],
    /// (x0, y0) of the hare-style dataset.
    pub hare_init: [f64; 2],
    pub n_times: usize,
    /// Prior sd of every log-scale parameter, centred on the true value.
    pub log_prior_sd: f64,
    /// Natural-scale uniform prior box as multiples of the true value.
    pub box_low: f64,
    pub box_high: f64,
}

impl Default for LvConfig {
    fn default() -> Self {
        Self {
            version: 1,
            params: LvParams { alpha: 0.55, beta_kill: 0.8, beta_stress: 0.3, delta: 1.5, gamma: 0.75 },
            lynx_init: [0.8, 0.3],
            hare_init: [0.3, 0.6],
            n_times: 20,
            log_prior_sd: 0.4,
            box_low: 0.85,
            box_high: 1.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvSynthetic {
    pub config: LvConfig,
    pub seed: u64,
    pub noise_scale: f64,
    pub lynx: LvDataset,
    pub hare: LvDataset,
}

/// Simulates both observation schemes at annual times and adds Gaussian
/// noise with the likelihood's σ multiplied by `noise_scale`.
pub fn make_lv_synthetic(config: &LvConfig, noise_scale: f64, seed: u64) -> Result<LvSynthetic> {
    let t: Vec<f64> = (0..config.n_times).map(|i| i as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = |sd: f64| -> f64 {
        if noise_scale == 0.0 {
            0.0
        } else {
            Normal::new(0.0, sd * noise_scale).expect("positive sd").sample(&mut rng)
        }
    };
    let [lx, ly] = config.lynx_init;
    let lt = lv_simulate(&config.params, lx, ly, &t, Tolerance::default())?;
    let lynx = LvDataset {
        kind: Observation::Lynx,
        t: t.clone(),
        density: lt.y.iter().map(|v| v + noise(SIGMA_DENSITY)).collect(),
        natality: Vec::new(),
    };
    let [hx, hy] = config.hare_init;
    let ht = lv_simulate(&config.params, hx, hy, &t, Tolerance::default())?;
    let hare = LvDataset {
        kind: Observation::Hare,
        t: t.clone(),
        density: ht.x.iter().map(|v| v + noise(SIGMA_DENSITY)).collect(),
        natality: ht.natality.iter().map(|v| v + noise(SIGMA_NATALITY)).collect(),
    };
    Ok(LvSynthetic { config: config.clone(), seed, noise_scale, lynx, hare })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Parameters are logarithms; diagonal normal prior.
    Log,
    /// Parameters on their natural scale; uniform box prior.
    Natural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Rates plus lynx initial conditions (7 parameters).
    Lynx,
    /// Rates plus hare initial conditions (7 parameters).
    Hare,
    /// Rates plus both pairs of initial conditions (9 parameters).
    Joint,
}

/// Posterior ingredients for one stage: parameter layout, prior and
/// likelihood, all on the chosen scale.
#[derive(Debug, Clone)]
pub struct LvProblem {
    pub data: LvSynthetic,
    pub scale: Scale,
}

impl LvProblem {
    pub fn new(data: LvSynthetic, scale: Scale) -> Self {
        Self { data, scale }
    }

    pub fn names(&self, stage: Stage) -> Vec<String> {
        let mut v: Vec<String> = RATE_NAMES.iter().map(|s| s.to_string()).collect();
        match stage {
            Stage::Lynx => v.extend(["lynx_x0".into(), "lynx_y0".into()]),
            Stage::Hare => v.extend(["hare_x0".into(), "hare_y0".into()]),
            Stage::Joint => v.extend(["lynx_x0".into(), "lynx_y0".into(), "hare_x0".into(), "hare_y0".into()]),
        }
        v
    }

    pub fn dim(&self, stage: Stage) -> usize {
        if stage == Stage::Joint {
            9
        } else {
            7
        }
    }

    /// True parameter vector on the problem's scale.
    pub fn truth(&self, stage: Stage) -> Vec<f64> {
        let c = &self.data.config;
        let mut v = c.params.to_vec();
        match stage {
            Stage::Lynx => v.extend(c.lynx_init),
            Stage::Hare => v.extend(c.hare_init),
            Stage::Joint => {
                v.extend(c.lynx_init);
                v.extend(c.hare_init);
            }
        }
        match self.scale {
            Scale::Log => v.iter().map(|x| x.ln()).collect(),
            Scale::Natural => v,
        }
    }

    fn natural(&self, theta: &[f64]) -> Vec<f64> {
        match self.scale {
            Scale::Log => theta.iter().map(|v| v.exp()).collect(),
            Scale::Natural => theta.to_vec(),
        }
    }

    pub fn bounds(&self, stage: Stage) -> Bounds {
        let d = self.dim(stage);
        match self.scale {
            Scale::Log => Bounds::unbounded(d),
            Scale::Natural => {
                let t = self.truth(stage);
                let c = &self.data.config;
                Bounds::new(t.iter().map(|v| v * c.box_low).collect(), t.iter().map(|v| v * c.box_high).collect())
                    .expect("positive truth gives a valid box")
            }
        }
    }

    pub fn log_prior(&self, stage: Stage, theta: &[f64]) -> f64 {
        let all: Vec<usize> = (0..self.dim(stage)).collect();
        self.log_prior_of(stage, theta, &all)
    }

    /// Log prior of the coordinates `cols` of `theta` only; both priors
    /// factorize over coordinates.
    pub fn log_prior_of(&self, stage: Stage, theta: &[f64], cols: &[usize]) -> f64 {
        let truth = self.truth(stage);
        match self.scale {
            Scale::Log => {
                let sd = self.data.config.log_prior_sd;
                cols.iter().map(|&j| norm_logpdf((theta[j] - truth[j]) / sd) - sd.ln()).sum()
            }
            Scale::Natural => {
                let b = self.bounds(stage);
                let (lo, hi) = (b.lower(), b.upper());
                let mut lp = 0.0;
                for &j in cols {
                    if !(theta[j] >= lo[j] && theta[j] <= hi[j]) {
                        return f64::NEG_INFINITY;
                    }
                    lp -= (hi[j] - lo[j]).ln();
                }
                lp
            }
        }
    }

    pub fn prior_draw(&self, stage: Stage, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self.scale {
            Scale::Log => {
                let sd = self.data.config.log_prior_sd;
                self.truth(stage).iter().map(|m| m + sd * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
            }
            Scale::Natural => {
                let b = self.bounds(stage);
                b.lower().iter().zip(b.upper()).map(|(l, u)| rng.random_range(*l..*u)).collect()
            }
        }
    }

    pub fn loglik(&self, stage: Stage, theta: &[f64]) -> f64 {
        let v = self.natural(theta);
        let p = LvParams::from_slice(&v[..5]);
        match stage {
            Stage::Lynx => lv_loglik(&p, v[5], v[6], &self.data.lynx),
            Stage::Hare => lv_loglik(&p, v[5], v[6], &self.data.hare),
            Stage::Joint => {
                let a = lv_loglik(&p, v[5], v[6], &self.data.lynx);
                if a == f64::NEG_INFINITY {
                    return a;
                }
                a + lv_loglik(&p, v[7], v[8], &self.data.hare)
            }
        }
    }

    /// Seeded generator for stage-specific prior draws.
    pub fn prior_rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }
}
