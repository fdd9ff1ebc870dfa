//! Gaussian-process regression of posterior density values, normalized
//! analytically.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::numeric::golden_section_min;
use crate::sample::SampleSet;

pub const MIN_SAMPLES: usize = 20;
pub const DEFAULT_FOLDS: usize = 5;
const MAX_JITTER: f64 = 1e-2;
const GRID_POINTS: usize = 12;
const LOG_L_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Se,
    Matern32,
}

impl Kernel {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Se => "se",
            Self::Matern32 => "matern32",
        }
    }

    fn eval_sq(&self, l: f64, r2: f64) -> f64 {
        match self {
            Self::Se => (-r2 / (2.0 * l * l)).exp(),
            Self::Matern32 => {
                let s = 3f64.sqrt() * r2.sqrt() / l;
                (1.0 + s) * (-s).exp()
            }
        }
    }
}

pub fn kernel_eval(kind: Kernel, l: f64, r: f64) -> Result<f64> {
    if !(l > 0.0) {
        return Err(Error::InvalidLengthScale(l));
    }
    Ok(kind.eval_sq(l, r * r))
}

/// Integral of the kernel over R^D.
pub fn kernel_integral(kind: Kernel, l: f64, d: usize) -> f64 {
    let df = d as f64;
    match kind {
        Kernel::Se => (2.0 * PI * l * l).powf(df / 2.0),
        Kernel::Matern32 => {
            // Surface of the unit (D-1)-sphere times the radial integral.
            let ln_sphere = 2f64.ln() + df / 2.0 * PI.ln() - ln_gamma(df / 2.0);
            (ln_sphere + df * (l / 3f64.sqrt()).ln() + (1.0 + df).ln() + ln_gamma(df)).exp()
        }
    }
}

pub fn gp_normalization(kind: Kernel, l: f64, alpha: &[f64], d: usize) -> f64 {
    kernel_integral(kind, l, d) * alpha.iter().sum::<f64>()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Solves (K + jitter·I) α = p, escalating the jitter tenfold on failure.
/// Returns α and the jitter used.
fn solve_jittered(mut k: DMatrix<f64>, p: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = k.nrows();
    let mean_diag = (0..n).map(|i| k[(i, i)]).sum::<f64>() / n as f64;
    let mut jitter = 1e-8 * n as f64 * mean_diag;
    let mut added = 0.0;
    loop {
        for i in 0..n {
            k[(i, i)] += jitter - added;
        }
        added = jitter;
        if let Some(ch) = k.clone().cholesky() {
            let alpha = ch.solve(&DVector::from_column_slice(p));
            if alpha.iter().all(|a| a.is_finite()) {
                return Ok((alpha.as_slice().to_vec(), jitter));
            }
        }
        if jitter >= MAX_JITTER {
            return Err(Error::IllConditioned(jitter));
        }
        jitter = (jitter * 10.0).min(MAX_JITTER);
    }
}

/// Fitted GP density. Evaluation counts the number of negative predictions
/// that were clipped to zero.
#[derive(Debug, Serialize, Deserialize)]
pub struct GpModel {
    d: usize,
    kernel: Kernel,
    #[serde(with = "crate::io::num")]
    length_scale: f64,
    #[serde(with = "crate::io::num")]
    jitter: f64,
    #[serde(with = "crate::io::num")]
    z: f64,
    #[serde(with = "crate::io::num_mat")]
    x: Vec<Vec<f64>>,
    #[serde(with = "crate::io::num_vec")]
    alpha: Vec<f64>,
    #[serde(skip)]
    clip_count: AtomicU64,
}

impl Clone for GpModel {
    fn clone(&self) -> Self {
        Self {
            d: self.d,
            kernel: self.kernel,
            length_scale: self.length_scale,
            jitter: self.jitter,
            z: self.z,
            x: self.x.clone(),
            alpha: self.alpha.clone(),
            clip_count: AtomicU64::new(self.clip_count()),
        }
    }
}

impl GpModel {
    /// Builds the interpolant for a fixed length scale.
    pub fn with_length_scale(x: Vec<Vec<f64>>, p: &[f64], kernel: Kernel, l: f64) -> Result<Self> {
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::InvalidLengthScale(l));
        }
        let d = x.first().map_or(0, Vec::len);
        let k = DMatrix::from_fn(x.len(), x.len(), |i, j| kernel.eval_sq(l, sq_dist(&x[i], &x[j])));
        let (alpha, jitter) = solve_jittered(k, p)?;
        let z = gp_normalization(kernel, l, &alpha, d);
        Ok(Self { d, kernel, length_scale: l, jitter, z, x, alpha, clip_count: AtomicU64::new(0) })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn normalization(&self) -> f64 {
        self.z
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn n_train(&self) -> usize {
        self.x.len()
    }

    pub fn clip_count(&self) -> u64 {
        self.clip_count.load(Ordering::Relaxed)
    }

    /// Predictive mean divided by Z, without clipping.
    pub fn raw_pdf(&self, x: &[f64]) -> f64 {
        let s: f64 = self
            .x
            .iter()
            .zip(&self.alpha)
            .map(|(xi, a)| a * self.kernel.eval_sq(self.length_scale, sq_dist(x, xi)))
            .sum();
        s / self.z
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        let v = self.raw_pdf(x);
        if v < 0.0 {
            self.clip_count.fetch_add(1, Ordering::Relaxed);
            0.0
        } else {
            v
        }
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        self.pdf(x).ln()
    }

    pub fn to_payload(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }

    pub fn from_payload(v: &serde_json::Value) -> Result<Self> {
        let m: Self = serde_json::from_value(v.clone())?;
        if m.x.len() != m.alpha.len() || m.x.iter().any(|r| r.len() != m.d) || !(m.length_scale > 0.0) {
            return Err(Error::Format("gp: inconsistent payload".into()));
        }
        Ok(m)
    }
}

/// Held-out RMSE on the scale of the rescaled training values p, averaged
/// over folds. Candidates whose fold normalization is not positive lose.
fn cv_loss(kernel: Kernel, l: f64, d2: &DMatrix<f64>, p: &[f64], folds: &[Vec<usize>], dim: usize) -> f64 {
    let losses: Vec<f64> = folds
        .par_iter()
        .enumerate()
        .map(|(f, held)| {
            let train: Vec<usize> = folds.iter().enumerate().filter(|(g, _)| *g != f).flat_map(|(_, v)| v.clone()).collect();
            let k = DMatrix::from_fn(train.len(), train.len(), |i, j| kernel.eval_sq(l, d2[(train[i], train[j])]));
            let pt: Vec<f64> = train.iter().map(|&i| p[i]).collect();
            let Ok((alpha, _)) = solve_jittered(k, &pt) else {
                return f64::INFINITY;
            };
            let z = gp_normalization(kernel, l, &alpha, dim);
            if !(z > 0.0) {
                return f64::INFINITY;
            }
            let sse: f64 = held
                .iter()
                .map(|&h| {
                    let pred: f64 = train.iter().zip(&alpha).map(|(&i, a)| a * kernel.eval_sq(l, d2[(h, i)])).sum();
                    (pred - p[h]).powi(2)
                })
                .sum();
            (sse / held.len() as f64).sqrt()
        })
        .collect();
    losses.iter().sum::<f64>() / losses.len() as f64
}

/// Fits the GP with the length scale chosen by k-fold cross-validation:
/// a coarse log-spaced scan followed by golden-section refinement.
pub fn fit_gp(samples: &SampleSet, kernel: Kernel, folds: usize, seed: u64) -> Result<GpModel> {
    let lp = samples.log_post().ok_or(Error::MissingDensities)?;
    let n = samples.len();
    if n < MIN_SAMPLES {
        return Err(Error::InsufficientSamples { needed: MIN_SAMPLES, got: n });
    }
    if folds < 2 || folds > n {
        return Err(Error::InvalidInput(format!("{folds} folds for {n} samples")));
    }
    if lp.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::InvalidSample("log posterior values must be finite or -inf".into()));
    }
    let top = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Err(Error::DegenerateInput("all log posterior values are -inf".into()));
    }
    let p: Vec<f64> = lp.iter().map(|v| (v - top).exp()).collect();
    let x = samples.to_rows();
    let d2 = DMatrix::from_fn(n, n, |i, j| sq_dist(&x[i], &x[j]));
    let (mut d_min, mut d_max) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        for j in i + 1..n {
            let r = d2[(i, j)].sqrt();
            if r > 0.0 {
                d_min = d_min.min(r);
            }
            d_max = d_max.max(r);
        }
    }
    if d_max == 0.0 {
        return Err(Error::DegenerateSample("all training points coincide".into()));
    }

    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_sets: Vec<Vec<usize>> = (0..folds).map(|f| idx.iter().copied().skip(f).step_by(folds).collect()).collect();
    let dim = samples.dim();
    let loss = |log_l: f64| cv_loss(kernel, log_l.exp(), &d2, &p, &fold_sets, dim);

    let (lo, hi) = (d_min.ln(), (10.0 * d_max).ln());
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let grid: Vec<(f64, f64)> = (0..GRID_POINTS).map(|i| lo + i as f64 * step).map(|g| (g, loss(g))).collect();
    let best = (0..GRID_POINTS).min_by(|&a, &b| grid[a].1.total_cmp(&grid[b].1)).unwrap_or(0);
    if !grid[best].1.is_finite() {
        log::warn!("cross-validation loss is infinite for every length scale; using the largest");
    }
    let a = grid[best.saturating_sub(1)].0;
    let b = grid[(best + 1).min(GRID_POINTS - 1)].0;
    let (mut log_l, mut fl) = golden_section_min(loss, a, b, LOG_L_TOL);
    if grid[best].1 < fl {
        log_l = grid[best].0;
        fl = grid[best].1;
    }
    log::debug!("gp length scale {:.4e}, cv loss {fl:.4e}", log_l.exp());
    // The full-data fit can still integrate to a non-positive total where the
    // folds did not; fall back through the scan in order of loss.
    let mut order: Vec<usize> = (0..GRID_POINTS).collect();
    order.sort_by(|&a, &b| grid[a].1.total_cmp(&grid[b].1));
    let mut last_z = f64::NAN;
    for cand in std::iter::once(log_l).chain(order.into_iter().map(|i| grid[i].0)) {
        let model = GpModel::with_length_scale(x.clone(), &p, kernel, cand.exp())?;
        if model.z > 0.0 {
            if cand != log_l {
                log::warn!("normalization not positive at the chosen length scale; using {:.4e}", cand.exp());
            }
            return Ok(model);
        }
        last_z = model.z;
    }
    Err(Error::DegenerateInput(format!("normalization constant {last_z} is not positive")))
}
