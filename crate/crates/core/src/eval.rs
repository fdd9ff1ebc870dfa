//! Accuracy metrics and validation protocols.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::estimate_log_evidence;
use crate::model::DensityModel;
use crate::sample::{Bounds, SampleSet};

pub const DEFAULT_GRID_POINTS: usize = 201;
pub const DEFAULT_TEST_SIZE: usize = 500;
pub const DEFAULT_REPEATS: usize = 100;

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::DegenerateInput("correlation of a constant vector".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 3 {
        return Err(Error::InvalidInput("spearman needs at least 3 pairs".into()));
    }
    pearson(&ranks(a), &ranks(b))
}

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidInput(format!("rmse of lengths {} and {}", a.len(), b.len())));
    }
    Ok((a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt())
}

fn weighted_sorted(x: &[f64], w: Option<&[f64]>) -> Vec<(f64, f64)> {
    let total = w.map_or(x.len() as f64, |w| w.iter().sum());
    let mut v: Vec<(f64, f64)> = match w {
        Some(w) => x.iter().zip(w).map(|(a, b)| (*a, b / total)).collect(),
        None => x.iter().map(|a| (*a, 1.0 / total)).collect(),
    };
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v
}

/// Two-sample Kolmogorov-Smirnov statistic between weighted empirical CDFs.
/// Missing weights mean equal weights.
pub fn ks_statistic(x1: &[f64], w1: Option<&[f64]>, x2: &[f64], w2: Option<&[f64]>) -> f64 {
    if x1.is_empty() || x2.is_empty() {
        return f64::NAN;
    }
    let a = weighted_sorted(x1, w1);
    let b = weighted_sorted(x2, w2);
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb, mut best) = (0.0f64, 0.0f64, 0.0f64);
    while i < a.len() || j < b.len() {
        let t = match (a.get(i), b.get(j)) {
            (Some(p), Some(q)) => p.0.min(q.0),
            (Some(p), None) => p.0,
            (None, Some(q)) => q.0,
            (None, None) => break,
        };
        while i < a.len() && a[i].0 == t {
            fa += a[i].1;
            i += 1;
        }
        while j < b.len() && b[j].0 == t {
            fb += b[j].1;
            j += 1;
        }
        best = best.max((fa - fb).abs());
    }
    best.min(1.0)
}

/// Per-column KS statistics between two sample sets, honoring weights.
pub fn marginal_ks(a: &SampleSet, b: &SampleSet) -> Result<Vec<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidInput(format!("dimensions differ: {} vs {}", a.dim(), b.dim())));
    }
    Ok((0..a.dim()).map(|j| ks_statistic(&a.column(j), a.weights(), &b.column(j), b.weights())).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Quadrature {
    /// Midpoint tensor grid with the given number of points per axis.
    Grid(usize),
    /// Uniform draws over the region.
    MonteCarlo { n: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationCheck {
    pub integral: f64,
    pub stderr: f64,
    /// Share of the integral carried by the outermost layer of the region.
    pub boundary_mass: f64,
    /// Set when the boundary layer carries more than 1e-4 of the mass.
    pub region_too_small: bool,
}

/// Integrates `f` over a finite box.
pub fn integrate(f: &(dyn Fn(&[f64]) -> f64 + Sync), region: &Bounds, method: Quadrature) -> Result<NormalizationCheck> {
    let d = region.dim();
    let (lo, hi) = (region.lower(), region.upper());
    if lo.iter().chain(hi).any(|v| !v.is_finite()) {
        return Err(Error::InvalidBounds("integration region must be finite".into()));
    }
    let volume: f64 = lo.iter().zip(hi).map(|(a, b)| b - a).product();
    let (integral, stderr, boundary) = match method {
        Quadrature::Grid(m) => {
            if d > 3 {
                return Err(Error::InvalidInput("grid quadrature supports at most 3 dimensions".into()));
            }
            if m < 3 {
                return Err(Error::InvalidInput("grid needs at least 3 points per axis".into()));
            }
            let total = m.pow(d as u32);
            let h: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| (b - a) / m as f64).collect();
            let cell: f64 = h.iter().product();
            let (s, edge) = (0..total)
                .into_par_iter()
                .map(|mut k| {
                    let mut x = vec![0.0; d];
                    let mut on_edge = false;
                    for j in 0..d {
                        let i = k % m;
                        k /= m;
                        on_edge |= i == 0 || i == m - 1;
                        x[j] = lo[j] + (i as f64 + 0.5) * h[j];
                    }
                    let v = f(&x);
                    (v, if on_edge { v } else { 0.0 })
                })
                .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
            (s * cell, 0.0, edge * cell)
        }
        Quadrature::MonteCarlo { n, seed } => {
            if n < 2 {
                return Err(Error::InvalidInput("Monte Carlo needs at least 2 draws".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut xs = Vec::with_capacity(n);
            for _ in 0..n {
                xs.push(lo.iter().zip(hi).map(|(a, b)| rng.random_range(*a..*b)).collect::<Vec<f64>>());
            }
            let shell = |x: &[f64]| (0..d).any(|j| (x[j] - lo[j]) < 0.01 * (hi[j] - lo[j]) || (hi[j] - x[j]) < 0.01 * (hi[j] - lo[j]));
            let vals: Vec<(f64, bool)> = xs.par_iter().map(|x| (f(x), shell(x))).collect();
            let mean = vals.iter().map(|v| v.0).sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let edge = vals.iter().filter(|v| v.1).map(|v| v.0).sum::<f64>() / n as f64;
            (volume * mean, volume * (var / n as f64).sqrt(), volume * edge)
        }
    };
    let boundary_mass = if integral > 0.0 { boundary / integral } else { 0.0 };
    let region_too_small = boundary_mass > 1e-4;
    if region_too_small {
        log::warn!("integration region may be too small: boundary layer carries {boundary_mass:.2e} of the mass");
    }
    Ok(NormalizationCheck { integral, stderr, boundary_mass, region_too_small })
}

pub fn check_normalization(model: &dyn DensityModel, region: &Bounds, method: Quadrature) -> Result<NormalizationCheck> {
    if model.dim() != region.dim() {
        return Err(Error::InvalidBounds(format!("model has dimension {}, region {}", model.dim(), region.dim())));
    }
    integrate(&|x| model.pdf(x), region, method)
}

/// Source of training and test data for cross-validation.
pub enum CvData<'a> {
    /// Known density: fresh training and test draws every repeat, reference
    /// values are the exact pdf.
    Target(&'a dyn DensityModel),
    /// Posterior samples with log-unnormalized values: disjoint random
    /// train/test subsets, reference values exp(log_post).
    Posterior(&'a SampleSet),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvRow {
    pub method: String,
    pub train_size: usize,
    pub repeat: usize,
    pub spearman: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub rows: Vec<CvRow>,
    pub median_spearman: f64,
    pub median_rmse: f64,
}

pub fn median(v: &[f64]) -> f64 {
    let mut s: Vec<f64> = v.iter().copied().filter(|x| !x.is_nan()).collect();
    if s.is_empty() {
        return f64::NAN;
    }
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub type FitFn<'a> = dyn Fn(&SampleSet, u64) -> Result<Box<dyn DensityModel>> + Sync + 'a;

#[derive(Debug, Clone)]
pub struct CvConfig {
    pub n_repeats: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl CvConfig {
    pub fn new(train_size: usize, seed: u64) -> Self {
        Self { n_repeats: DEFAULT_REPEATS, train_size, test_size: DEFAULT_TEST_SIZE, seed }
    }
}

fn repeat_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Repeated random subsampling validation. For posterior samples the RMSE
/// compares normalized densities, the reference being scaled by the
/// fixed-slope evidence estimate of the fitted model on its training set.
pub fn cross_validate(data: CvData<'_>, method: &str, fit: &FitFn<'_>, cfg: &CvConfig) -> Result<CvReport> {
    if let CvData::Posterior(s) = &data {
        if s.log_post().is_none() {
            return Err(Error::MissingDensities);
        }
        let needed = cfg.train_size + cfg.test_size;
        if s.len() < needed {
            return Err(Error::InsufficientSamples { needed, got: s.len() });
        }
    }
    let rows: Vec<CvRow> = (0..cfg.n_repeats)
        .into_par_iter()
        .map(|r| {
            let seed = repeat_seed(cfg.seed, r);
            let (train, test, reference) = match &data {
                CvData::Target(t) => {
                    let tr = t.sample(cfg.train_size, seed)?;
                    let lp = tr.iter().map(|x| t.log_pdf(x)).collect();
                    let train = SampleSet::new(tr, Some(lp), None)?;
                    let test = t.sample(cfg.test_size, seed ^ 0xA5A5_A5A5)?;
                    let reference: Vec<f64> = test.iter().map(|x| t.pdf(x)).collect();
                    (train, test, reference)
                }
                CvData::Posterior(s) => {
                    let mut idx: Vec<usize> = (0..s.len()).collect();
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
                    let train = s.subset(&idx[..cfg.train_size])?;
                    let test_idx = &idx[cfg.train_size..cfg.train_size + cfg.test_size];
                    let lp = s.log_post().unwrap_or_default();
                    let test: Vec<Vec<f64>> = test_idx.iter().map(|&i| s.row(i).to_vec()).collect();
                    let reference: Vec<f64> = test_idx.iter().map(|&i| lp[i]).collect();
                    (train, test, reference)
                }
            };
            let model = fit(&train, seed)?;
            let pred: Vec<f64> = test.iter().map(|x| model.pdf(x)).collect();
            let reference = match &data {
                CvData::Target(_) => reference,
                CvData::Posterior(_) => {
                    let log_z = estimate_log_evidence(model.as_ref(), &train)?.log_z_fixed_slope;
                    reference.iter().map(|v| (v - log_z).exp()).collect()
                }
            };
            let spearman = spearman(&pred, &reference).unwrap_or(f64::NAN);
            let rmse = rmse(&pred, &reference)?;
            Ok(CvRow { method: method.to_string(), train_size: cfg.train_size, repeat: r, spearman, rmse })
        })
        .collect::<Result<_>>()?;
    let sp: Vec<f64> = rows.iter().map(|r| r.spearman).collect();
    let rm: Vec<f64> = rows.iter().map(|r| r.rmse).collect();
    Ok(CvReport { median_spearman: median(&sp), median_rmse: median(&rm), rows })
}

/// Writes rows as CSV with columns method, train_size, repeat, spearman, rmse.
pub fn write_cv_csv<W: std::io::Write>(rows: &[CvRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["method", "train_size", "repeat", "spearman", "rmse"])?;
    for r in rows {
        out.write_record([
            r.method.clone(),
            r.train_size.to_string(),
            r.repeat.to_string(),
            crate::sample::fmt_f64(r.spearman),
            crate::sample::fmt_f64(r.rmse),
        ])?;
    }
    out.flush()?;
    Ok(())
}
