//! Adaptive random-walk Metropolis, importance reweighting, sequential
//! inference with a fitted prior, and evidence estimation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::DensityModel;
use crate::numeric::{log_sum_exp, Cholesky};
use crate::sample::{Bounds, SampleSet};

pub type LogFn<'a> = Box<dyn Fn(&[f64]) -> f64 + Send + Sync + 'a>;
pub type DrawFn<'a> = Box<dyn Fn(&mut ChaCha8Rng) -> Option<Vec<f64>> + Send + Sync + 'a>;

pub const INIT_ATTEMPTS: usize = 1000;
const ADAPT_START: usize = 200;
const ADAPT_EVERY: usize = 20;

/// Unnormalized posterior: log-likelihood plus log-prior on a support box,
/// with an optional prior sampler used to find a starting point.
pub struct PosteriorSpec<'a> {
    pub loglik: LogFn<'a>,
    pub logprior: LogFn<'a>,
    pub bounds: Bounds,
    pub prior_draw: Option<DrawFn<'a>>,
}

impl<'a> PosteriorSpec<'a> {
    pub fn new(loglik: LogFn<'a>, logprior: LogFn<'a>, bounds: Bounds) -> Self {
        Self { loglik, logprior, bounds, prior_draw: None }
    }

    pub fn with_prior_draw(mut self, draw: DrawFn<'a>) -> Self {
        self.prior_draw = Some(draw);
        self
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    /// `-inf` outside the box or where either term is not finite.
    pub fn log_post(&self, x: &[f64]) -> f64 {
        if !self.bounds.contains(x) {
            return f64::NEG_INFINITY;
        }
        let lp = (self.logprior)(x);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let ll = (self.loglik)(x);
        if ll.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp + ll
        }
    }
}

#[derive(Debug, Clone)]
pub struct McmcConfig {
    pub n_samples: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub init: Option<Vec<f64>>,
}

impl McmcConfig {
    pub fn new(n_samples: usize, burn_in: usize, seed: u64) -> Self {
        Self { n_samples, burn_in, thin: 1, seed, init: None }
    }
}

#[derive(Debug, Clone)]
pub struct McmcOutput {
    /// Retained draws, with log-unnormalized posterior values.
    pub samples: SampleSet,
    /// Accepted fraction of all post-burn-in proposals.
    pub acceptance_rate: f64,
    /// Accepted fraction of post-burn-in proposals that fell inside the box.
    pub in_support_acceptance: f64,
}

fn find_init(spec: &PosteriorSpec, init: Option<&[f64]>, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, f64)> {
    if let Some(x) = init {
        if x.len() != spec.dim() {
            return Err(Error::InvalidInput(format!("init has dimension {}, expected {}", x.len(), spec.dim())));
        }
        let lp = spec.log_post(x);
        if lp.is_finite() {
            return Ok((x.to_vec(), lp));
        }
        log::warn!("initial point has zero posterior density; drawing from the prior");
    }
    let (lo, hi) = (spec.bounds.lower(), spec.bounds.upper());
    let finite_box = lo.iter().chain(hi).all(|v| v.is_finite());
    for _ in 0..INIT_ATTEMPTS {
        let x = match &spec.prior_draw {
            Some(draw) => draw(rng),
            None if finite_box => Some(lo.iter().zip(hi).map(|(a, b)| rng.random_range(*a..*b)).collect()),
            None => None,
        };
        let Some(x) = x else { break };
        let lp = spec.log_post(&x);
        if lp.is_finite() {
            return Ok((x, lp));
        }
    }
    Err(Error::InitFailure(format!("no point with positive posterior density after {INIT_ATTEMPTS} prior draws")))
}

fn initial_scale(bounds: &Bounds, x: &[f64]) -> Vec<f64> {
    bounds
        .lower()
        .iter()
        .zip(bounds.upper())
        .zip(x)
        .map(|((a, b), v)| if (b - a).is_finite() { 0.1 * (b - a) } else { 0.1 * v.abs().max(1.0) })
        .collect()
}

/// Running mean and covariance (Welford).
struct Moments {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(d: usize) -> Self {
        Self { n: 0.0, mean: vec![0.0; d], m2: vec![0.0; d * d] }
    }

    fn push(&mut self, x: &[f64]) {
        let d = x.len();
        self.n += 1.0;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl / self.n;
        }
        for i in 0..d {
            let after = x[i] - self.mean[i];
            for j in 0..d {
                self.m2[i * d + j] += delta[j] * after;
            }
        }
    }

    fn cov(&self) -> Vec<f64> {
        self.m2.iter().map(|v| v / (self.n - 1.0)).collect()
    }
}

/// Adaptive random-walk Metropolis. During burn-in the Gaussian proposal
/// covariance tracks 2.38²/D times the running sample covariance; it is
/// frozen afterwards. Proposals outside the box are rejected.
pub fn run_mh(spec: &PosteriorSpec, cfg: &McmcConfig) -> Result<McmcOutput> {
    let d = spec.dim();
    if cfg.n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut x, mut lp) = find_init(spec, cfg.init.as_deref(), &mut rng)?;
    let scale = initial_scale(&spec.bounds, &x);
    let mut prop = Cholesky::new(&diag(&scale.iter().map(|s| s * s).collect::<Vec<_>>()), d)?;
    let mut moments = Moments::new(d);
    let factor = 2.38 * 2.38 / d as f64;
    let thin = cfg.thin.max(1);
    let total = cfg.burn_in + cfg.n_samples * thin;
    let (mut rows, mut lps) = (Vec::with_capacity(cfg.n_samples), Vec::with_capacity(cfg.n_samples));
    let (mut accepted, mut inside, mut accepted_inside) = (0usize, 0usize, 0usize);
    let mut z = vec![0.0; d];
    for it in 0..total {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        let step = prop.mul_lower(&z);
        let y: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a + s).collect();
        let in_box = spec.bounds.contains(&y);
        let lq = if in_box { spec.log_post(&y) } else { f64::NEG_INFINITY };
        let u: f64 = rng.random();
        let accept = lq.is_finite() && u.ln() < lq - lp;
        if accept {
            x = y;
            lp = lq;
        }
        if it < cfg.burn_in {
            moments.push(&x);
            if it + 1 >= ADAPT_START && (it + 1) % ADAPT_EVERY == 0 {
                let mut c: Vec<f64> = moments.cov().iter().map(|v| v * factor).collect();
                for j in 0..d {
                    c[j * d + j] += 1e-12 * (1.0 + c[j * d + j]);
                }
                if let Ok(ch) = Cholesky::new(&c, d) {
                    prop = ch;
                }
            }
        } else {
            accepted += accept as usize;
            inside += in_box as usize;
            accepted_inside += (accept && in_box) as usize;
            if (it - cfg.burn_in + 1) % thin == 0 {
                rows.push(x.clone());
                lps.push(lp);
            }
        }
    }
    let n_post = (total - cfg.burn_in).max(1) as f64;
    let samples = SampleSet::new(rows, Some(lps), None)?;
    Ok(McmcOutput {
        samples,
        acceptance_rate: accepted as f64 / n_post,
        in_support_acceptance: accepted_inside as f64 / inside.max(1) as f64,
    })
}

fn diag(v: &[f64]) -> Vec<f64> {
    let d = v.len();
    let mut m = vec![0.0; d * d];
    for (i, x) in v.iter().enumerate() {
        m[i * d + i] = *x;
    }
    m
}

#[derive(Debug, Clone)]
pub struct WeightedSampleSet {
    pub samples: SampleSet,
    pub ess: f64,
}

impl WeightedSampleSet {
    pub fn weights(&self) -> &[f64] {
        self.samples.weights().expect("weighted sample set always carries weights")
    }
}

/// 1 / Σ w², for weights summing to one.
pub fn effective_sample_size(w: &[f64]) -> f64 {
    1.0 / w.iter().map(|v| v * v).sum::<f64>()
}

/// Weights each sample by exp(loglik2), normalized by log-sum-exp.
pub fn importance_reweight(samples: &SampleSet, loglik2: &(dyn Fn(&[f64]) -> f64 + Sync)) -> Result<WeightedSampleSet> {
    if samples.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let ll: Vec<f64> = samples.rows().map(|x| loglik2(x)).map(|v| if v.is_nan() { f64::NEG_INFINITY } else { v }).collect();
    let lse = log_sum_exp(&ll);
    if !lse.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let w: Vec<f64> = ll.iter().map(|v| (v - lse).exp()).collect();
    let ess = effective_sample_size(&w).clamp(1.0, samples.len() as f64);
    let samples = samples.clone().with_weights(w)?;
    Ok(WeightedSampleSet { samples, ess })
}

/// Second-stage posterior: the fitted model stands in for the first-stage
/// posterior as the prior.
pub fn sequential_posterior(
    prior: &dyn DensityModel,
    loglik2: LogFn<'_>,
    bounds: &Bounds,
    cfg: &McmcConfig,
) -> Result<McmcOutput> {
    if prior.dim() != bounds.dim() {
        return Err(Error::InvalidBounds(format!("prior has dimension {}, bounds {}", prior.dim(), bounds.dim())));
    }
    let seed = cfg.seed;
    let draws = prior.sample(INIT_ATTEMPTS.min(64), seed ^ 0x5eed).ok();
    let mut spec = PosteriorSpec::new(loglik2, Box::new(|x: &[f64]| prior.log_pdf(x)), bounds.clone());
    if let Some(draws) = draws {
        if !draws.is_empty() {
            spec = spec.with_prior_draw(Box::new(move |rng: &mut ChaCha8Rng| Some(draws[rng.random_range(0..draws.len())].clone())));
        }
    }
    run_mh(&spec, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evidence {
    /// Intercept of the regression of log-unnormalized posterior on log p̂.
    pub log_z: f64,
    pub slope: f64,
    /// Standard error of the intercept.
    pub stderr: f64,
    /// mean(log_unnorm − log p̂), the estimate with the slope fixed at one.
    pub log_z_fixed_slope: f64,
    /// Set when |slope − 1| > 0.1.
    pub slope_warning: bool,
    pub n_used: usize,
    /// Samples dropped because p̂ or the posterior value was zero.
    pub n_excluded: usize,
}

pub const MIN_EVIDENCE_POINTS: usize = 10;

/// Regresses log-unnormalized posterior values on the fitted log density.
pub fn estimate_log_evidence(approx: &dyn DensityModel, samples: &SampleSet) -> Result<Evidence> {
    let lp = samples.log_post().ok_or(Error::MissingDensities)?;
    let mut xs = Vec::with_capacity(lp.len());
    let mut ys = Vec::with_capacity(lp.len());
    for (x, &y) in samples.rows().zip(lp) {
        let q = approx.log_pdf(x);
        if q.is_finite() && y.is_finite() {
            xs.push(q);
            ys.push(y);
        }
    }
    let n = xs.len();
    if n < MIN_EVIDENCE_POINTS {
        return Err(Error::InsufficientSamples { needed: MIN_EVIDENCE_POINTS, got: n });
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let fixed = ys.iter().zip(&xs).map(|(y, x)| y - x).sum::<f64>() / nf;
    let (slope, log_z, stderr) = if sxx > 0.0 {
        let b = sxy / sxx;
        let a = my - b * mx;
        let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
        let s2 = rss / (nf - 2.0);
        (b, a, (s2 * (1.0 / nf + mx * mx / sxx)).sqrt())
    } else {
        log::warn!("fitted log density is constant on the samples; slope fixed at one");
        (1.0, fixed, f64::NAN)
    };
    let slope_warning = (slope - 1.0).abs() > 0.1;
    if slope_warning {
        log::warn!("evidence regression slope {slope:.3} differs from one by more than 0.1");
    }
    Ok(Evidence { log_z, slope, stderr, log_z_fixed_slope: fixed, slope_warning, n_used: n, n_excluded: lp.len() - n })
}
