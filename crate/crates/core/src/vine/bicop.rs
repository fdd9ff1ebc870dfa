use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tau::kendall_tau;
use crate::error::{Error, Result};
use crate::numeric::{brent_root, golden_section_min, norm_cdf, norm_ppf};

/// Arguments are clamped to `[CLAMP, 1 - CLAMP]` before evaluation.
pub const CLAMP: f64 = 1e-12;
pub const MIN_PAIRS: usize = 30;
const FIT_TOL: f64 = 1e-6;
/// Two-sided 5% critical value of the asymptotic Kendall tau test under
/// independence; pairs that do not reject it get the independence copula.
const INDEP_Z: f64 = 1.959963984540054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Independence,
    Gaussian,
    Clayton,
    Gumbel,
    Frank,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Independence => "independence",
            Self::Gaussian => "gaussian",
            Self::Clayton => "clayton",
            Self::Gumbel => "gumbel",
            Self::Frank => "frank",
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Self::Independence => 0,
            _ => 1,
        }
    }

    fn order(&self) -> usize {
        *self as usize
    }

    fn range(&self) -> (f64, f64) {
        match self {
            Self::Independence => (0.0, 0.0),
            Self::Gaussian => (-0.9999, 0.9999),
            Self::Clayton => (1e-4, 30.0),
            Self::Gumbel => (1.0, 30.0),
            Self::Frank => (-50.0, 50.0),
        }
    }

    fn rotates(&self) -> bool {
        matches!(self, Self::Clayton | Self::Gumbel)
    }
}

fn clamp(u: f64) -> f64 {
    u.clamp(CLAMP, 1.0 - CLAMP)
}

fn ln_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// ln(u^-θ + v^-θ - 1) for the Clayton generator.
fn clayton_ln_a(theta: f64, u: f64, v: f64) -> f64 {
    let a = -theta * u.ln();
    let b = -theta * v.ln();
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp() - (-m).exp()).ln()
}

fn base_log_pdf(fam: Family, t: f64, u: f64, v: f64) -> f64 {
    match fam {
        Family::Independence => 0.0,
        Family::Gaussian => {
            let (x, y) = (norm_ppf(u), norm_ppf(v));
            gaussian_log_pdf(t, x, y)
        }
        Family::Clayton => {
            (1.0 + t).ln() - (1.0 + t) * (u.ln() + v.ln()) - (2.0 + 1.0 / t) * clayton_ln_a(t, u, v)
        }
        Family::Gumbel => {
            let (lx, ly) = ((-u.ln()).ln(), (-v.ln()).ln());
            let ln_s = ln_add_exp(t * lx, t * ly);
            let a = (ln_s / t).exp();
            -a - u.ln() - v.ln() + (t - 1.0) * (lx + ly) + (1.0 / t - 2.0) * ln_s + (a + t - 1.0).ln()
        }
        Family::Frank => {
            if t.abs() < 1e-10 {
                return 0.0;
            }
            let k = (-t).exp_m1();
            let a = (-t * u).exp_m1();
            let b = (-t * v).exp_m1();
            (t * -k).ln() - t * (u + v) - 2.0 * (k + a * b).abs().ln()
        }
    }
}

fn gaussian_log_pdf(rho: f64, x: f64, y: f64) -> f64 {
    let r2 = rho * rho;
    -0.5 * (1.0 - r2).ln() - (r2 * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * (1.0 - r2))
}

/// h(u | v) = dC(u, v)/dv of the unrotated family.
fn base_h(fam: Family, t: f64, u: f64, v: f64) -> f64 {
    let h = match fam {
        Family::Independence => u,
        Family::Gaussian => norm_cdf((norm_ppf(u) - t * norm_ppf(v)) / (1.0 - t * t).sqrt()),
        Family::Clayton => ((-t - 1.0) * v.ln() + (-1.0 - 1.0 / t) * clayton_ln_a(t, u, v)).exp(),
        Family::Gumbel => {
            let (lx, ly) = ((-u.ln()).ln(), (-v.ln()).ln());
            let ln_s = ln_add_exp(t * lx, t * ly);
            let a = (ln_s / t).exp();
            (-a - v.ln() + (t - 1.0) * ly + (1.0 / t - 1.0) * ln_s).exp()
        }
        Family::Frank => {
            if t.abs() < 1e-10 {
                return u;
            }
            let k = (-t).exp_m1();
            let a = (-t * u).exp_m1();
            let b = (-t * v).exp_m1();
            (-t * v).exp() * a / (k + a * b)
        }
    };
    h.clamp(0.0, 1.0)
}

fn base_hinv(fam: Family, t: f64, w: f64, v: f64) -> f64 {
    let u = match fam {
        Family::Independence => w,
        Family::Gaussian => norm_cdf(norm_ppf(w) * (1.0 - t * t).sqrt() + t * norm_ppf(v)),
        Family::Clayton => {
            // u = (1 + v^-θ (w^(-θ/(1+θ)) - 1))^(-1/θ), evaluated in logs.
            let p = -t * v.ln() + ((-t / (1.0 + t)) * w.ln()).exp_m1().ln();
            let softplus = if p > 30.0 { p + (-p).exp().ln_1p() } else { p.exp().ln_1p() };
            (-softplus / t).exp()
        }
        Family::Gumbel => {
            let f = |u: f64| base_h(fam, t, u, v) - w;
            if f(CLAMP) >= 0.0 {
                CLAMP
            } else if f(1.0 - CLAMP) <= 0.0 {
                1.0 - CLAMP
            } else {
                brent_root(f, CLAMP, 1.0 - CLAMP, 1e-15, 200).unwrap_or(w)
            }
        }
        Family::Frank => {
            if t.abs() < 1e-10 {
                return w;
            }
            let k = (-t).exp_m1();
            let b = (-t * v).exp_m1();
            -(w * k / (1.0 + b * (1.0 - w))).ln_1p() / t
        }
    };
    clamp(u)
}

/// A fitted one-parameter pair copula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bicop {
    family: Family,
    rotation: u16,
    #[serde(with = "crate::io::num")]
    theta: f64,
    #[serde(with = "crate::io::num")]
    loglik: f64,
    #[serde(with = "crate::io::num")]
    aic: f64,
}

impl Bicop {
    pub fn new(family: Family, rotation: u16, theta: f64) -> Result<Self> {
        if !matches!(rotation, 0 | 90 | 180 | 270) || (rotation != 0 && !family.rotates()) {
            return Err(Error::InvalidInput(format!("rotation {rotation} not allowed for {}", family.name())));
        }
        let ok = match family {
            Family::Independence => true,
            Family::Gaussian => theta.abs() < 1.0,
            Family::Clayton => theta > 0.0,
            Family::Gumbel => theta >= 1.0,
            Family::Frank => theta != 0.0,
        } && theta.is_finite();
        if !ok {
            return Err(Error::InvalidInput(format!("parameter {theta} out of range for {}", family.name())));
        }
        Ok(Self { family, rotation, theta: if family == Family::Independence { 0.0 } else { theta }, loglik: 0.0, aic: 0.0 })
    }

    pub fn independence() -> Self {
        Self { family: Family::Independence, rotation: 0, theta: 0.0, loglik: 0.0, aic: 0.0 }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn rotation(&self) -> u16 {
        self.rotation
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    pub fn aic(&self) -> f64 {
        self.aic
    }

    pub fn n_params(&self) -> usize {
        self.family.n_params()
    }

    pub fn log_pdf(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clamp(u), clamp(v));
        let (f, t) = (self.family, self.theta);
        match self.rotation {
            90 => base_log_pdf(f, t, 1.0 - u, v),
            180 => base_log_pdf(f, t, 1.0 - u, 1.0 - v),
            270 => base_log_pdf(f, t, u, 1.0 - v),
            _ => base_log_pdf(f, t, u, v),
        }
    }

    pub fn pdf(&self, u: f64, v: f64) -> f64 {
        self.log_pdf(u, v).exp()
    }

    /// h(u | v) = dC(u, v)/dv.
    pub fn hfunc(&self, u: f64, v: f64) -> f64 {
        h_rot(self.family, self.rotation, self.theta, clamp(u), clamp(v))
    }

    /// dC(u, v)/du, the conditional distribution of the second argument.
    pub fn hfunc2(&self, u: f64, v: f64) -> f64 {
        h_rot(self.family, transpose(self.rotation), self.theta, clamp(v), clamp(u))
    }

    /// Solves `hfunc(u, v) = w` for u.
    pub fn hinv(&self, w: f64, v: f64) -> f64 {
        hinv_rot(self.family, self.rotation, self.theta, clamp(w), clamp(v))
    }

    /// Solves `hfunc2(u, v) = w` for v.
    pub fn hinv2(&self, w: f64, u: f64) -> f64 {
        hinv_rot(self.family, transpose(self.rotation), self.theta, clamp(w), clamp(u))
    }

    /// Kendall's tau implied by the parameter (numeric for Frank).
    pub fn tau(&self) -> f64 {
        let t = self.theta;
        let base = match self.family {
            Family::Independence => 0.0,
            Family::Gaussian => 2.0 / std::f64::consts::PI * t.asin(),
            Family::Clayton => t / (t + 2.0),
            Family::Gumbel => 1.0 - 1.0 / t,
            Family::Frank => {
                // Debye function D1 by the midpoint rule.
                let m = 2000;
                let h = t / m as f64;
                let d1: f64 = (0..m).map(|i| (i as f64 + 0.5) * h).map(|x| x / x.exp_m1()).sum::<f64>() * h / t;
                1.0 - 4.0 / t * (1.0 - d1)
            }
        };
        if matches!(self.rotation, 90 | 270) {
            -base
        } else {
            base
        }
    }

    /// Draws `n` pairs by inverting the h-function.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let v: f64 = rng.random();
                let w: f64 = rng.random();
                (self.hinv(w, v), v)
            })
            .collect()
    }
}

fn transpose(rotation: u16) -> u16 {
    match rotation {
        90 => 270,
        270 => 90,
        r => r,
    }
}

fn h_rot(f: Family, rot: u16, t: f64, u: f64, v: f64) -> f64 {
    match rot {
        90 => 1.0 - base_h(f, t, 1.0 - u, v),
        180 => 1.0 - base_h(f, t, 1.0 - u, 1.0 - v),
        270 => base_h(f, t, u, 1.0 - v),
        _ => base_h(f, t, u, v),
    }
}

fn hinv_rot(f: Family, rot: u16, t: f64, w: f64, v: f64) -> f64 {
    match rot {
        90 => clamp(1.0 - base_hinv(f, t, 1.0 - w, v)),
        180 => clamp(1.0 - base_hinv(f, t, 1.0 - w, 1.0 - v)),
        270 => base_hinv(f, t, w, 1.0 - v),
        _ => base_hinv(f, t, w, v),
    }
}

fn tau_init(fam: Family, tau: f64) -> Option<f64> {
    let a = tau.abs().min(0.99);
    match fam {
        Family::Gaussian => Some((std::f64::consts::FRAC_PI_2 * tau).sin()),
        Family::Clayton => Some(2.0 * a / (1.0 - a)),
        Family::Gumbel => Some(1.0 / (1.0 - a)),
        _ => None,
    }
}

/// Selects the pair copula with minimum AIC among independence, Gaussian,
/// Clayton, Gumbel and Frank, after a Kendall tau test for independence. Rotations of Clayton and Gumbel are restricted
/// to those matching the sign of the empirical Kendall tau.
pub fn fit_bicop(u: &[f64], v: &[f64]) -> Result<Bicop> {
    if u.len() != v.len() {
        return Err(Error::InvalidInput("u and v differ in length".into()));
    }
    if u.len() < MIN_PAIRS {
        return Err(Error::InsufficientSamples { needed: MIN_PAIRS, got: u.len() });
    }
    if let Some(bad) = u.iter().chain(v).find(|x| !(**x > 0.0 && **x < 1.0)) {
        return Err(Error::InvalidPit(format!("{bad} is outside (0, 1)")));
    }
    let u: Vec<f64> = u.iter().map(|&x| clamp(x)).collect();
    let v: Vec<f64> = v.iter().map(|&x| clamp(x)).collect();
    let tau = kendall_tau(&u, &v)?;
    let n = u.len() as f64;
    let z = tau / (2.0 * (2.0 * n + 5.0) / (9.0 * n * (n - 1.0))).sqrt();
    if z.abs() < INDEP_Z {
        return Ok(Bicop::independence());
    }
    let rotations: [u16; 2] = if tau >= 0.0 { [0, 180] } else { [90, 270] };
    let mut candidates = vec![(Family::Gaussian, 0), (Family::Frank, 0)];
    for fam in [Family::Clayton, Family::Gumbel] {
        for r in rotations {
            candidates.push((fam, r));
        }
    }
    let scores: Vec<(f64, f64)> = {
        let x: Vec<f64> = u.iter().map(|&p| norm_ppf(p)).collect();
        let y: Vec<f64> = v.iter().map(|&p| norm_ppf(p)).collect();
        candidates
            .par_iter()
            .map(|&(fam, rot)| {
                let ll = |t: f64| -> f64 {
                    if fam == Family::Gaussian {
                        x.iter().zip(&y).map(|(&a, &b)| gaussian_log_pdf(t, a, b)).sum()
                    } else {
                        let c = Bicop { family: fam, rotation: rot, theta: t, loglik: 0.0, aic: 0.0 };
                        u.iter().zip(&v).map(|(&a, &b)| c.log_pdf(a, b)).sum()
                    }
                };
                let (lo, hi) = fam.range();
                let (mut t, neg) = golden_section_min(|t| -ll(t), lo, hi, FIT_TOL);
                let mut best = -neg;
                if let Some(t0) = tau_init(fam, tau) {
                    let t0 = t0.clamp(lo, hi);
                    let l0 = ll(t0);
                    if l0 > best {
                        best = l0;
                        t = t0;
                    }
                }
                if !best.is_finite() {
                    best = f64::NEG_INFINITY;
                }
                (t, best)
            })
            .collect()
    };
    let mut chosen = Bicop::independence();
    for (&(fam, rot), &(t, ll)) in candidates.iter().zip(&scores) {
        let aic = 2.0 * fam.n_params() as f64 - 2.0 * ll;
        let better = aic < chosen.aic
            || (aic == chosen.aic
                && (fam.n_params(), fam.order(), rot) < (chosen.family.n_params(), chosen.family.order(), chosen.rotation));
        if better {
            chosen = Bicop { family: fam, rotation: rot, theta: t, loglik: ll, aic };
        }
    }
    Ok(chosen)
}
