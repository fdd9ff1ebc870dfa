//! One-dimensional normal, gamma and beta mixtures fitted by EM.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};
use statrs::function::gamma::{digamma, gamma_lr, ln_gamma};

use super::gmm::{select_min_bic, EM_MAX_ITER, EM_TOL, RESTARTS};
use crate::error::{Error, Result};
use crate::numeric::{bisect_increasing, log_sum_exp, norm_cdf, norm_logpdf, trigamma};

const MIN_SAMPLES: usize = 10;
const SCREEN_ITER: usize = 25;
const BETA_CLAMP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family1d {
    Normal,
    /// Gamma on `x - origin`, or on `origin - x` when `reflect` is set.
    Gamma {
        #[serde(with = "crate::io::num")]
        origin: f64,
        reflect: bool,
    },
    /// Beta on `(x - lower) / (upper - lower)`.
    Beta {
        #[serde(with = "crate::io::num")]
        lower: f64,
        #[serde(with = "crate::io::num")]
        upper: f64,
    },
}

impl Family1d {
    pub fn for_bounds(lower: f64, upper: f64) -> Self {
        match (lower.is_finite(), upper.is_finite()) {
            (false, false) => Self::Normal,
            (true, false) => Self::Gamma { origin: lower, reflect: false },
            (false, true) => Self::Gamma { origin: upper, reflect: true },
            (true, true) => Self::Beta { lower, upper },
        }
    }

    fn to_z(&self, x: f64) -> f64 {
        match *self {
            Self::Normal => x,
            Self::Gamma { origin, reflect } => {
                if reflect {
                    origin - x
                } else {
                    x - origin
                }
            }
            Self::Beta { lower, upper } => (x - lower) / (upper - lower),
        }
    }

    fn from_z(&self, z: f64) -> f64 {
        match *self {
            Self::Normal => z,
            Self::Gamma { origin, reflect } => {
                if reflect {
                    origin - z
                } else {
                    origin + z
                }
            }
            Self::Beta { lower, upper } => lower + z * (upper - lower),
        }
    }

    fn log_jacobian(&self) -> f64 {
        match *self {
            Self::Beta { lower, upper } => -(upper - lower).ln(),
            _ => 0.0,
        }
    }

    fn in_support(&self, z: f64) -> bool {
        match self {
            Self::Normal => z.is_finite(),
            Self::Gamma { .. } => z >= 0.0,
            Self::Beta { .. } => (0.0..=1.0).contains(&z),
        }
    }

    fn comp_logpdf(&self, c: &Component1d, z: f64) -> f64 {
        match self {
            Self::Normal => norm_logpdf((z - c.p1) / c.p2) - c.p2.ln(),
            Self::Gamma { .. } => {
                if z < 0.0 {
                    return f64::NEG_INFINITY;
                }
                c.p1 * c.p2.ln() + (c.p1 - 1.0) * z.ln() - c.p2 * z - ln_gamma(c.p1)
            }
            Self::Beta { .. } => {
                if !(0.0..=1.0).contains(&z) {
                    return f64::NEG_INFINITY;
                }
                (c.p1 - 1.0) * z.ln() + (c.p2 - 1.0) * (1.0 - z).ln() - ln_beta(c.p1, c.p2)
            }
        }
    }

    fn comp_cdf(&self, c: &Component1d, z: f64) -> f64 {
        match self {
            Self::Normal => norm_cdf((z - c.p1) / c.p2),
            Self::Gamma { .. } => {
                if z <= 0.0 {
                    0.0
                } else if z.is_infinite() {
                    1.0
                } else {
                    gamma_lr(c.p1, c.p2 * z)
                }
            }
            Self::Beta { .. } => beta_reg(c.p1, c.p2, z.clamp(0.0, 1.0)),
        }
    }

    fn clamp_z(&self, z: f64, scale: f64) -> f64 {
        match self {
            Self::Normal => z,
            Self::Gamma { .. } => z.max(1e-9 * scale),
            Self::Beta { .. } => z.clamp(BETA_CLAMP, 1.0 - BETA_CLAMP),
        }
    }
}

/// Weight plus two family parameters: (mean, sd) for normal, (shape, rate)
/// for gamma, (alpha, beta) for beta.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component1d {
    #[serde(with = "crate::io::num")]
    pub weight: f64,
    #[serde(with = "crate::io::num")]
    pub p1: f64,
    #[serde(with = "crate::io::num")]
    pub p2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture1d {
    family: Family1d,
    components: Vec<Component1d>,
    #[serde(with = "crate::io::num")]
    loglik: f64,
    #[serde(with = "crate::io::num")]
    bic: f64,
}

impl Mixture1d {
    pub fn new(family: Family1d, components: Vec<Component1d>) -> Result<Self> {
        if components.is_empty() || components.iter().any(|c| !(c.weight > 0.0)) {
            return Err(Error::InvalidInput("mixture needs positive component weights".into()));
        }
        Ok(Self { family, components, loglik: f64::NAN, bic: f64::NAN })
    }

    pub fn family(&self) -> Family1d {
        self.family
    }

    pub fn components(&self) -> &[Component1d] {
        &self.components
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    pub fn bic(&self) -> f64 {
        self.bic
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        let z = self.family.to_z(x);
        if !self.family.in_support(z) {
            return f64::NEG_INFINITY;
        }
        let terms: Vec<f64> =
            self.components.iter().map(|c| c.weight.ln() + self.family.comp_logpdf(c, z)).collect();
        log_sum_exp(&terms) + self.family.log_jacobian()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let z = self.family.to_z(x);
        let f: f64 = self.components.iter().map(|c| c.weight * self.family.comp_cdf(c, z)).sum();
        let f = f.clamp(0.0, 1.0);
        match self.family {
            Family1d::Gamma { reflect: true, .. } => 1.0 - f,
            _ => f,
        }
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::InvalidQuantile(u));
        }
        let (lo, hi) = match self.family {
            Family1d::Beta { lower, upper } => (lower, upper),
            _ => {
                let (mut lo, mut hi) = self.centre_bracket();
                if let Family1d::Gamma { origin, reflect } = self.family {
                    if reflect {
                        hi = origin;
                    } else {
                        lo = origin;
                    }
                }
                let mut step = (hi - lo).max(1.0);
                while self.cdf(lo) > u && lo.is_finite() {
                    lo -= step;
                    step *= 2.0;
                }
                let mut step = (hi - lo).max(1.0);
                while self.cdf(hi) < u && hi.is_finite() {
                    hi += step;
                    step *= 2.0;
                }
                (lo, hi)
            }
        };
        Ok(bisect_increasing(|x| self.cdf(x), u, lo, hi, 200))
    }

    fn centre_bracket(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for c in &self.components {
            let (m, s) = match self.family {
                Family1d::Normal => (c.p1, c.p2),
                _ => (c.p1 / c.p2, c.p1.sqrt() / c.p2),
            };
            let a = self.family.from_z(m - 10.0 * s);
            let b = self.family.from_z(m + 10.0 * s);
            lo = lo.min(a.min(b));
            hi = hi.max(a.max(b));
        }
        (lo, hi)
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let u: f64 = rng.random_range(1e-12..1.0 - 1e-12);
                self.quantile(u)
            })
            .collect()
    }
}

fn mle(family: &Family1d, z: &[f64], r: &[f64], ridge: f64) -> Option<Component1d> {
    let tot: f64 = r.iter().sum();
    if !(tot > 0.0) {
        return None;
    }
    let mean = z.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / tot;
    let var = z.iter().zip(r).map(|(a, b)| b * (a - mean).powi(2)).sum::<f64>() / tot;
    let (p1, p2) = match family {
        Family1d::Normal => (mean, (var + ridge).sqrt()),
        Family1d::Gamma { .. } => {
            let ml = z.iter().zip(r).map(|(a, b)| b * a.ln()).sum::<f64>() / tot;
            let s = (mean.ln() - ml).max(1e-12);
            let mut k = (3.0 - s + ((s - 3.0).powi(2) + 24.0 * s).sqrt()) / (12.0 * s);
            for _ in 0..100 {
                let f = k.ln() - digamma(k) - s;
                let df = 1.0 / k - trigamma(k);
                let mut next = k - f / df;
                if !(next > 0.0) {
                    next = k / 2.0;
                }
                let done = (next - k).abs() < 1e-12 * k;
                k = next;
                if done {
                    break;
                }
            }
            (k, k / mean)
        }
        Family1d::Beta { .. } => {
            let l1 = z.iter().zip(r).map(|(a, b)| b * a.ln()).sum::<f64>() / tot;
            let l2 = z.iter().zip(r).map(|(a, b)| b * (1.0 - a).ln()).sum::<f64>() / tot;
            let common = if var > 0.0 { (mean * (1.0 - mean) / var - 1.0).clamp(1e-3, 1e8) } else { 1e8 };
            let mut a = (mean * common).max(1e-3);
            let mut b = ((1.0 - mean) * common).max(1e-3);
            let obj = |a: f64, b: f64| (a - 1.0) * l1 + (b - 1.0) * l2 - ln_beta(a, b);
            for _ in 0..200 {
                let ts = trigamma(a + b);
                let g1 = l1 - digamma(a) + digamma(a + b);
                let g2 = l2 - digamma(b) + digamma(a + b);
                let h11 = ts - trigamma(a);
                let h22 = ts - trigamma(b);
                let h12 = ts;
                let det = h11 * h22 - h12 * h12;
                if !(det.abs() > 0.0) {
                    break;
                }
                let da = -(h22 * g1 - h12 * g2) / det;
                let db = -(h11 * g2 - h12 * g1) / det;
                let f0 = obj(a, b);
                let mut t = 1.0;
                let mut moved = false;
                while t > 1e-12 {
                    let (na, nb) = (a + t * da, b + t * db);
                    if na > 0.0 && nb > 0.0 && obj(na, nb) >= f0 {
                        a = na;
                        b = nb;
                        moved = true;
                        break;
                    }
                    t *= 0.5;
                }
                if !moved || (t * da).abs() < 1e-12 * a && (t * db).abs() < 1e-12 * b {
                    break;
                }
            }
            (a, b)
        }
    };
    (p1.is_finite() && p2.is_finite() && p2 > 0.0).then_some(Component1d { weight: tot, p1, p2 })
}

fn e_step(family: &Family1d, comps: &[Component1d], z: &[f64]) -> (Vec<f64>, f64) {
    let k = comps.len();
    let mut resp = vec![0.0; z.len() * k];
    let mut ll = 0.0;
    for (i, &zi) in z.iter().enumerate() {
        let r = &mut resp[i * k..(i + 1) * k];
        for (g, c) in comps.iter().enumerate() {
            r[g] = c.weight.ln() + family.comp_logpdf(c, zi);
        }
        let lse = log_sum_exp(r);
        for v in r.iter_mut() {
            *v = (*v - lse).exp();
        }
        ll += lse;
    }
    (resp, ll)
}

fn m_step(family: &Family1d, z: &[f64], resp: &[f64], k: usize, ridge: f64) -> Option<Vec<Component1d>> {
    let n = z.len();
    let mut out = Vec::with_capacity(k);
    for g in 0..k {
        let r: Vec<f64> = (0..n).map(|i| resp[i * k + g]).collect();
        if r.iter().sum::<f64>() < 0.1 {
            continue;
        }
        out.push(mle(family, z, &r, ridge)?);
    }
    if out.is_empty() {
        return None;
    }
    let s: f64 = out.iter().map(|c| c.weight).sum();
    out.iter_mut().for_each(|c| c.weight /= s);
    Some(out)
}

fn run_em(family: &Family1d, z: &[f64], comps: &mut Vec<Component1d>, iters: usize, ridge: f64) -> Option<f64> {
    let mut prev: Option<f64> = None;
    for _ in 0..iters {
        let (resp, ll) = e_step(family, comps, z);
        if !ll.is_finite() {
            return None;
        }
        if let Some(p) = prev {
            if (ll - p).abs() < EM_TOL * p.abs() {
                return Some(ll);
            }
        }
        *comps = m_step(family, z, &resp, comps.len(), ridge)?;
        prev = Some(ll);
    }
    let (_, ll) = e_step(family, comps, z);
    ll.is_finite().then_some(ll)
}

fn init(family: &Family1d, z: &[f64], k: usize, restart: usize, rng: &mut ChaCha8Rng, ridge: f64) -> Option<Vec<Component1d>> {
    let n = z.len();
    let assign: Vec<usize> = if restart == 0 {
        // Contiguous quantile groups.
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| z[a].total_cmp(&z[b]));
        let mut a = vec![0; n];
        for (rank, &i) in idx.iter().enumerate() {
            a[i] = rank * k / n;
        }
        a
    } else {
        let centres: Vec<f64> = (0..k).map(|_| z[rng.random_range(0..n)]).collect();
        z.iter()
            .map(|v| (0..k).min_by(|&a, &b| (v - centres[a]).abs().total_cmp(&(v - centres[b]).abs())).unwrap())
            .collect()
    };
    let mut resp = vec![0.0; n * k];
    for (i, &g) in assign.iter().enumerate() {
        resp[i * k + g] = 1.0;
    }
    m_step(family, z, &resp, k, ridge)
}

/// EM for a fixed family and component count.
pub fn fit_mixture_1d_family(x: &[f64], family: Family1d, k: usize, seed: u64) -> Result<Mixture1d> {
    let n = x.len();
    if n < MIN_SAMPLES.max(3 * k) {
        return Err(Error::InsufficientSamples { needed: MIN_SAMPLES.max(3 * k), got: n });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSample("non-finite value".into()));
    }
    let raw: Vec<f64> = x.iter().map(|&v| family.to_z(v)).collect();
    if raw.iter().any(|z| !family.in_support(*z)) {
        return Err(Error::OutOfSupport("sample outside the mixture support".into()));
    }
    let scale = raw.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    let z: Vec<f64> = raw.iter().map(|&v| family.clamp_z(v, scale.max(1e-300))).collect();
    let mean = z.iter().sum::<f64>() / n as f64;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if !(var > 0.0) {
        return Err(Error::DegenerateSample("all values are identical".into()));
    }
    let ridge = 1e-6 * var;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let restarts = if k == 1 { 1 } else { RESTARTS };
    let mut best: Option<(Vec<Component1d>, f64)> = None;
    for r in 0..restarts {
        let Some(mut comps) = init(&family, &z, k, r, &mut rng, ridge) else { continue };
        let iters = if k == 1 { EM_MAX_ITER } else { SCREEN_ITER };
        let Some(ll) = run_em(&family, &z, &mut comps, iters, ridge) else { continue };
        if best.as_ref().is_none_or(|b| ll > b.1) {
            best = Some((comps, ll));
        }
    }
    let (mut comps, mut ll) =
        best.ok_or_else(|| Error::DegenerateSample(format!("no EM start converged for {k} components")))?;
    if k > 1 {
        ll = run_em(&family, &z, &mut comps, EM_MAX_ITER - SCREEN_ITER, ridge)
            .ok_or_else(|| Error::DegenerateSample("EM diverged".into()))?;
    }
    let loglik = ll + n as f64 * family.log_jacobian();
    let g = comps.len();
    let params = (g - 1) + 2 * g;
    Ok(Mixture1d { family, components: comps, loglik, bic: -2.0 * loglik + params as f64 * (n as f64).ln() })
}

/// Family from the bounds (normal, gamma or beta), component count by BIC.
pub fn fit_mixture_1d(x: &[f64], lower: f64, upper: f64, g_max: usize, seed: u64) -> Result<Mixture1d> {
    if g_max == 0 {
        return Err(Error::InvalidInput("g_max must be at least 1".into()));
    }
    let family = Family1d::for_bounds(lower, upper);
    let fits = (1..=g_max)
        .filter(|&k| k == 1 || x.len() >= 3 * k)
        .map(|k| fit_mixture_1d_family(x, family, k, seed.wrapping_add(k as u64)))
        .collect();
    select_min_bic(fits, |m: &Mixture1d| m.bic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Gamma, StandardNormal};

    const INF: f64 = f64::INFINITY;

    #[test]
    fn normal_data_single_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let m = fit_mixture_1d(&x, -INF, INF, 4, 0).unwrap();
        assert_eq!(m.n_components(), 1);
        let mean = x.iter().sum::<f64>() / 1000.0;
        let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1000.0).sqrt();
        let c = m.components()[0];
        assert!((c.p1 - mean).abs() < 1e-6 && (c.p2 - sd).abs() < 1e-4);
        assert!(c.p1.abs() < 0.1 && (c.p2 - 1.0).abs() < 0.1);
    }

    #[test]
    fn uniform_data_beta_is_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        let m = fit_mixture_1d(&x, 0.0, 1.0, 3, 0).unwrap();
        assert!(matches!(m.family(), Family1d::Beta { .. }));
        for i in 0..=90 {
            let v = 0.05 + i as f64 * 0.01;
            assert!((m.pdf(v) - 1.0).abs() < 0.15, "pdf({v}) = {}", m.pdf(v));
        }
    }

    #[test]
    fn gamma_mean_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Gamma::new(3.0, 1.0).unwrap();
        let x: Vec<f64> = (0..2000).map(|_| g.sample(&mut rng)).collect();
        let m = fit_mixture_1d(&x, 0.0, INF, 3, 0).unwrap();
        let fitted_mean: f64 = m.components().iter().map(|c| c.weight * c.p1 / c.p2).sum();
        assert!((fitted_mean / 3.0 - 1.0).abs() < 0.05, "{fitted_mean}");
        let sample_mean = x.iter().sum::<f64>() / x.len() as f64;
        assert!((fitted_mean - sample_mean).abs() < 0.05 * sample_mean);
    }

    #[test]
    fn reflected_gamma_and_quantiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Gamma::new(2.0, 1.0).unwrap();
        let x: Vec<f64> = (0..500).map(|_| 5.0 - g.sample(&mut rng)).collect();
        let m = fit_mixture_1d(&x, -INF, 5.0, 2, 0).unwrap();
        assert_eq!(m.pdf(5.5), 0.0);
        assert_eq!(m.cdf(5.0), 1.0);
        for u in [0.01, 0.3, 0.5, 0.97] {
            let q = m.quantile(u).unwrap();
            assert!((m.cdf(q) - u).abs() < 1e-9, "{u}");
        }
        assert!(matches!(m.quantile(1.0), Err(Error::InvalidQuantile(_))));
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            fit_mixture_1d(&[1.0, 2.0, 3.0], -INF, INF, 2, 0),
            Err(Error::InsufficientSamples { .. })
        ));
    }
}
