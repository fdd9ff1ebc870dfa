//! Box probabilities and truncated moments of multivariate normals by
//! Genz's sequential conditioning with randomized lattice QMC.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numeric::{norm_cdf, norm_pdf, norm_ppf, Cholesky};

const REPLICATES: usize = 10;
const TARGET_SE: f64 = 1e-4;
const MAX_POINTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxProbability {
    pub p: f64,
    pub se: f64,
    pub points: usize,
}

/// Reordered Cholesky factor with standardized limits.
struct Integrand {
    d: usize,
    l: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    perm: Vec<usize>,
}

impl Integrand {
    /// Genz–Bretz variable prioritization: at each step take the variable
    /// with the smallest conditional interval probability.
    fn new(mean: &[f64], cov: &[f64], lower: &[f64], upper: &[f64]) -> Result<Self> {
        let d = mean.len();
        Cholesky::new(cov, d)?;
        let mut c = cov.to_vec();
        let mut a: Vec<f64> = lower.iter().zip(mean).map(|(x, m)| x - m).collect();
        let mut b: Vec<f64> = upper.iter().zip(mean).map(|(x, m)| x - m).collect();
        let mut perm: Vec<usize> = (0..d).collect();
        let mut l = vec![0.0; d * d];
        let mut y = vec![0.0; d];
        for i in 0..d {
            let mut best = i;
            let mut best_p = f64::INFINITY;
            for j in i..d {
                let s: f64 = (0..i).map(|k| l[j * d + k] * y[k]).sum();
                let v = c[j * d + j] - (0..i).map(|k| l[j * d + k] * l[j * d + k]).sum::<f64>();
                let sd = v.max(1e-300).sqrt();
                let p = norm_cdf((b[j] - s) / sd) - norm_cdf((a[j] - s) / sd);
                if p < best_p {
                    best_p = p;
                    best = j;
                }
            }
            if best != i {
                for k in 0..d {
                    c.swap(i * d + k, best * d + k);
                }
                for k in 0..d {
                    c.swap(k * d + i, k * d + best);
                }
                for k in 0..i {
                    l.swap(i * d + k, best * d + k);
                }
                a.swap(i, best);
                b.swap(i, best);
                perm.swap(i, best);
            }
            let v = c[i * d + i] - (0..i).map(|k| l[i * d + k] * l[i * d + k]).sum::<f64>();
            if !(v > 0.0) {
                return Err(Error::DegenerateCovariance(format!("pivot {i} is {v:e}")));
            }
            let lii = v.sqrt();
            l[i * d + i] = lii;
            for r in i + 1..d {
                let s: f64 = (0..i).map(|k| l[r * d + k] * l[i * d + k]).sum();
                l[r * d + i] = (c[r * d + i] - s) / lii;
            }
            let s: f64 = (0..i).map(|k| l[i * d + k] * y[k]).sum();
            let (lo, hi) = ((a[i] - s) / lii, (b[i] - s) / lii);
            let mass = norm_cdf(hi) - norm_cdf(lo);
            y[i] = if mass > 1e-300 {
                (norm_pdf(lo) - norm_pdf(hi)) / mass
            } else if lo.is_finite() {
                lo
            } else {
                hi
            };
            if !y[i].is_finite() {
                y[i] = 0.0;
            }
        }
        Ok(Self { d, l, a, b, perm })
    }

    /// Evaluates the integrand at `w` (length ≥ d-1) and fills the standard
    /// normal coordinates `y` for the first `w.len() + 1` variables (clamped to d).
    fn eval(&self, w: &[f64], y: &mut [f64]) -> f64 {
        let d = self.d;
        let mut f = 1.0;
        for i in 0..d {
            let s: f64 = (0..i).map(|k| self.l[i * d + k] * y[k]).sum();
            let lii = self.l[i * d + i];
            let lo = norm_cdf((self.a[i] - s) / lii);
            let hi = norm_cdf((self.b[i] - s) / lii);
            let m = hi - lo;
            if !(m > 0.0) {
                return 0.0;
            }
            f *= m;
            if i < w.len() {
                let u = (lo + w[i] * m).clamp(1e-300, 1.0 - 1e-16);
                y[i] = norm_ppf(u);
            } else if i + 1 < d {
                y[i] = 0.0;
            }
        }
        f
    }

    fn point(&self, y: &[f64], mean: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut x = vec![0.0; d];
        for i in 0..d {
            let v: f64 = (0..=i).map(|k| self.l[i * d + k] * y[k]).sum();
            x[self.perm[i]] = mean[self.perm[i]] + v;
        }
        x
    }
}

fn lattice_generator(dim: usize) -> Vec<f64> {
    let mut primes = Vec::new();
    let mut c = 2u64;
    while primes.len() < dim {
        if (2..c).take_while(|p| p * p <= c).all(|p| c % p != 0) {
            primes.push(c);
        }
        c += 1;
    }
    primes.iter().map(|&p| (p as f64).sqrt().fract()).collect()
}

fn tent(v: f64) -> f64 {
    (2.0 * v - 1.0).abs()
}

fn all_infinite(lower: &[f64], upper: &[f64]) -> bool {
    lower.iter().all(|a| *a == f64::NEG_INFINITY) && upper.iter().all(|b| *b == f64::INFINITY)
}

/// `P(lower ≤ X ≤ upper)` for `X ~ N(mean, cov)`.
pub fn mvn_box_probability(mean: &[f64], cov: &[f64], lower: &[f64], upper: &[f64], seed: u64) -> Result<BoxProbability> {
    let d = mean.len();
    if cov.len() != d * d || lower.len() != d || upper.len() != d {
        return Err(Error::InvalidInput("dimension mismatch".into()));
    }
    if all_infinite(lower, upper) {
        Cholesky::new(cov, d)?;
        return Ok(BoxProbability { p: 1.0, se: 0.0, points: 0 });
    }
    let integ = Integrand::new(mean, cov, lower, upper)?;
    let mut y = vec![0.0; d];
    if d == 1 {
        let p = integ.eval(&[], &mut y);
        return Ok(BoxProbability { p, se: 0.0, points: 1 });
    }
    let z = lattice_generator(d - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut n = 256usize;
    let mut w = vec![0.0; d - 1];
    loop {
        let mut reps = [0.0; REPLICATES];
        for rep in reps.iter_mut() {
            let shift: Vec<f64> = (0..d - 1).map(|_| rng.random::<f64>()).collect();
            let mut s = 0.0;
            for k in 1..=n {
                for j in 0..d - 1 {
                    w[j] = tent((k as f64 * z[j] + shift[j]).fract());
                }
                s += integ.eval(&w, &mut y);
            }
            *rep = s / n as f64;
        }
        let mean_p = reps.iter().sum::<f64>() / REPLICATES as f64;
        let var = reps.iter().map(|r| (r - mean_p).powi(2)).sum::<f64>() / (REPLICATES * (REPLICATES - 1)) as f64;
        let se = var.sqrt();
        let points = n * REPLICATES;
        if se <= TARGET_SE || 2 * points > MAX_POINTS {
            return Ok(BoxProbability { p: mean_p.clamp(0.0, 1.0), se, points });
        }
        n *= 2;
    }
}

/// Mass, mean and covariance of `N(mean, cov)` restricted to a box.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedMoments {
    pub mass: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
}

/// QMC estimate with a single seeded lattice shift, deterministic in `seed`.
pub fn truncated_moments(
    mean: &[f64],
    cov: &[f64],
    lower: &[f64],
    upper: &[f64],
    points: usize,
    seed: u64,
) -> Result<TruncatedMoments> {
    let d = mean.len();
    let integ = Integrand::new(mean, cov, lower, upper)?;
    let z = lattice_generator(d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
    let mut y = vec![0.0; d];
    let mut w = vec![0.0; d];
    let mut tot = 0.0;
    let mut m1 = vec![0.0; d];
    let mut m2 = vec![0.0; d * d];
    for k in 1..=points {
        for j in 0..d {
            w[j] = tent((k as f64 * z[j] + shift[j]).fract());
        }
        let f = integ.eval(&w, &mut y);
        if f == 0.0 {
            continue;
        }
        let x = integ.point(&y, mean);
        tot += f;
        for a in 0..d {
            let da = x[a] - mean[a];
            m1[a] += f * da;
            for b in a..d {
                m2[a * d + b] += f * da * (x[b] - mean[b]);
            }
        }
    }
    if !(tot > 0.0) {
        return Ok(TruncatedMoments { mass: 0.0, mean: mean.to_vec(), cov: cov.to_vec() });
    }
    let off: Vec<f64> = m1.iter().map(|v| v / tot).collect();
    let mut c = vec![0.0; d * d];
    for a in 0..d {
        for b in a..d {
            let v = m2[a * d + b] / tot - off[a] * off[b];
            c[a * d + b] = v;
            c[b * d + a] = v;
        }
    }
    Ok(TruncatedMoments {
        mass: tot / points as f64,
        mean: mean.iter().zip(&off).map(|(m, o)| m + o).collect(),
        cov: c,
    })
}
