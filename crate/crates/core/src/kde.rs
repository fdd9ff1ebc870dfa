//! Multivariate Gaussian kernel density estimation.
//!
//! Bandwidths come from the univariate Sheather–Jones solve-the-equation
//! plug-in. For D ≤ 4 the samples are whitened by the Cholesky factor of
//! their covariance, a plug-in bandwidth is chosen per whitened axis and the
//! result is rotated back into a full bandwidth matrix. For D > 4 the matrix
//! is diagonal. In both cases the per-axis bandwidths are rescaled from the
//! univariate rate `N^{-1/5}` to the D-variate rate `N^{-1/(D+4)}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{brent_root, Cholesky, LN_SQRT_2PI};
use crate::sample::SampleSet;

const SJ_BINS: usize = 1000;
const SJ_DELMAX: f64 = 1000.0;
/// Dimension up to which a full bandwidth matrix is estimated.
pub const FULL_MATRIX_MAX_DIM: usize = 4;
const BANDWIDTH_FLOOR: f64 = 1e-8;

/// Pairwise-distance histogram used by the plug-in functionals.
struct BinnedPairs {
    n: f64,
    width: f64,
    counts: Vec<f64>,
}

impl BinnedPairs {
    fn new(x: &[f64]) -> Self {
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo) * 1.01 / SJ_BINS as f64;
        let mut bins = vec![0.0f64; SJ_BINS];
        for &v in x {
            let k = (((v - lo) / width).floor() as usize).min(SJ_BINS - 1);
            bins[k] += 1.0;
        }
        let mut counts = vec![0.0; SJ_BINS];
        counts[0] = bins.iter().map(|c| c * (c - 1.0) / 2.0).sum();
        for (k, slot) in counts.iter_mut().enumerate().skip(1) {
            *slot = bins.iter().zip(&bins[k..]).map(|(a, b)| a * b).sum();
        }
        Self { n: x.len() as f64, width, counts }
    }

    /// Estimate of the integrated squared second derivative of the density.
    fn phi4(&self, h: f64) -> f64 {
        let mut sum = 0.0;
        for (k, c) in self.counts.iter().enumerate() {
            let mut delta = k as f64 * self.width / h;
            delta *= delta;
            if delta >= SJ_DELMAX {
                break;
            }
            sum += (-delta / 2.0).exp() * (delta * delta - 6.0 * delta + 3.0) * c;
        }
        sum = 2.0 * sum + self.n * 3.0;
        sum / (self.n * (self.n - 1.0) * h.powi(5) * (2.0 * std::f64::consts::PI).sqrt())
    }

    fn phi6(&self, h: f64) -> f64 {
        let mut sum = 0.0;
        for (k, c) in self.counts.iter().enumerate() {
            let mut delta = k as f64 * self.width / h;
            delta *= delta;
            if delta >= SJ_DELMAX {
                break;
            }
            sum += (-delta / 2.0).exp() * (delta * delta * delta - 15.0 * delta * delta + 45.0 * delta - 15.0) * c;
        }
        sum = 2.0 * sum - 15.0 * self.n;
        sum / (self.n * (self.n - 1.0) * h.powi(7) * (2.0 * std::f64::consts::PI).sqrt())
    }
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

fn iqr(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    crate::numeric::type7_quantile(&s, 0.75) - crate::numeric::type7_quantile(&s, 0.25)
}

/// Sheather–Jones solve-the-equation bandwidth (standard deviation of the
/// Gaussian kernel) for one-dimensional samples.
pub fn sheather_jones_bandwidth(x: &[f64]) -> Result<f64> {
    if x.len() < 5 {
        return Err(Error::InsufficientSamples { needed: 5, got: x.len() });
    }
    let (_, sd) = mean_sd(x);
    if !(sd > 0.0) {
        return Err(Error::DegenerateSample("zero variance".into()));
    }
    let q = iqr(x) / 1.349;
    let scale = if q > 0.0 { sd.min(q) } else { sd };
    let n = x.len() as f64;
    let pairs = BinnedPairs::new(x);

    let hmax = 1.144 * scale * n.powf(-0.2);
    let a = 1.24 * scale * n.powf(-1.0 / 7.0);
    let b = 1.23 * scale * n.powf(-1.0 / 9.0);
    let c1 = 1.0 / (2.0 * std::f64::consts::PI.sqrt() * n);
    let td = -pairs.phi6(b);
    let sd_a = pairs.phi4(a);
    if !(td > 0.0) || !td.is_finite() || !(sd_a > 0.0) {
        return Err(Error::DegenerateSample("sample too sparse for the plug-in functionals".into()));
    }
    let alph2 = 1.357 * (sd_a / td).powf(1.0 / 7.0);
    let f = |h: f64| {
        let s = pairs.phi4(alph2 * h.powf(5.0 / 7.0));
        if s > 0.0 {
            (c1 / s).powf(0.2) - h
        } else {
            f64::NEG_INFINITY
        }
    };
    let mut lower = 0.1 * hmax;
    let mut upper = hmax;
    let mut tries = 0;
    while f(lower) * f(upper) > 0.0 {
        tries += 1;
        if tries > 99 {
            return Err(Error::DegenerateSample("no bandwidth root found".into()));
        }
        if tries % 2 == 1 {
            upper *= 1.2;
        } else {
            lower /= 1.2;
        }
    }
    brent_root(f, lower, upper, 1e-13 * hmax, 500)
}

/// Normal-reference bandwidth `1.06 σ N^{-1/5}`, used when the plug-in
/// functionals cannot be estimated.
pub fn normal_reference_bandwidth(x: &[f64]) -> f64 {
    let (_, sd) = mean_sd(x);
    1.06 * sd * (x.len() as f64).powf(-0.2)
}

/// Factor converting a univariate-rate bandwidth to the D-variate rate.
pub fn dimension_rescale(n: usize, d: usize) -> f64 {
    let n = n as f64;
    n.powf(0.2) * n.powf(-1.0 / (d as f64 + 4.0))
}

/// Sheather–Jones with a normal-reference fallback, floored relative to the spread.
pub fn robust_bandwidth(x: &[f64]) -> f64 {
    let (_, sd) = mean_sd(x);
    let h = match sheather_jones_bandwidth(x) {
        Ok(h) => h,
        Err(e) => {
            log::warn!("plug-in bandwidth failed ({e}); using the normal reference rule");
            normal_reference_bandwidth(x)
        }
    };
    h.max(BANDWIDTH_FLOOR * sd)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct KdePayload {
    d: usize,
    #[serde(with = "crate::io::num_vec")]
    train: Vec<f64>,
    #[serde(with = "crate::io::num_vec")]
    bandwidth: Vec<f64>,
}

/// Equal-weight mixture of N(x_i, Σ) kernels.
#[derive(Debug, Clone)]
pub struct KdeModel {
    d: usize,
    train: Vec<f64>,
    bandwidth: Vec<f64>,
    chol: Cholesky,
    whitened: Vec<f64>,
    log_norm: f64,
}

impl KdeModel {
    /// Builds a model from training points and an explicit bandwidth matrix.
    pub fn with_bandwidth(samples: &SampleSet, bandwidth: Vec<f64>) -> Result<Self> {
        Self::build(samples.dim(), samples.positions().to_vec(), bandwidth)
    }

    fn build(d: usize, train: Vec<f64>, bandwidth: Vec<f64>) -> Result<Self> {
        let chol = Cholesky::new(&bandwidth, d)
            .map_err(|e| Error::DegenerateSample(format!("bandwidth matrix: {e}")))?;
        let mut whitened = train.clone();
        for row in whitened.chunks_exact_mut(d) {
            chol.solve_lower_in_place(row);
        }
        let n = train.len() / d;
        let log_norm = -0.5 * chol.log_det() - d as f64 * LN_SQRT_2PI - (n as f64).ln();
        Ok(Self { d, train, bandwidth, chol, whitened, log_norm })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_train(&self) -> usize {
        self.train.len() / self.d
    }

    /// Bandwidth matrix Σ, row-major.
    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let mut w = x.to_vec();
        self.chol.solve_lower_in_place(&mut w);
        let mut m = f64::NEG_INFINITY;
        let mut s = 0.0;
        for wi in self.whitened.chunks_exact(self.d) {
            let e = -0.5 * w.iter().zip(wi).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            if e > m {
                s = s * (m - e).exp() + 1.0;
                m = e;
            } else {
                s += (e - m).exp();
            }
        }
        if m == f64::NEG_INFINITY {
            return m;
        }
        self.log_norm + m + s.ln()
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        self.log_pdf(x).exp()
    }

    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_train = self.n_train();
        (0..n)
            .map(|_| {
                let i = rng.random_range(0..n_train);
                let z: Vec<f64> = (0..self.d).map(|_| rng.sample(StandardNormal)).collect();
                let off = self.chol.mul_lower(&z);
                self.train[i * self.d..(i + 1) * self.d].iter().zip(off).map(|(a, b)| a + b).collect()
            })
            .collect()
    }

    pub fn to_payload(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(KdePayload { d: self.d, train: self.train.clone(), bandwidth: self.bandwidth.clone() })?)
    }

    pub fn from_payload(v: &serde_json::Value) -> Result<Self> {
        let p: KdePayload = serde_json::from_value(v.clone())?;
        if p.d == 0 || p.train.len() % p.d != 0 || p.bandwidth.len() != p.d * p.d {
            return Err(Error::Format("inconsistent kde payload".into()));
        }
        Self::build(p.d, p.train, p.bandwidth)
    }
}

/// Fits a KDE with plug-in bandwidth selection.
pub fn fit_kde(samples: &SampleSet) -> Result<KdeModel> {
    let (n, d) = (samples.len(), samples.dim());
    if n <= d {
        return Err(Error::DegenerateSample(format!("need more than {d} samples, got {n}")));
    }
    let r = dimension_rescale(n, d);
    let mut bandwidth = vec![0.0; d * d];
    if d <= FULL_MATRIX_MAX_DIM {
        let mut cov = samples.covariance();
        let unbias = n as f64 / (n as f64 - 1.0);
        cov.iter_mut().for_each(|v| *v *= unbias);
        let chol = Cholesky::new(&cov, d)
            .map_err(|_| Error::DegenerateSample("singular sample covariance".into()))?;
        let mut white = samples.positions().to_vec();
        for row in white.chunks_exact_mut(d) {
            chol.solve_lower_in_place(row);
        }
        let h: Vec<f64> = (0..d)
            .map(|j| {
                let col: Vec<f64> = white.chunks_exact(d).map(|row| row[j]).collect();
                robust_bandwidth(&col) * r
            })
            .collect();
        // Σ = L diag(h²) L'
        let l = chol.factor();
        for a in 0..d {
            for b in 0..d {
                bandwidth[a * d + b] = (0..d).map(|k| l[a * d + k] * h[k] * h[k] * l[b * d + k]).sum();
            }
        }
    } else {
        for j in 0..d {
            let col = samples.column(j);
            let (_, sd) = mean_sd(&col);
            if !(sd > 0.0) {
                return Err(Error::DegenerateSample(format!("dimension {j} has zero variance")));
            }
            let h = robust_bandwidth(&col) * r;
            bandwidth[j * d + j] = h * h;
        }
    }
    KdeModel::build(d, samples.positions().to_vec(), bandwidth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Distribution;

    fn normal_draws(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn sj_close_to_normal_reference_for_gaussian_data() {
        let x = normal_draws(10_000, 3);
        let h = sheather_jones_bandwidth(&x).unwrap();
        let reference = 1.06 * 10_000f64.powf(-0.2);
        assert!((h / reference - 1.0).abs() < 0.15, "h = {h}, ref = {reference}");
    }

    #[test]
    fn sj_degenerate_and_equivariant() {
        assert!(matches!(sheather_jones_bandwidth(&[2.0; 20]), Err(Error::DegenerateSample(_))));
        let x = normal_draws(2000, 5);
        let h = sheather_jones_bandwidth(&x).unwrap();
        let c = 3.7;
        let xs: Vec<f64> = x.iter().map(|v| v * c).collect();
        let hs = sheather_jones_bandwidth(&xs).unwrap();
        assert!((hs - c * h).abs() <= 1e-10 * c * h, "{hs} vs {}", c * h);
    }

    #[test]
    fn rescale_factor_for_six_dimensions() {
        let factor = 10_000f64.powf(-1.0 / 10.0);
        assert!((factor - 0.39811).abs() < 1e-5);
        assert!((dimension_rescale(10_000, 6) - 10_000f64.powf(0.2) * factor).abs() < 1e-12);
    }

    #[test]
    fn too_few_samples() {
        let s = SampleSet::new(vec![vec![0.0, 1.0]], None, None).unwrap();
        assert!(matches!(fit_kde(&s), Err(Error::DegenerateSample(_))));
    }

    #[test]
    fn lone_kernel_density() {
        let s = SampleSet::new(vec![vec![0.0, 0.0]], None, None).unwrap();
        let m = KdeModel::with_bandwidth(&s, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let want = 1.0 / (2.0 * std::f64::consts::PI);
        assert!((m.pdf(&[0.0, 0.0]) - want).abs() < 1e-15);
        let s = SampleSet::new(vec![vec![0.3, -1.2]], None, None).unwrap();
        let m = KdeModel::with_bandwidth(&s, vec![0.5, 0.2, 0.2, 0.8]).unwrap();
        let d = [0.41, -0.17];
        let a = m.pdf(&[0.3 + d[0], -1.2 + d[1]]);
        let b = m.pdf(&[0.3 - d[0], -1.2 - d[1]]);
        assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn sampling_edge_cases() {
        let s = SampleSet::new(vec![vec![1.0, 2.0], vec![-3.0, 4.0]], None, None).unwrap();
        let m = KdeModel::with_bandwidth(&s, vec![1e-20, 0.0, 0.0, 1e-20]).unwrap();
        assert!(m.sample(0, 1).is_empty());
        let draws = m.sample(50_000, 9);
        let mut first = 0usize;
        for p in &draws {
            let near_a = (p[0] - 1.0).abs() < 1e-8 && (p[1] - 2.0).abs() < 1e-8;
            let near_b = (p[0] + 3.0).abs() < 1e-8 && (p[1] - 4.0).abs() < 1e-8;
            assert!(near_a || near_b);
            first += near_a as usize;
        }
        let frac = first as f64 / draws.len() as f64;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }
}
