//! One-dimensional marginals (cdf, pdf, quantile) used by the vine copulas.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kde::robust_bandwidth;
use crate::mixture::{fit_mixture_1d, Mixture1d};
use crate::numeric::{golden_section_min, norm_cdf, type7_quantile, LN_SQRT_2PI};

pub const MIN_ECDF_SAMPLES: usize = 10;
pub const MIN_TAIL_EXCESSES: usize = 30;
pub const DEFAULT_TAIL_MASS: f64 = 0.1;
pub const XI_RANGE: (f64, f64) = (-0.45, 2.0);
/// Kernels are truncated at this many bandwidths.
const KERNEL_REACH: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalKind {
    EcdfKd,
    ParetoTail,
    ParamMixture,
}

impl MarginalKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::EcdfKd => "ecdf",
            Self::ParetoTail => "pareto",
            Self::ParamMixture => "mixture",
        }
    }
}

/// Gaussian kernel density of sorted samples, reflected at finite bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kd1 {
    #[serde(with = "crate::io::num_vec")]
    sorted: Vec<f64>,
    #[serde(with = "crate::io::num")]
    h: f64,
    #[serde(with = "crate::io::num")]
    lower: f64,
    #[serde(with = "crate::io::num")]
    upper: f64,
}

impl Kd1 {
    /// `sorted` must be ascending; bounds may be infinite.
    pub fn new(sorted: Vec<f64>, lower: f64, upper: f64) -> Result<Self> {
        let h = robust_bandwidth(&sorted);
        if !(h > 0.0) {
            return Err(Error::DegenerateSample("zero spread".into()));
        }
        Ok(Self { sorted, h, lower, upper })
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    /// Plain kernel sum at `y`, without reflections.
    pub fn raw(&self, y: f64) -> f64 {
        let lo = self.sorted.partition_point(|v| *v < y - KERNEL_REACH * self.h);
        let hi = self.sorted.partition_point(|v| *v <= y + KERNEL_REACH * self.h);
        let s: f64 = self.sorted[lo..hi]
            .iter()
            .map(|v| {
                let z = (y - v) / self.h;
                (-0.5 * z * z).exp()
            })
            .sum();
        s * (-LN_SQRT_2PI).exp() / (self.h * self.sorted.len() as f64)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.lower || x > self.upper {
            return 0.0;
        }
        let mut f = self.raw(x);
        if self.lower.is_finite() {
            f += self.raw(2.0 * self.lower - x);
        }
        if self.upper.is_finite() {
            f += self.raw(2.0 * self.upper - x);
        }
        f
    }

    /// `∫_a^b pdf`, summed analytically over the kernels.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        let a = a.max(self.lower);
        let b = b.min(self.upper);
        if !(b > a) {
            return 0.0;
        }
        let h = self.h;
        let mut s = 0.0;
        for &v in &self.sorted {
            s += norm_cdf((b - v) / h) - norm_cdf((a - v) / h);
            if self.lower.is_finite() {
                let m = 2.0 * self.lower - v;
                s += norm_cdf((b - m) / h) - norm_cdf((a - m) / h);
            }
            if self.upper.is_finite() {
                let m = 2.0 * self.upper - v;
                s += norm_cdf((b - m) / h) - norm_cdf((a - m) / h);
            }
        }
        s / self.sorted.len() as f64
    }
}

fn sorted_finite(x: &[f64], lower: f64, upper: f64) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSample("non-finite marginal sample".into()));
    }
    if x.iter().any(|v| *v < lower || *v > upper) {
        return Err(Error::OutOfSupport("marginal sample beyond its bound".into()));
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    if s[0] == s[s.len() - 1] {
        return Err(Error::DegenerateSample("all marginal samples are identical".into()));
    }
    Ok(s)
}

fn count_le(sorted: &[f64], x: f64) -> usize {
    sorted.partition_point(|v| *v <= x)
}

/// Right-continuous ECDF for the cdf, interpolated order statistics for the
/// quantile and a (reflected) kernel density for the pdf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcdfKd {
    kd: Kd1,
}

impl EcdfKd {
    pub fn fit(x: &[f64], lower: f64, upper: f64) -> Result<Self> {
        if x.len() < MIN_ECDF_SAMPLES {
            return Err(Error::InsufficientSamples { needed: MIN_ECDF_SAMPLES, got: x.len() });
        }
        let sorted = sorted_finite(x, lower, upper)?;
        Ok(Self { kd: Kd1::new(sorted, lower, upper)? })
    }

    fn n(&self) -> usize {
        self.kd.sorted.len()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        count_le(&self.kd.sorted, x) as f64 / self.n() as f64
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.kd.pdf(x)
    }

    pub fn quantile(&self, u: f64) -> f64 {
        type7_quantile(&self.kd.sorted, u)
    }

    pub fn kd(&self) -> &Kd1 {
        &self.kd
    }
}

/// GPD log-likelihood of excesses with the scale fixed.
fn gpd_loglik(z: &[f64], xi: f64, sigma: f64) -> f64 {
    let mut ll = -(z.len() as f64) * sigma.ln();
    if xi.abs() < 1e-12 {
        return ll - z.iter().sum::<f64>() / sigma;
    }
    for &v in z {
        let t = xi * v / sigma;
        if t <= -1.0 {
            return f64::NEG_INFINITY;
        }
        ll -= (1.0 / xi + 1.0) * t.ln_1p();
    }
    ll
}

/// Maximum-likelihood GPD shape on `[-0.45, 2]` with the scale held fixed.
pub fn fit_gpd_shape(excesses: &[f64], sigma: f64) -> Result<f64> {
    if excesses.len() < MIN_TAIL_EXCESSES {
        return Err(Error::InsufficientTail { needed: MIN_TAIL_EXCESSES, got: excesses.len() });
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidInput(format!("GPD scale must be positive, got {sigma}")));
    }
    if excesses.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidInput("excesses must be nonnegative".into()));
    }
    let (xi, _) = golden_section_min(|xi| -gpd_loglik(excesses, xi, sigma), XI_RANGE.0, XI_RANGE.1, 1e-6);
    Ok(xi)
}

/// GPD survival `(1 + ξz)^{-1/ξ}` of a standardized excess.
fn gpd_sf(z: f64, xi: f64) -> f64 {
    if xi.abs() < 1e-12 {
        return (-z).exp();
    }
    let t = 1.0 + xi * z;
    if t <= 0.0 {
        return 0.0;
    }
    (-(t.ln()) / xi).exp()
}

fn gpd_logpdf(z: f64, xi: f64) -> f64 {
    if xi.abs() < 1e-12 {
        return -z;
    }
    let t = 1.0 + xi * z;
    if t <= 0.0 {
        return f64::NEG_INFINITY;
    }
    -(1.0 / xi + 1.0) * t.ln()
}

/// Standardized excess with survival `s`.
fn gpd_isf(s: f64, xi: f64) -> f64 {
    if xi.abs() < 1e-12 {
        -s.ln()
    } else {
        (s.powf(-xi) - 1.0) / xi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Tail {
    Gpd {
        #[serde(with = "crate::io::num")]
        xi: f64,
        #[serde(with = "crate::io::num")]
        sigma: f64,
    },
    /// Bounded side with non-negligible density at the bound: ECDF and
    /// reflected KD renormalized to the side's mass.
    Empirical {
        #[serde(with = "crate::io::num_vec")]
        sorted: Vec<f64>,
        #[serde(with = "crate::io::num")]
        kd_mass: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoTail {
    #[serde(with = "crate::io::num")]
    q: f64,
    #[serde(with = "crate::io::num")]
    t_lower: f64,
    #[serde(with = "crate::io::num")]
    t_upper: f64,
    kd: Kd1,
    /// Samples in `(t_lower, t_upper]`, ascending.
    #[serde(with = "crate::io::num_vec")]
    body: Vec<f64>,
    /// `(1 - 2q) / ∫_{t_lower}^{t_upper} kd`.
    #[serde(with = "crate::io::num")]
    body_scale: f64,
    lower_tail: Tail,
    upper_tail: Tail,
}

impl ParetoTail {
    pub fn fit(x: &[f64], lower: f64, upper: f64, q: f64) -> Result<Self> {
        let n = x.len();
        if n < 300 {
            return Err(Error::InsufficientSamples { needed: 300, got: n });
        }
        if !(q > 0.0 && q < 0.5) {
            return Err(Error::InvalidInput(format!("tail mass must be in (0, 0.5), got {q}")));
        }
        let sorted = sorted_finite(x, lower, upper)?;
        let t_lower = type7_quantile(&sorted, q);
        let t_upper = type7_quantile(&sorted, 1.0 - q);
        let kd = Kd1::new(sorted.clone(), lower, upper)?;
        let body: Vec<f64> = sorted.iter().copied().filter(|v| *v > t_lower && *v <= t_upper).collect();
        if body.is_empty() {
            return Err(Error::DegenerateSample("no samples between the tail thresholds".into()));
        }
        let body_scale = (1.0 - 2.0 * q) / kd.mass(t_lower, t_upper);
        let eps = 1.0 / n as f64;
        let side = |bound: f64, t: f64, is_lower: bool| -> Result<Tail> {
            let excess: Vec<f64> = if is_lower {
                sorted.iter().filter(|v| **v < t).map(|v| t - v).collect()
            } else {
                sorted.iter().filter(|v| **v > t).map(|v| v - t).collect()
            };
            if bound.is_finite() && kd.raw(bound) >= eps {
                let part: Vec<f64> = if is_lower {
                    sorted.iter().copied().filter(|v| *v <= t).collect()
                } else {
                    sorted.iter().copied().filter(|v| *v > t).collect()
                };
                let kd_mass = if is_lower { kd.mass(f64::NEG_INFINITY, t) } else { kd.mass(t, f64::INFINITY) };
                return Ok(Tail::Empirical { sorted: part, kd_mass });
            }
            let f_t = kd.pdf(t) * body_scale;
            let sigma = q / f_t;
            let xi = fit_gpd_shape(&excess, sigma)?;
            Ok(Tail::Gpd { xi, sigma })
        };
        let lower_tail = side(lower, t_lower, true)?;
        let upper_tail = side(upper, t_upper, false)?;
        Ok(Self { q, t_lower, t_upper, kd, body, body_scale, lower_tail, upper_tail })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn thresholds(&self) -> (f64, f64) {
        (self.t_lower, self.t_upper)
    }

    pub fn tails(&self) -> (&Tail, &Tail) {
        (&self.lower_tail, &self.upper_tail)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let q = self.q;
        if x < self.kd.lower {
            return 0.0;
        }
        if x > self.kd.upper {
            return 1.0;
        }
        if x < self.t_lower {
            return match &self.lower_tail {
                Tail::Gpd { xi, sigma } => q * gpd_sf((self.t_lower - x) / sigma, *xi),
                Tail::Empirical { sorted, .. } => q * count_le(sorted, x) as f64 / sorted.len() as f64,
            };
        }
        if x <= self.t_upper {
            return q + (1.0 - 2.0 * q) * count_le(&self.body, x) as f64 / self.body.len() as f64;
        }
        match &self.upper_tail {
            Tail::Gpd { xi, sigma } => 1.0 - q * gpd_sf((x - self.t_upper) / sigma, *xi),
            Tail::Empirical { sorted, .. } => 1.0 - q + q * count_le(sorted, x) as f64 / sorted.len() as f64,
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.kd.lower || x > self.kd.upper {
            return 0.0;
        }
        let (tail, z) = if x < self.t_lower {
            (&self.lower_tail, self.t_lower - x)
        } else if x > self.t_upper {
            (&self.upper_tail, x - self.t_upper)
        } else {
            return self.kd.pdf(x) * self.body_scale;
        };
        match tail {
            Tail::Gpd { xi, sigma } => self.q / sigma * gpd_logpdf(z / sigma, *xi).exp(),
            Tail::Empirical { kd_mass, .. } => self.kd.pdf(x) * self.q / kd_mass,
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let q = self.q;
        let clip = |v: f64| v.clamp(self.kd.lower, self.kd.upper);
        if u < q {
            return match &self.lower_tail {
                Tail::Gpd { xi, sigma } => clip(self.t_lower - sigma * gpd_isf(u / q, *xi)),
                Tail::Empirical { sorted, .. } => type7_quantile(sorted, u / q),
            };
        }
        if u > 1.0 - q {
            let s = (1.0 - u) / q;
            return match &self.upper_tail {
                Tail::Gpd { xi, sigma } => clip(self.t_upper + sigma * gpd_isf(s, *xi)),
                Tail::Empirical { sorted, .. } => type7_quantile(sorted, 1.0 - s),
            };
        }
        // Piecewise-linear through (t_lower, 0) and (body_k, k / n_body).
        let g = (u - q) / (1.0 - 2.0 * q);
        let nb = self.body.len() as f64;
        let pos = g * nb;
        let k = pos.floor() as usize;
        if k >= self.body.len() {
            return self.body[self.body.len() - 1];
        }
        let left = if k == 0 { self.t_lower } else { self.body[k - 1] };
        left + (pos - k as f64) * (self.body[k] - left)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarginalModel {
    EcdfKd(EcdfKd),
    ParetoTail(ParetoTail),
    ParamMixture {
        mixture: Mixture1d,
        n: usize,
    },
}

impl MarginalModel {
    /// Fits the requested kind; `lower`/`upper` may be infinite.
    pub fn fit(kind: MarginalKind, x: &[f64], lower: f64, upper: f64, g_max: usize, seed: u64) -> Result<Self> {
        Ok(match kind {
            MarginalKind::EcdfKd => Self::EcdfKd(EcdfKd::fit(x, lower, upper)?),
            MarginalKind::ParetoTail => Self::ParetoTail(ParetoTail::fit(x, lower, upper, DEFAULT_TAIL_MASS)?),
            MarginalKind::ParamMixture => {
                Self::ParamMixture { mixture: fit_mixture_1d(x, lower, upper, g_max, seed)?, n: x.len() }
            }
        })
    }

    pub fn kind(&self) -> MarginalKind {
        match self {
            Self::EcdfKd(_) => MarginalKind::EcdfKd,
            Self::ParetoTail(_) => MarginalKind::ParetoTail,
            Self::ParamMixture { .. } => MarginalKind::ParamMixture,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::EcdfKd(m) => m.cdf(x),
            Self::ParetoTail(m) => m.cdf(x),
            Self::ParamMixture { mixture, .. } => mixture.cdf(x),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            Self::EcdfKd(m) => m.pdf(x),
            Self::ParetoTail(m) => m.pdf(x),
            Self::ParamMixture { mixture, .. } => mixture.pdf(x),
        }
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::InvalidQuantile(u));
        }
        match self {
            Self::EcdfKd(m) => Ok(m.quantile(u)),
            Self::ParetoTail(m) => Ok(m.quantile(u)),
            Self::ParamMixture { mixture, .. } => mixture.quantile(u),
        }
    }

    /// Copula-scale value in (0, 1). The ECDF is rescaled by N/(N+1) so that
    /// training points map to their rank/(N+1) pseudo-observations.
    pub fn pit(&self, x: f64) -> f64 {
        match self {
            Self::EcdfKd(m) => {
                let n = m.n() as f64;
                let lim = 0.5 / (n + 1.0);
                (m.cdf(x) * n / (n + 1.0)).clamp(lim, 1.0 - lim)
            }
            _ => self.cdf(x).clamp(1e-12, 1.0 - 1e-12),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp, StandardNormal, StudentT};

    const INF: f64 = f64::INFINITY;

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn ecdf_examples() {
        let x: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        let m = EcdfKd::fit(&x, -INF, INF).unwrap();
        assert_eq!(m.cdf(2.0), 0.2);
        assert_eq!(m.cdf(10.0), 1.0);
        assert_eq!(m.cdf(0.5), 0.0);
        assert_eq!(type7_quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
        assert_eq!(type7_quantile(&[1.0, 2.0, 3.0], 0.5), 2.0);
        assert!(matches!(EcdfKd::fit(&[1.0, 2.0, 3.0], -INF, INF), Err(Error::InsufficientSamples { .. })));
        // F(2) for [1, 2, 3] is 2/3 by definition of the right-continuous ECDF.
        assert_eq!(count_le(&[1.0, 2.0, 3.0], 2.0) as f64 / 3.0, 2.0 / 3.0);
    }

    #[test]
    fn ecdf_cdf_of_quantile_within_one_step() {
        let x = normals(500, 1);
        let m = MarginalModel::fit(MarginalKind::EcdfKd, &x, -INF, INF, 1, 0).unwrap();
        for i in 1..99 {
            let u = i as f64 / 100.0;
            let back = m.cdf(m.quantile(u).unwrap());
            assert!((back - u).abs() <= 1.0 / 500.0 + 1e-12, "{u} -> {back}");
        }
    }

    #[test]
    fn mirrored_density_doubles_at_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..2000).map(|_| Exp::new(1.0).unwrap().sample(&mut rng)).collect();
        let free = EcdfKd::fit(&x, -INF, INF).unwrap();
        let bounded = EcdfKd::fit(&x, 0.0, INF).unwrap();
        let ratio = bounded.pdf(0.0) / free.pdf(0.0);
        assert!((1.8..=2.2).contains(&ratio), "{ratio}");
        assert_eq!(bounded.pdf(-0.01), 0.0);
        let mass = bounded.kd().mass(0.0, 50.0);
        assert!((mass - 1.0).abs() < 1e-9, "{mass}");
    }

    #[test]
    fn gpd_shape_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e: Vec<f64> = (0..5000).map(|_| Exp::new(1.0).unwrap().sample(&mut rng)).collect();
        let xi = fit_gpd_shape(&e, 1.0).unwrap();
        assert!(xi.abs() < 0.1, "{xi}");
        let g: Vec<f64> = (0..10_000)
            .map(|_| {
                let u: f64 = rng.random();
                gpd_isf(u, 0.4)
            })
            .collect();
        let xi = fit_gpd_shape(&g, 1.0).unwrap();
        assert!((0.25..=0.55).contains(&xi), "{xi}");
        let scaled: Vec<f64> = g.iter().map(|v| v * 7.5).collect();
        let xi2 = fit_gpd_shape(&scaled, 7.5).unwrap();
        assert!((xi - xi2).abs() < 1e-6);
        assert!(matches!(fit_gpd_shape(&g[..29], 1.0), Err(Error::InsufficientTail { needed: 30, got: 29 })));
    }

    #[test]
    fn pareto_construction() {
        let x = normals(3000, 4);
        let m = ParetoTail::fit(&x, -INF, INF, 0.1).unwrap();
        let (t1, t2) = m.thresholds();
        assert_eq!(m.cdf(t2), 0.9);
        assert_eq!(m.cdf(t1), 0.1);
        for t in [t1, t2] {
            let (a, b) = (m.pdf(t - 1e-12), m.pdf(t + 1e-12));
            assert!((a - b).abs() < 1e-8 * a.max(b), "{a} vs {b}");
        }
        let (lo, hi) = m.tails();
        for tail in [lo, hi] {
            let Tail::Gpd { sigma, .. } = tail else { panic!("expected GPD tails") };
            assert!(*sigma > 0.0);
        }
        // σ = q / f at the threshold.
        let Tail::Gpd { sigma, .. } = hi else { unreachable!() };
        assert!((sigma - 0.1 / m.pdf(t2)).abs() < 1e-12 * sigma);
        // Total mass by quadrature.
        let h = 1e-3;
        let s: f64 = (0..20_000).map(|i| m.pdf(-10.0 + (i as f64 + 0.5) * h) * h).sum();
        assert!((s - 1.0).abs() < 1e-3, "{s}");
        for u in [0.001, 0.05, 0.5, 0.95, 0.999] {
            let back = m.cdf(m.quantile(u));
            let tol = if (0.1..=0.9).contains(&u) { 1.0 / 2400.0 } else { 1e-12 };
            assert!((back - u).abs() <= tol, "{u} -> {back}");
        }
        assert!(matches!(ParetoTail::fit(&x[..299], -INF, INF, 0.1), Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn bounded_side_with_mass_at_bound_uses_empirical_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..2000).map(|_| Exp::new(1.0).unwrap().sample(&mut rng)).collect();
        let m = ParetoTail::fit(&x, 0.0, INF, 0.1).unwrap();
        assert!(matches!(m.tails().0, Tail::Empirical { .. }));
        assert!(matches!(m.tails().1, Tail::Gpd { .. }));
        assert_eq!(m.cdf(-1.0), 0.0);
        let h = 1e-3;
        let s: f64 = (0..40_000).map(|i| m.pdf((i as f64 + 0.5) * h) * h).sum();
        assert!((s - 1.0).abs() < 2e-3, "{s}");
    }

    #[test]
    fn student_t_tail_beats_ecdf_beyond_the_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = StudentT::new(4.0).unwrap();
        let x: Vec<f64> = (0..10_000).map(|_| t.sample(&mut rng)).collect();
        let pareto = ParetoTail::fit(&x, -INF, INF, 0.1).unwrap();
        let ecdf = EcdfKd::fit(&x, -INF, INF).unwrap();
        // Survival of t(4): closed form through the regularized beta function.
        let sf = |v: f64| 0.5 * statrs::function::beta::beta_reg(2.0, 0.5, 4.0 / (4.0 + v * v));
        let q999 = crate::numeric::bisect_increasing(|v| 1.0 - sf(v), 0.999, 0.0, 50.0, 200);
        let est = 1.0 - pareto.cdf(q999);
        assert!(est / sf(q999) < 3.0 && sf(q999) / est < 3.0, "{est} vs {}", sf(q999));
        // Past the largest sample the ECDF survival is exactly zero while the
        // GPD tail still extrapolates.
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(1.0 - ecdf.cdf(max), 0.0);
        assert!(1.0 - pareto.cdf(max) > 0.0);
        let q9999 = crate::numeric::bisect_increasing(|v| 1.0 - sf(v), 0.9999, 0.0, 50.0, 200);
        let est = 1.0 - pareto.cdf(q9999);
        assert!(est / sf(q9999) < 5.0 && sf(q9999) / est < 5.0, "{est} vs {}", sf(q9999));
    }

    #[test]
    fn mixture_marginal_round_trip() {
        let x = normals(1000, 7);
        let m = MarginalModel::fit(MarginalKind::ParamMixture, &x, -INF, INF, 3, 0).unwrap();
        assert!((m.cdf(0.0) - 0.5).abs() < 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let v: f64 = rng.random_range(-2.5..2.5);
            let back = m.quantile(m.cdf(v)).unwrap();
            assert!((back - v).abs() < 1e-6, "{v} -> {back}");
        }
        for i in 0..100 {
            let v = -3.0 + 6.0 * i as f64 / 99.0;
            let d = (m.cdf(v + 1e-5) - m.cdf(v - 1e-5)) / 2e-5;
            assert!((d - m.pdf(v)).abs() < 1e-3);
        }
    }

    #[test]
    fn pit_is_uniform_on_training_data() {
        let x = normals(2000, 9);
        for kind in [MarginalKind::EcdfKd, MarginalKind::ParetoTail, MarginalKind::ParamMixture] {
            let m = MarginalModel::fit(kind, &x, -INF, INF, 3, 0).unwrap();
            let mut u: Vec<f64> = x.iter().map(|v| m.cdf(*v)).collect();
            u.sort_by(f64::total_cmp);
            let n = u.len() as f64;
            let ks = u
                .iter()
                .enumerate()
                .map(|(i, v)| ((i + 1) as f64 / n - v).abs().max((v - i as f64 / n).abs()))
                .fold(0.0, f64::max);
            assert!(ks < 1.63 / n.sqrt(), "{kind:?}: {ks}");
        }
    }

    #[test]
    fn quantile_rejects_levels_outside_unit_interval() {
        let x = normals(50, 10);
        let m = MarginalModel::fit(MarginalKind::EcdfKd, &x, -INF, INF, 1, 0).unwrap();
        assert!(matches!(m.quantile(0.0), Err(Error::InvalidQuantile(_))));
        assert!(matches!(m.quantile(1.5), Err(Error::InvalidQuantile(_))));
    }
}
