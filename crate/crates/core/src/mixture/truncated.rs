use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gmm::{
    add_ridge, bic, components_from_payload, e_step, fit_gmm_k, pick, select_min_bic, Component, ComponentPayload,
    Data, EM_MAX_ITER, EM_TOL,
};
use super::mvn_box::{mvn_box_probability, truncated_moments, TruncatedMoments};
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, norm_cdf, norm_ppf};
use crate::sample::{Bounds, SampleSet};

/// QMC points per component per EM iteration for the truncated moments.
const MOMENT_POINTS: usize = 4096;
/// Components with box mass above this are treated as untruncated.
const FULL_MASS: f64 = 1.0 - 1e-9;
const MAX_REJECTION_TRIES: usize = 10_000_000;
/// Below this box mass a component is sampled by Gibbs sweeps, not rejection.
const REJECTION_MIN_MASS: f64 = 1e-3;
const GIBBS_BURN_IN: usize = 200;
const GIBBS_SWEEPS: usize = 5;

/// Gibbs sampler for one Gaussian truncated to the box, using the full
/// conditionals x_j | x_-j ~ N(mu_j - sum_k P_jk (x_k - mu_k) / P_jj, 1 / P_jj).
#[derive(Debug, Clone)]
struct Gibbs {
    mean: Vec<f64>,
    precision: Vec<f64>,
    x: Vec<f64>,
}

impl Gibbs {
    fn new(c: &Component, bounds: &Bounds, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = c.mean().len();
        let cov = nalgebra::DMatrix::from_row_slice(d, d, c.cov());
        let inv = cov.try_inverse().ok_or_else(|| Error::DegenerateCovariance("singular component covariance".into()))?;
        let precision = (0..d * d).map(|k| inv[(k / d, k % d)]).collect();
        let x = c.mean().iter().zip(bounds.lower().iter().zip(bounds.upper())).map(|(m, (a, b))| m.clamp(*a, *b)).collect();
        let mut g = Self { mean: c.mean().to_vec(), precision, x };
        g.draw(bounds, GIBBS_BURN_IN, rng);
        Ok(g)
    }

    fn draw(&mut self, bounds: &Bounds, sweeps: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let d = self.mean.len();
        for _ in 0..sweeps {
            for j in 0..d {
                let row = &self.precision[j * d..(j + 1) * d];
                let shift: f64 = (0..d).filter(|&k| k != j).map(|k| row[k] * (self.x[k] - self.mean[k])).sum();
                let mu = self.mean[j] - shift / row[j];
                let sd = row[j].recip().sqrt();
                self.x[j] = truncated_normal(mu, sd, bounds.lower()[j], bounds.upper()[j], rng.random());
            }
        }
        self.x.clone()
    }
}

/// Inverse-CDF draw from N(mu, sd^2) restricted to [lo, hi], worked in the
/// lower tail so that far-out intervals keep their precision.
fn truncated_normal(mu: f64, sd: f64, lo: f64, hi: f64, u: f64) -> f64 {
    let (a, b) = ((lo - mu) / sd, (hi - mu) / sd);
    let (a, b, sign) = if a > 0.0 { (-b, -a, -1.0) } else { (a, b, 1.0) };
    let (pa, pb) = (norm_cdf(a), norm_cdf(b));
    let z = if pb > pa { norm_ppf(pa + u * (pb - pa)).clamp(a, b) } else { b };
    (mu + sign * z * sd).clamp(lo, hi)
}

#[derive(Serialize, Deserialize)]
struct TgmPayload {
    d: usize,
    components: Vec<ComponentPayload>,
    #[serde(with = "crate::io::num_vec")]
    masses: Vec<f64>,
    bounds: Bounds,
    #[serde(with = "crate::io::num")]
    loglik: f64,
    #[serde(with = "crate::io::num")]
    bic: f64,
}

/// Mixture of Gaussians each truncated to the same box.
#[derive(Debug, Clone)]
pub struct TgmModel {
    d: usize,
    props: Vec<f64>,
    comps: Vec<Component>,
    masses: Vec<f64>,
    bounds: Bounds,
    loglik: f64,
    bic: f64,
}

impl TgmModel {
    /// Builds a model from untruncated components, computing each box mass.
    pub fn new(props: Vec<f64>, comps: Vec<Component>, bounds: Bounds, seed: u64) -> Result<Self> {
        let d = bounds.dim();
        let masses = comps
            .iter()
            .map(|c| mvn_box_probability(c.mean(), c.cov(), bounds.lower(), bounds.upper(), seed).map(|r| r.p))
            .collect::<Result<Vec<f64>>>()?;
        if masses.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::DegenerateCovariance("a component has no mass inside the box".into()));
        }
        let s: f64 = props.iter().sum();
        let props = props.iter().map(|c| c / s).collect();
        Ok(Self { d, props, comps, masses, bounds, loglik: f64::NAN, bic: f64::NAN })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_components(&self) -> usize {
        self.props.len()
    }

    pub fn props(&self) -> &[f64] {
        &self.props
    }

    pub fn components(&self) -> &[Component] {
        &self.comps
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    pub fn bic(&self) -> f64 {
        self.bic
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        if !self.bounds.contains(x) {
            return f64::NEG_INFINITY;
        }
        let terms: Vec<f64> = (0..self.props.len())
            .map(|g| self.props[g].ln() + self.comps[g].log_pdf(x) - self.masses[g].ln())
            .collect();
        log_sum_exp(&terms)
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        self.log_pdf(x).exp()
    }

    /// Component by proportion, then rejection from the untruncated Gaussian.
    /// Components with little box mass use a coordinate-wise Gibbs chain
    /// instead (one chain per component, a few sweeps between draws).
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gibbs: Vec<Option<Gibbs>> = vec![None; self.comps.len()];
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let g = pick(&self.props, rng.random::<f64>());
            if self.masses[g] < REJECTION_MIN_MASS {
                let chain = match &mut gibbs[g] {
                    Some(c) => c,
                    slot => slot.insert(Gibbs::new(&self.comps[g], &self.bounds, &mut rng)?),
                };
                out.push(chain.draw(&self.bounds, GIBBS_SWEEPS, &mut rng));
                continue;
            }
            let mut tries = 0;
            loop {
                let x = self.comps[g].draw(&mut rng);
                if self.bounds.contains(&x) {
                    out.push(x);
                    break;
                }
                tries += 1;
                if tries > MAX_REJECTION_TRIES {
                    return Err(Error::DegenerateCovariance(format!("component {g} has negligible box mass")));
                }
            }
        }
        Ok(out)
    }

    pub fn to_payload(&self) -> Result<serde_json::Value> {
        let components = self
            .props
            .iter()
            .zip(&self.comps)
            .map(|(&weight, c)| ComponentPayload { weight, mean: c.mean().to_vec(), cov: c.cov().to_vec() })
            .collect();
        Ok(serde_json::to_value(TgmPayload {
            d: self.d,
            components,
            masses: self.masses.clone(),
            bounds: self.bounds.clone(),
            loglik: self.loglik,
            bic: self.bic,
        })?)
    }

    pub fn from_payload(v: &serde_json::Value) -> Result<Self> {
        let p: TgmPayload = serde_json::from_value(v.clone())?;
        let (props, comps) = components_from_payload(p.d, p.components)?;
        if p.masses.len() != props.len() || p.bounds.dim() != p.d {
            return Err(Error::Format("inconsistent truncated mixture payload".into()));
        }
        Ok(Self { d: p.d, props, comps, masses: p.masses, bounds: p.bounds, loglik: p.loglik, bic: p.bic })
    }
}

fn moments(c: &Component, bounds: &Bounds, seed: u64) -> Result<TruncatedMoments> {
    truncated_moments(c.mean(), c.cov(), bounds.lower(), bounds.upper(), MOMENT_POINTS, seed)
}

/// Truncated EM for one component count, started from the untruncated fit.
pub fn fit_truncated_gmm_k(samples: &SampleSet, bounds: &Bounds, k: usize, seed: u64) -> Result<TgmModel> {
    check_inside(samples, bounds)?;
    let init = fit_gmm_k(samples, k, seed)?;
    let data = Data::new(samples);
    let lambda = data.ridge()?;
    let d = data.d;
    let mut props = init.props().to_vec();
    let mut comps = init.components().to_vec();
    let mut mom: Vec<TruncatedMoments> = comps.iter().map(|c| moments(c, bounds, seed)).collect::<Result<_>>()?;
    // Without truncation the start is already an EM fixed point.
    let mut prev = Some(init.loglik());
    for _ in 0..EM_MAX_ITER {
        if mom.iter().any(|m| !(m.mass > 0.0)) {
            return Err(Error::DegenerateCovariance("a component lost all mass inside the box".into()));
        }
        let offsets: Vec<f64> = mom.iter().map(|m| -m.mass.ln()).collect();
        let kk = props.len();
        let (resp, ll) = e_step(&data, &props, &comps, &offsets);
        if let Some(p) = prev {
            if (ll - p).abs() < EM_TOL * p.abs() {
                break;
            }
        }
        prev = Some(ll);
        let mut new_props = Vec::with_capacity(kk);
        let mut new_comps = Vec::with_capacity(kk);
        for g in 0..kk {
            let (ng, xbar, mut s) = data.moments(|i| resp[i * kk + g]);
            if ng < 0.1 {
                continue;
            }
            add_ridge(&mut s, d, lambda);
            let plain = Component::new(xbar.clone(), s.clone())?;
            let comp = if mom[g].mass > FULL_MASS {
                plain
            } else {
                // Moment-matching step: shift the untruncated parameters so the
                // truncated mean/covariance move toward the weighted sample moments.
                let old = &comps[g];
                let mu: Vec<f64> = (0..d).map(|j| old.mean()[j] + xbar[j] - mom[g].mean[j]).collect();
                let cov: Vec<f64> = (0..d * d).map(|j| s[j] + old.cov()[j] - mom[g].cov[j]).collect();
                Component::new(mu, cov).unwrap_or(plain)
            };
            new_props.push(ng / data.n as f64);
            new_comps.push(comp);
        }
        if new_comps.is_empty() {
            return Err(Error::DegenerateCovariance("every component collapsed".into()));
        }
        let s: f64 = new_props.iter().sum();
        props = new_props.iter().map(|c| c / s).collect();
        comps = new_comps;
        mom = comps.iter().map(|c| moments(c, bounds, seed)).collect::<Result<_>>()?;
    }
    let mut model = TgmModel::new(props, comps, bounds.clone(), seed)?;
    let ll: f64 = (0..data.n).map(|i| data.w[i] * model.log_pdf(data.row(i))).sum();
    model.loglik = ll;
    model.bic = bic(ll, model.n_components(), d, data.n);
    Ok(model)
}

fn check_inside(samples: &SampleSet, bounds: &Bounds) -> Result<()> {
    if bounds.dim() != samples.dim() {
        return Err(Error::InvalidBounds("bounds dimension does not match the samples".into()));
    }
    for (i, r) in samples.rows().enumerate() {
        if !bounds.contains(r) {
            return Err(Error::OutOfSupport(format!("sample {i} lies outside the bounds")));
        }
    }
    Ok(())
}

/// BIC selection over k = 1..=g_max of truncated mixtures.
pub fn fit_truncated_gmm(samples: &SampleSet, bounds: &Bounds, g_max: usize, seed: u64) -> Result<TgmModel> {
    check_inside(samples, bounds)?;
    if g_max == 0 {
        return Err(Error::InvalidInput("g_max must be at least 1".into()));
    }
    let (n, d) = (samples.len(), samples.dim());
    let fits = (1..=g_max)
        .filter(|&k| k == 1 || n >= k * (d + 1))
        .map(|k| fit_truncated_gmm_k(samples, bounds, k, seed.wrapping_add(k as u64)))
        .collect();
    select_min_bic(fits, |m: &TgmModel| m.bic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::fit_gmm;
    use crate::numeric::{golden_section_min, norm_cdf, norm_logpdf};
    use rand_distr::{Distribution, StandardNormal};

    fn half_normal(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| vec![Distribution::<f64>::sample(&StandardNormal, &mut rng).abs()]).collect::<Vec<Vec<f64>>>()
    }

    #[test]
    fn half_normal_location_is_recovered() {
        let rows = half_normal(20_000, 4);
        let x: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let s = SampleSet::new(rows, None, None).unwrap();
        let b = Bounds::new(vec![0.0], vec![f64::INFINITY]).unwrap();
        let m = fit_truncated_gmm_k(&s, &b, 1, 1).unwrap();
        let mu = m.components()[0].mean()[0];
        // Oracle: direct truncated-normal MLE over (μ, log σ).
        let nll = |mu: f64, ls: f64| -> f64 {
            let sd = ls.exp();
            -x.iter().map(|v| norm_logpdf((v - mu) / sd) - ls).sum::<f64>()
                + x.len() as f64 * (1.0 - norm_cdf(-mu / sd)).ln()
        };
        let mut best_mu = 0.0;
        let mut ls = 0.0;
        for _ in 0..30 {
            best_mu = golden_section_min(|m| nll(m, ls), -3.0, 3.0, 1e-9).0;
            ls = golden_section_min(|l| nll(best_mu, l), -2.0, 2.0, 1e-9).0;
        }
        assert!(mu.abs() < 0.1, "mu = {mu}");
        assert!((mu - best_mu).abs() < 0.02, "mu = {mu}, oracle {best_mu}");
    }

    #[test]
    fn outside_box_is_zero() {
        let s = SampleSet::new(half_normal(300, 5), None, None).unwrap();
        let b = Bounds::new(vec![0.0], vec![f64::INFINITY]).unwrap();
        let m = fit_truncated_gmm(&s, &b, 2, 1).unwrap();
        assert_eq!(m.pdf(&[-0.1]), 0.0);
        assert!(m.pdf(&[0.5]) > 0.0);
        let s_out = SampleSet::new(vec![vec![-1.0]], None, None).unwrap();
        assert!(matches!(fit_truncated_gmm(&s_out, &b, 1, 0), Err(Error::OutOfSupport(_))));
    }

    #[test]
    fn infinite_bounds_reduce_to_plain_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<Vec<f64>> = (0..400)
            .map(|i| {
                let z: f64 = StandardNormal.sample(&mut rng);
                vec![z + if i % 2 == 0 { 0.0 } else { 6.0 }]
            })
            .collect();
        let s = SampleSet::new(rows, None, None).unwrap();
        let b = Bounds::unbounded(1);
        let t = fit_truncated_gmm_k(&s, &b, 2, 3).unwrap();
        let g = fit_gmm_k(&s, 2, 3).unwrap();
        for x in [-1.0, 0.0, 3.0, 6.5] {
            assert!((t.log_pdf(&[x]) - g.log_pdf(&[x])).abs() < 1e-6, "{x}");
        }
        let _ = fit_gmm(&s, 2, 3).unwrap();
    }

    #[test]
    fn wide_box_matches_untruncated() {
        let c = Component::new(vec![0.0, 0.0], vec![1.0, 0.2, 0.2, 1.0]).unwrap();
        let b = Bounds::new(vec![-10.0, -10.0], vec![10.0, 10.0]).unwrap();
        let t = TgmModel::new(vec![1.0], vec![c.clone()], b, 0).unwrap();
        for x in [[0.0, 0.0], [1.0, -2.0]] {
            assert!((t.pdf(&x) / c.log_pdf(&x).exp() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn box_integral_d2() {
        let a = Component::new(vec![0.2, 0.1], vec![0.3, 0.1, 0.1, 0.2]).unwrap();
        let c = Component::new(vec![0.9, 0.8], vec![0.1, -0.02, -0.02, 0.1]).unwrap();
        let b = Bounds::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let t = TgmModel::new(vec![0.4, 0.6], vec![a, c], b, 5).unwrap();
        let n = 400;
        let h = 1.0 / n as f64;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += t.pdf(&[(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]) * h * h;
            }
        }
        assert!((s - 1.0).abs() < 2e-3, "{s}");
        let draws = t.sample(200, 1).unwrap();
        assert!(draws.iter().all(|x| t.bounds().contains(x)));
    }

    #[test]
    fn low_mass_component_uses_gibbs() {
        let (mean, cov) = (vec![2.0, 2.0], vec![0.1, 0.08, 0.08, 0.1]);
        let b = Bounds::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let t = TgmModel::new(vec![1.0], vec![Component::new(mean.clone(), cov.clone()).unwrap()], b.clone(), 0).unwrap();
        assert!(t.masses()[0] < REJECTION_MIN_MASS, "{}", t.masses()[0]);
        let draws = t.sample(20_000, 3).unwrap();
        assert!(draws.iter().all(|x| b.contains(x)));
        let oracle = truncated_moments(&mean, &cov, b.lower(), b.upper(), 1 << 16, 1).unwrap();
        for j in 0..2 {
            let m = draws.iter().map(|x| x[j]).sum::<f64>() / draws.len() as f64;
            assert!((m - oracle.mean[j]).abs() < 0.01, "{j}: {m} vs {}", oracle.mean[j]);
        }
    }

    #[test]
    fn truncated_normal_far_tail() {
        // Mass of [0, 1] under N(10, 1) is ~1e-20; draws pile up at 1.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v: Vec<f64> = (0..2000).map(|_| truncated_normal(10.0, 1.0, 0.0, 1.0, rng.random())).collect();
        assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
        // Conditional on the interval, 1 - x is close to Exp(9).
        let m = v.iter().map(|x| 1.0 - x).sum::<f64>() / v.len() as f64;
        assert!((m - 1.0 / 9.0).abs() < 0.01, "{m}");
    }
}
