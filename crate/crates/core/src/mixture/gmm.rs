use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, mvn_logpdf, Cholesky};
use crate::sample::SampleSet;

pub const EM_TOL: f64 = 1e-8;
pub const EM_MAX_ITER: usize = 500;
pub const RESTARTS: usize = 5;
/// EM iterations given to every restart before the best one is run to convergence.
const SCREEN_ITER: usize = 25;

/// One Gaussian component with its cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct Component {
    mean: Vec<f64>,
    cov: Vec<f64>,
    chol: Cholesky,
}

impl Component {
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(Error::InvalidInput("covariance shape does not match mean".into()));
        }
        let chol = Cholesky::new(&cov, d)?;
        Ok(Self { mean, cov, chol })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &[f64] {
        &self.cov
    }

    pub fn chol(&self) -> &Cholesky {
        &self.chol
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        mvn_logpdf(x, &self.mean, &self.chol)
    }

    pub(crate) fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let z: Vec<f64> = (0..self.mean.len()).map(|_| rng.sample(StandardNormal)).collect();
        self.chol.mul_lower(&z).iter().zip(&self.mean).map(|(a, b)| a + b).collect()
    }
}

#[derive(Serialize, Deserialize)]
pub(crate) struct ComponentPayload {
    #[serde(with = "crate::io::num")]
    pub weight: f64,
    #[serde(with = "crate::io::num_vec")]
    pub mean: Vec<f64>,
    #[serde(with = "crate::io::num_vec")]
    pub cov: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GmPayload {
    d: usize,
    components: Vec<ComponentPayload>,
    #[serde(with = "crate::io::num")]
    loglik: f64,
    #[serde(with = "crate::io::num")]
    bic: f64,
}

/// Full-covariance Gaussian mixture `Σ c_g N(μ_g, Σ_g)`.
#[derive(Debug, Clone)]
pub struct GmModel {
    d: usize,
    props: Vec<f64>,
    comps: Vec<Component>,
    loglik: f64,
    bic: f64,
    trace: Vec<f64>,
}

impl GmModel {
    pub fn new(props: Vec<f64>, comps: Vec<Component>) -> Result<Self> {
        if props.is_empty() || props.len() != comps.len() {
            return Err(Error::InvalidInput("need one proportion per component".into()));
        }
        if props.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::InvalidInput("proportions must be positive".into()));
        }
        let s: f64 = props.iter().sum();
        let props = props.iter().map(|c| c / s).collect();
        let d = comps[0].mean.len();
        Ok(Self { d, props, comps, loglik: f64::NAN, bic: f64::NAN, trace: Vec::new() })
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

    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    pub fn bic(&self) -> f64 {
        self.bic
    }

    /// Log-likelihood after every E-step of the winning EM run.
    pub fn loglik_trace(&self) -> &[f64] {
        &self.trace
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> =
            self.props.iter().zip(&self.comps).map(|(c, comp)| c.ln() + comp.log_pdf(x)).collect();
        log_sum_exp(&terms)
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        self.log_pdf(x).exp()
    }

    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let g = pick(&self.props, rng.random::<f64>());
                self.comps[g].draw(&mut rng)
            })
            .collect()
    }

    pub fn to_payload(&self) -> Result<serde_json::Value> {
        let components = self
            .props
            .iter()
            .zip(&self.comps)
            .map(|(&weight, c)| ComponentPayload { weight, mean: c.mean.clone(), cov: c.cov.clone() })
            .collect();
        Ok(serde_json::to_value(GmPayload { d: self.d, components, loglik: self.loglik, bic: self.bic })?)
    }

    pub fn from_payload(v: &serde_json::Value) -> Result<Self> {
        let p: GmPayload = serde_json::from_value(v.clone())?;
        let (props, comps) = components_from_payload(p.d, p.components)?;
        let mut m = Self::new(props.clone(), comps)?;
        // Keep the stored proportions bit-exact.
        m.props = props;
        m.loglik = p.loglik;
        m.bic = p.bic;
        Ok(m)
    }
}

pub(crate) fn components_from_payload(d: usize, raw: Vec<ComponentPayload>) -> Result<(Vec<f64>, Vec<Component>)> {
    let mut props = Vec::new();
    let mut comps = Vec::new();
    for c in raw {
        if c.mean.len() != d {
            return Err(Error::Format("component mean has wrong length".into()));
        }
        props.push(c.weight);
        comps.push(Component::new(c.mean, c.cov).map_err(|e| Error::Format(e.to_string()))?);
    }
    Ok((props, comps))
}

pub(crate) fn pick(props: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (g, c) in props.iter().enumerate() {
        acc += c;
        if u < acc {
            return g;
        }
    }
    props.len() - 1
}

/// `-2 loglik + params ln N` for a full-covariance mixture.
pub fn bic(loglik: f64, k: usize, d: usize, n: usize) -> f64 {
    let params = (k - 1) + k * d + k * d * (d + 1) / 2;
    -2.0 * loglik + params as f64 * (n as f64).ln()
}

/// Sample positions with per-point multiplicities summing to N.
pub(crate) struct Data<'a> {
    pub x: &'a [f64],
    pub n: usize,
    pub d: usize,
    pub w: Vec<f64>,
}

impl<'a> Data<'a> {
    pub fn new(s: &'a SampleSet) -> Self {
        let n = s.len();
        let w = match s.weights() {
            Some(w) => w.iter().map(|v| v * n as f64).collect(),
            None => vec![1.0; n],
        };
        Self { x: s.positions(), n, d: s.dim(), w }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    /// Weighted mean and MLE scatter under per-point weights `r`.
    pub fn moments(&self, r: impl Fn(usize) -> f64) -> (f64, Vec<f64>, Vec<f64>) {
        let d = self.d;
        let mut tot = 0.0;
        let mut mean = vec![0.0; d];
        for i in 0..self.n {
            let wi = r(i) * self.w[i];
            tot += wi;
            for (m, v) in mean.iter_mut().zip(self.row(i)) {
                *m += wi * v;
            }
        }
        if tot > 0.0 {
            mean.iter_mut().for_each(|m| *m /= tot);
        }
        let mut cov = vec![0.0; d * d];
        for i in 0..self.n {
            let wi = r(i) * self.w[i];
            if wi == 0.0 {
                continue;
            }
            let row = self.row(i);
            for a in 0..d {
                let da = row[a] - mean[a];
                for b in a..d {
                    cov[a * d + b] += wi * da * (row[b] - mean[b]);
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                let v = if tot > 0.0 { cov[a * d + b] / tot } else { 0.0 };
                cov[a * d + b] = v;
                cov[b * d + a] = v;
            }
        }
        (tot, mean, cov)
    }

    /// Ridge `1e-6 tr(Σ̂)/D` added to every covariance estimate.
    pub fn ridge(&self) -> Result<f64> {
        let (_, _, cov) = self.moments(|_| 1.0);
        let tr: f64 = (0..self.d).map(|j| cov[j * self.d + j]).sum();
        if !(tr > 0.0) {
            return Err(Error::DegenerateSample("sample covariance is zero".into()));
        }
        Ok(1e-6 * tr / self.d as f64)
    }
}

pub(crate) fn add_ridge(cov: &mut [f64], d: usize, lambda: f64) {
    for j in 0..d {
        cov[j * d + j] += lambda;
    }
}

/// Responsibilities (row-major N×k) and the log-likelihood. `offsets[g]`
/// is added to every log component density.
pub(crate) fn e_step(data: &Data, props: &[f64], comps: &[Component], offsets: &[f64]) -> (Vec<f64>, f64) {
    let k = props.len();
    let mut resp = vec![0.0; data.n * k];
    let mut ll = 0.0;
    let logc: Vec<f64> = props.iter().zip(offsets).map(|(c, o)| c.ln() + o).collect();
    for i in 0..data.n {
        let x = data.row(i);
        let r = &mut resp[i * k..(i + 1) * k];
        for g in 0..k {
            r[g] = logc[g] + comps[g].log_pdf(x);
        }
        let lse = log_sum_exp(r);
        for v in r.iter_mut() {
            *v = (*v - lse).exp();
        }
        ll += data.w[i] * lse;
    }
    (resp, ll)
}

#[derive(Debug, Clone)]
struct State {
    props: Vec<f64>,
    comps: Vec<Component>,
}

/// `log|Σ| + tr(S Σ⁻¹)`, the per-component covariance part of the EM objective (lower is better).
fn cov_cost(scatter: &[f64], chol: &Cholesky) -> f64 {
    let d = chol.dim();
    // M = L⁻¹ S column by column, then tr(L⁻¹ M') = tr(L⁻¹ S L⁻ᵀ).
    let mut m = vec![0.0; d * d];
    let mut col = vec![0.0; d];
    for j in 0..d {
        (0..d).for_each(|i| col[i] = scatter[i * d + j]);
        chol.solve_lower_in_place(&mut col);
        (0..d).for_each(|i| m[i * d + j] = col[i]);
    }
    let mut tr = 0.0;
    for j in 0..d {
        col.copy_from_slice(&m[j * d..(j + 1) * d]);
        chol.solve_lower_in_place(&mut col);
        tr += col[j];
    }
    chol.log_det() + tr
}

/// The ridged covariance is not the exact maximizer, so it is only taken when
/// it does not lose to the previous covariance; that keeps every step a
/// generalized EM step and the log-likelihood non-decreasing.
fn m_step(data: &Data, resp: &[f64], prev: &State, lambda: f64) -> Result<State> {
    let k = prev.comps.len();
    let mut props = Vec::with_capacity(k);
    let mut comps = Vec::with_capacity(k);
    for g in 0..k {
        let (ng, mean, scatter) = data.moments(|i| resp[i * k + g]);
        // Collapsed component: drop it and carry on with one fewer.
        if ng < 0.1 {
            continue;
        }
        let mut cov = scatter.clone();
        add_ridge(&mut cov, data.d, lambda);
        let ridged = Component::new(mean.clone(), cov);
        let old = prev.comps[g].chol();
        let comp = match ridged {
            Ok(c) if cov_cost(&scatter, c.chol()) <= cov_cost(&scatter, old) => c,
            _ => Component { mean, cov: prev.comps[g].cov.clone(), chol: old.clone() },
        };
        props.push(ng / data.n as f64);
        comps.push(comp);
    }
    if comps.is_empty() {
        return Err(Error::DegenerateCovariance("every component collapsed".into()));
    }
    let s: f64 = props.iter().sum();
    props.iter_mut().for_each(|c| *c /= s);
    Ok(State { props, comps })
}

fn run_em(data: &Data, state: &mut State, max_iter: usize, lambda: f64, trace: &mut Vec<f64>) -> Result<f64> {
    let mut prev: Option<f64> = None;
    for _ in 0..max_iter {
        let k = state.props.len();
        let (resp, ll) = e_step(data, &state.props, &state.comps, &vec![0.0; k]);
        trace.push(ll);
        if let Some(p) = prev {
            if (ll - p).abs() < EM_TOL * p.abs() {
                return Ok(ll);
            }
        }
        *state = m_step(data, &resp, state, lambda)?;
        prev = Some(ll);
        if state.props.len() < k {
            // A dropped component starts a fresh k-1 run from the survivors.
            trace.clear();
            prev = None;
        }
    }
    let k = state.props.len();
    let (_, ll) = e_step(data, &state.props, &state.comps, &vec![0.0; k]);
    trace.push(ll);
    Ok(ll)
}

/// k-means++ centres followed by one hard assignment.
fn kmeanspp_init(data: &Data, k: usize, lambda: f64, rng: &mut ChaCha8Rng) -> Result<State> {
    let n = data.n;
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let total_w: f64 = data.w.iter().sum();
    let mut centres = vec![pick_weighted(&data.w, total_w, rng)];
    let mut dist: Vec<f64> = (0..n).map(|i| sq(data.row(i), data.row(centres[0]))).collect();
    while centres.len() < k {
        let scores: Vec<f64> = dist.iter().zip(&data.w).map(|(d, w)| d * w).collect();
        let tot: f64 = scores.iter().sum();
        let c = if tot > 0.0 { pick_weighted(&scores, tot, rng) } else { rng.random_range(0..n) };
        centres.push(c);
        for i in 0..n {
            dist[i] = dist[i].min(sq(data.row(i), data.row(c)));
        }
    }
    let assign: Vec<usize> = (0..n)
        .map(|i| {
            (0..k)
                .min_by(|&a, &b| {
                    sq(data.row(i), data.row(centres[a])).total_cmp(&sq(data.row(i), data.row(centres[b])))
                })
                .unwrap()
        })
        .collect();
    let (_, _, global) = data.moments(|_| 1.0);
    let mut props = Vec::new();
    let mut comps = Vec::new();
    for g in 0..k {
        let (ng, mean, mut cov) = data.moments(|i| if assign[i] == g { 1.0 } else { 0.0 });
        if ng < 0.5 {
            continue;
        }
        if ng < (data.d + 1) as f64 {
            cov = global.clone();
        }
        add_ridge(&mut cov, data.d, lambda);
        let comp = match Component::new(mean.clone(), cov) {
            Ok(c) => c,
            Err(_) => {
                let mut g = global.clone();
                add_ridge(&mut g, data.d, lambda);
                Component::new(mean, g)?
            }
        };
        props.push(ng);
        comps.push(comp);
    }
    let s: f64 = props.iter().sum();
    props.iter_mut().for_each(|c| *c /= s);
    Ok(State { props, comps })
}

fn pick_weighted(w: &[f64], total: f64, rng: &mut ChaCha8Rng) -> usize {
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, v) in w.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    w.len() - 1
}

/// EM for a fixed component count: best of [`RESTARTS`] k-means++ starts.
pub fn fit_gmm_k(samples: &SampleSet, k: usize, seed: u64) -> Result<GmModel> {
    let data = Data::new(samples);
    let needed = k * (data.d + 1);
    if k == 0 || data.n < needed {
        return Err(Error::InsufficientSamples { needed: needed.max(1), got: data.n });
    }
    let lambda = data.ridge()?;
    let mut trace = Vec::new();
    let (state, ll) = if k == 1 {
        let (_, mean, mut cov) = data.moments(|_| 1.0);
        add_ridge(&mut cov, data.d, lambda);
        let state = State { props: vec![1.0], comps: vec![Component::new(mean, cov)?] };
        let (_, ll) = e_step(&data, &state.props, &state.comps, &[0.0]);
        trace.push(ll);
        (state, ll)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best: Option<(State, f64, Vec<f64>)> = None;
        for _ in 0..RESTARTS {
            let Ok(mut st) = kmeanspp_init(&data, k, lambda, &mut rng) else { continue };
            let mut tr = Vec::new();
            let Ok(ll) = run_em(&data, &mut st, SCREEN_ITER, lambda, &mut tr) else { continue };
            if best.as_ref().is_none_or(|b| ll > b.1) {
                best = Some((st, ll, tr));
            }
        }
        let (mut st, _, mut tr) =
            best.ok_or_else(|| Error::DegenerateCovariance(format!("no EM restart succeeded for k = {k}")))?;
        tr.pop();
        let ll = run_em(&data, &mut st, EM_MAX_ITER.saturating_sub(SCREEN_ITER), lambda, &mut tr)?;
        trace = tr;
        (st, ll)
    };
    let g = state.props.len();
    Ok(GmModel {
        d: data.d,
        props: state.props,
        comps: state.comps,
        loglik: ll,
        bic: bic(ll, g, data.d, data.n),
        trace,
    })
}

/// Fits k = 1..=g_max and keeps the minimum-BIC model (ties go to fewer components).
pub fn fit_gmm(samples: &SampleSet, g_max: usize, seed: u64) -> Result<GmModel> {
    if g_max == 0 {
        return Err(Error::InvalidInput("g_max must be at least 1".into()));
    }
    let d = samples.dim();
    let n = samples.len();
    let ks: Vec<usize> = (1..=g_max).filter(|k| k == &1 || n >= k * (d + 1)).collect();
    let fits: Vec<Result<GmModel>> = ks.par_iter().map(|&k| fit_gmm_k(samples, k, seed.wrapping_add(k as u64))).collect();
    select_min_bic(fits, |m| m.bic)
}

pub(crate) fn select_min_bic<M, F: Fn(&M) -> f64>(fits: Vec<Result<M>>, bic_of: F) -> Result<M> {
    let mut best: Option<M> = None;
    let mut first_err = None;
    for f in fits {
        match f {
            Ok(m) => {
                if best.as_ref().is_none_or(|b| bic_of(&m) < bic_of(b)) {
                    best = Some(m);
                }
            }
            Err(e) => {
                if best.is_none() && first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    best.ok_or_else(|| first_err.unwrap_or(Error::InvalidInput("no candidate fitted".into())))
}
