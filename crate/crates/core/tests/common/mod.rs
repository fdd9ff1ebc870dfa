//! Randomized property checks shared by the proptest suites and the
//! acceptance harness. Each check draws its own inputs from the seed.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use seqpost::eval::ks_statistic;
use seqpost::marginals::{MarginalKind, MarginalModel};
use seqpost::mixture::fit_gmm_k;
use seqpost::model::{fit_model, from_envelope, method_names, to_envelope};
use seqpost::transform::TransformKind;
use seqpost::vine::{Bicop, Family};
use seqpost::{Bounds, FitConfig, SampleSet, Transform, TransformMode};

pub type Check = Result<(), String>;

pub const PROPERTIES: [(&str, fn(u64) -> Check); 8] = [
    ("transform round trip", transform_round_trip),
    ("EM log-likelihood monotone", em_monotone),
    ("copula margins uniform", copula_uniform_margins),
    ("h-function inverses", h_inverses),
    ("marginal CDF monotone", cdf_monotone),
    ("weighted KS axioms", ks_axioms),
    ("serialization round trip", serialization_round_trip),
    ("bounded model round trip", bounded_serialization_round_trip),
];

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn transform_round_trip(seed: u64) -> Check {
    let mut r = rng(seed);
    let a = r.random_range(-50.0..50.0);
    let width = 10f64.powf(r.random_range(-3.0..3.0));
    let (lo, hi) = match r.random_range(0..4) {
        0 => (f64::NEG_INFINITY, f64::INFINITY),
        1 => (a, f64::INFINITY),
        2 => (f64::NEG_INFINITY, a + width),
        _ => (a, a + width),
    };
    let kind = TransformKind::for_interval(lo, hi);
    let u: f64 = r.random_range(1e-6..1.0 - 1e-6);
    let x = match (lo.is_finite(), hi.is_finite()) {
        (true, true) => lo + width * u,
        (true, false) => lo + width * u / (1.0 - u),
        (false, true) => hi - width * u / (1.0 - u),
        (false, false) => a + width * normal(&mut r),
    };
    let y = kind.forward(x).map_err(|e| format!("{kind:?} forward({x}): {e}"))?;
    let back = kind.inverse(y);
    let scale = 1.0 + x.abs() + width;
    ensure((back - x).abs() <= 1e-9 * scale, || format!("{kind:?}: x={x} -> {y} -> {back}"))?;
    let jac = kind.log_jacobian(x).map_err(|e| e.to_string())?;
    ensure(jac.is_finite(), || format!("{kind:?}: log jacobian {jac} at {x}"))?;

    let y: f64 = r.random_range(-8.0..8.0);
    let x = kind.inverse(y);
    if lo.is_finite() || hi.is_finite() {
        ensure(x > lo && x < hi, || format!("{kind:?}: inverse({y}) = {x} outside ({lo}, {hi})"))?;
    }
    let again = kind.forward(x).map_err(|e| format!("{kind:?} forward({x}): {e}"))?;
    ensure((again - y).abs() <= 1e-6 * (1.0 + y.abs()), || format!("{kind:?}: y={y} -> {x} -> {again}"))?;

    let t = Transform::from_bounds(&Bounds::new(vec![lo, f64::NEG_INFINITY], vec![hi, f64::INFINITY]).unwrap());
    let p = [kind.inverse(0.3), -1.5];
    let q = t.inverse(&t.forward(&p).map_err(|e| e.to_string())?);
    ensure((q[0] - p[0]).abs() <= 1e-9 * scale && q[1] == p[1], || format!("{p:?} -> {q:?}"))
}

fn clustered(r: &mut ChaCha8Rng, n: usize, d: usize) -> SampleSet {
    let shift: Vec<f64> = (0..d).map(|_| r.random_range(-4.0..4.0)).collect();
    let rows = (0..n)
        .map(|i| {
            let off = if i % 3 == 0 { 1.0 } else { 0.0 };
            (0..d).map(|j| off * shift[j] + normal(r) * (0.5 + j as f64 * 0.3)).collect()
        })
        .collect();
    SampleSet::new(rows, None, None).unwrap()
}

pub fn em_monotone(seed: u64) -> Check {
    let mut r = rng(seed);
    let d = r.random_range(1..=3);
    let k = r.random_range(1..=3);
    let n = r.random_range(60 * k..=200);
    let s = clustered(&mut r, n, d);
    let m = fit_gmm_k(&s, k, seed).map_err(|e| e.to_string())?;
    let trace = m.loglik_trace();
    for w in trace.windows(2) {
        ensure(w[1] >= w[0] - 1e-10 * w[0].abs(), || format!("d={d} k={k} n={n}: {} then {}", w[0], w[1]))?;
    }
    Ok(())
}

fn random_copula(r: &mut ChaCha8Rng) -> Bicop {
    let rot = [0u16, 90, 180, 270][r.random_range(0..4)];
    let (family, rotation, theta) = match r.random_range(0..4) {
        0 => (Family::Gaussian, 0, r.random_range(-0.95..0.95)),
        1 => (Family::Clayton, rot, r.random_range(0.1..10.0)),
        2 => (Family::Gumbel, rot, r.random_range(1.0..8.0)),
        _ => (Family::Frank, 0, r.random_range(-20.0..20.0)),
    };
    Bicop::new(family, rotation, theta).unwrap()
}

/// C(u, 1) = u: the h-function integrated over the conditioning argument
/// gives back the first argument, and likewise for the second margin.
pub fn copula_uniform_margins(seed: u64) -> Check {
    let mut r = rng(seed);
    let c = random_copula(&mut r);
    let u: f64 = r.random_range(0.05..0.95);
    let m = 20_000;
    let h = 1.0 / m as f64;
    let (mut i1, mut i2) = (0.0, 0.0);
    for i in 0..m {
        let t = (i as f64 + 0.5) * h;
        i1 += c.hfunc(u, t) * h;
        i2 += c.hfunc2(t, u) * h;
    }
    ensure((i1 - u).abs() < 1e-3 && (i2 - u).abs() < 1e-3, || format!("{c:?} at {u}: {i1} {i2}"))
}

pub fn h_inverses(seed: u64) -> Check {
    let mut r = rng(seed);
    let c = random_copula(&mut r);
    let w: f64 = r.random_range(0.001..0.999);
    let v: f64 = r.random_range(0.01..0.99);
    let u = c.hinv(w, v);
    ensure((c.hfunc(u, v) - w).abs() < 1e-8, || format!("{c:?}: hinv({w}, {v}) = {u}, h = {}", c.hfunc(u, v)))?;
    let u2 = c.hinv2(w, v);
    ensure((c.hfunc2(v, u2) - w).abs() < 1e-8, || format!("{c:?}: hinv2({w}, {v}) = {u2}"))?;

    let u: f64 = r.random_range(0.01..0.99);
    let h = c.hfunc(u, v);
    if h > 1e-6 && h < 1.0 - 1e-6 {
        let back = c.hinv(h, v);
        ensure((back - u).abs() < 1e-6, || format!("{c:?}: u={u} v={v} h={h} back={back}"))?;
    }
    Ok(())
}

pub fn cdf_monotone(seed: u64) -> Check {
    let mut r = rng(seed);
    let n = r.random_range(300..600);
    let positive = r.random_bool(0.5);
    let x: Vec<f64> = (0..n)
        .map(|_| {
            let z = normal(&mut r);
            if positive {
                (0.7 * z).exp()
            } else {
                z * 2.0 + 1.0
            }
        })
        .collect();
    let (lo, hi) = if positive { (0.0, f64::INFINITY) } else { (f64::NEG_INFINITY, f64::INFINITY) };
    let kind = [MarginalKind::EcdfKd, MarginalKind::ParetoTail, MarginalKind::ParamMixture][r.random_range(0..3)];
    let m = MarginalModel::fit(kind, &x, lo, hi, 4, seed).map_err(|e| format!("{kind:?}: {e}"))?;
    let (mn, mx) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = mx - mn;
    let mut grid: Vec<f64> = (0..300).map(|_| r.random_range(mn - span..mx + span)).collect();
    grid.extend_from_slice(&x[..20]);
    grid.retain(|v| *v > lo);
    grid.sort_by(f64::total_cmp);
    let mut prev = 0.0;
    for &g in &grid {
        let f = m.cdf(g);
        ensure((0.0..=1.0).contains(&f), || format!("{kind:?}: F({g}) = {f}"))?;
        ensure(f >= prev - 1e-12, || format!("{kind:?}: F decreases to {f} at {g} from {prev}"))?;
        prev = f;
    }
    Ok(())
}

fn weighted(r: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = r.random_range(1..60);
    let loc = r.random_range(-1.0..1.0);
    let x: Vec<f64> = (0..n).map(|_| (loc + normal(r) * 2.0).round() / 2.0).collect();
    let w: Vec<f64> = (0..n).map(|_| r.random_range(0.01..3.0)).collect();
    (x, w)
}

pub fn ks_axioms(seed: u64) -> Check {
    let mut r = rng(seed);
    let (a, wa) = weighted(&mut r);
    let (b, wb) = weighted(&mut r);
    let (c, wc) = weighted(&mut r);
    let ab = ks_statistic(&a, Some(&wa), &b, Some(&wb));
    let ba = ks_statistic(&b, Some(&wb), &a, Some(&wa));
    let ac = ks_statistic(&a, Some(&wa), &c, Some(&wc));
    let cb = ks_statistic(&c, Some(&wc), &b, Some(&wb));
    ensure((0.0..=1.0).contains(&ab), || format!("out of range {ab}"))?;
    ensure(ab == ba, || format!("asymmetric {ab} {ba}"))?;
    ensure(ab <= ac + cb + 1e-12, || format!("triangle {ab} > {ac} + {cb}"))?;
    ensure(ks_statistic(&a, Some(&wa), &a, Some(&wa)) == 0.0, || "nonzero self distance".into())?;
    let scale = r.random_range(0.1..10.0);
    let wa2: Vec<f64> = wa.iter().map(|w| w * scale).collect();
    let scaled = ks_statistic(&a, Some(&wa2), &b, Some(&wb));
    ensure((scaled - ab).abs() < 1e-12, || format!("weight scale changed {ab} to {scaled}"))?;
    let ones = vec![1.0; a.len()];
    let plain = ks_statistic(&a, None, &b, None);
    let unit = ks_statistic(&a, Some(&ones), &b, Some(&vec![1.0; b.len()]));
    ensure((plain - unit).abs() < 1e-12, || format!("unit weights {unit} vs none {plain}"))
}

fn posterior_like(r: &mut ChaCha8Rng, n: usize, d: usize) -> SampleSet {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|j| normal(r) * (1.0 + 0.5 * j as f64)).collect()).collect();
    let lp = rows
        .iter()
        .map(|x| -0.5 * x.iter().enumerate().map(|(j, v)| (v / (1.0 + 0.5 * j as f64)).powi(2)).sum::<f64>())
        .collect();
    SampleSet::new(rows, Some(lp), None).unwrap()
}

fn round_trip(model: &dyn seqpost::DensityModel, r: &mut ChaCha8Rng, spread: f64) -> Check {
    let text = serde_json::to_string(&to_envelope(model).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let back = from_envelope(&v).map_err(|e| e.to_string())?;
    ensure(back.method() == model.method() && back.dim() == model.dim(), || "method or dim changed".into())?;
    for _ in 0..20 {
        let x: Vec<f64> = (0..model.dim()).map(|_| r.random_range(-spread..spread)).collect();
        let (p, q) = (model.pdf(&x), back.pdf(&x));
        ensure((p - q).abs() <= 1e-12 * p.abs(), || format!("{}: pdf {p} became {q} at {x:?}", model.method()))?;
    }
    Ok(())
}

pub fn serialization_round_trip(seed: u64) -> Check {
    let mut r = rng(seed);
    let names = method_names();
    let method = names[(seed as usize) % names.len()];
    // Vines need at least two dimensions.
    let d = r.random_range(if method.starts_with("vine") { 2 } else { 1 }..=3);
    let n = match method {
        m if m.starts_with("gp") => r.random_range(25..60),
        "vine-pareto" => r.random_range(300..400),
        _ => r.random_range(100..300),
    };
    let s = posterior_like(&mut r, n, d);
    let cfg = FitConfig { g_max: 3, ..FitConfig::with_seed(seed) };
    let cfg = if method == "tgmm" { cfg.with_bounds(Some(Bounds::new(vec![-20.0; d], vec![20.0; d]).unwrap())) } else { cfg };
    let model = fit_model(method, &s, &cfg, TransformMode::None).map_err(|e| format!("{method}: {e}"))?;
    round_trip(model.as_ref(), &mut r, 3.0)
}

/// Transform-wrapped fits on a half-bounded box.
pub fn bounded_serialization_round_trip(seed: u64) -> Check {
    let mut r = rng(seed);
    let names = ["kde", "gmm", "vine-ecdf", "vine-mixture"];
    let method = names[(seed as usize) % names.len()];
    let n = r.random_range(150..300);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![(0.5 * normal(&mut r)).exp(), normal(&mut r)]).collect();
    let s = SampleSet::new(rows, None, None).unwrap();
    let bounds = Bounds::new(vec![0.0, f64::NEG_INFINITY], vec![f64::INFINITY; 2]).unwrap();
    let cfg = FitConfig { g_max: 3, ..FitConfig::with_seed(seed) }.with_bounds(Some(bounds));
    let model = fit_model(method, &s, &cfg, TransformMode::Auto).map_err(|e| format!("{method}: {e}"))?;
    let text = serde_json::to_string(&to_envelope(model.as_ref()).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let back = from_envelope(&serde_json::from_str(&text).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    for _ in 0..20 {
        let x = [r.random_range(-0.5..4.0), r.random_range(-3.0..3.0)];
        let (p, q) = (model.pdf(&x), back.pdf(&x));
        ensure((p - q).abs() <= 1e-12 * p.abs(), || format!("{method}: pdf {p} became {q} at {x:?}"))?;
        if x[0] <= 0.0 {
            ensure(p == 0.0, || format!("{method}: mass {p} outside the box at {x:?}"))?;
        }
    }
    Ok(())
}

/// Runs `trials` seeds of a check and collects the first few failures.
pub fn run_trials(check: fn(u64) -> Check, trials: u64, base: u64) -> (u64, Vec<String>) {
    let mut failed = 0;
    let mut msgs = Vec::new();
    for i in 0..trials {
        if let Err(e) = check(base.wrapping_add(i)) {
            failed += 1;
            if msgs.len() < 3 {
                msgs.push(e);
            }
        }
    }
    (failed, msgs)
}
