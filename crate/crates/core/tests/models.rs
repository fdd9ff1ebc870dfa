use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqpost::models::lv::*;
use seqpost::models::ode::{rk4, Tolerance};
use seqpost::models::signaling::*;
use seqpost::models::gm_target;
use seqpost::DensityModel;

fn default_params() -> LvParams {
    LvConfig::default().params
}

fn grid(n: usize, step: f64) -> Vec<f64> {
    (0..n).map(|i| i as f64 * step).collect()
}

fn mvn_pdf_oracle(x: &[f64], mean: &[f64], cov: &[f64]) -> f64 {
    let d = x.len();
    let s = DMatrix::from_row_slice(d, d, cov);
    let r = DVector::from_iterator(d, x.iter().zip(mean).map(|(a, b)| a - b));
    let q = (r.transpose() * s.clone().try_inverse().unwrap() * &r)[(0, 0)];
    (-0.5 * q).exp() / ((2.0 * std::f64::consts::PI).powi(d as i32) * s.determinant()).sqrt()
}

#[test]
fn gm_target_unseparated_means_are_zero() {
    let t = gm_target(3, false, 1).unwrap();
    for c in t.mixture().components() {
        assert!(c.mean().iter().all(|&m| m == 0.0));
    }
    assert_eq!(t.mixture().props(), &[2.0 / 3.0, 1.0 / 3.0]);
}

#[test]
fn gm_target_pdf_matches_mvn_oracle() {
    let t = gm_target(3, true, 7).unwrap();
    let c = t.mixture().components();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..12.0)).collect();
        let want = 2.0 / 3.0 * mvn_pdf_oracle(&x, c[0].mean(), c[0].cov())
            + 1.0 / 3.0 * mvn_pdf_oracle(&x, c[1].mean(), c[1].cov());
        let got = t.pdf(&x);
        assert!((got - want).abs() <= 1e-10 * want.max(1e-300), "{got} vs {want}");
    }
}

#[test]
fn gm_target_covariance_is_spd_with_shift() {
    let t = gm_target(4, false, 11).unwrap();
    for c in t.mixture().components() {
        let s = DMatrix::from_row_slice(4, 4, c.cov());
        let ev = s.symmetric_eigen().eigenvalues;
        assert!(ev.iter().all(|&e| e >= 4.0 - 1e-9));
    }
}

#[test]
fn gm_target_separated_mean() {
    let t = gm_target(2, true, 5).unwrap();
    let n = 100_000;
    let xs = t.sample(n, 9).unwrap();
    for j in 0..2 {
        let m = xs.iter().map(|x| x[j]).sum::<f64>() / n as f64;
        // total variance is bounded by the larger component variance plus the
        // between-component spread of 200/9
        let var = xs.iter().map(|x| (x[j] - m).powi(2)).sum::<f64>() / n as f64;
        let se = (var / n as f64).sqrt();
        assert!((m - 10.0 / 3.0).abs() < 4.0 * se, "mean {m}, se {se}");
    }
}

#[test]
fn lv_equilibrium_is_constant() {
    let p = default_params();
    let (x0, y0) = p.equilibrium();
    let tr = lv_simulate(&p, x0, y0, &grid(51, 1.0), Tolerance::default()).unwrap();
    for (x, y) in tr.x.iter().zip(&tr.y) {
        assert!((x - x0).abs() < 1e-6 && (y - y0).abs() < 1e-6);
    }
}

#[test]
fn natality_at_zero_lynx() {
    let p = default_params();
    assert_eq!(p.natality(0.0), 2.0 * p.alpha.exp());
}

#[test]
fn lv_matches_fine_rk4() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..3 {
        let p = LvParams {
            alpha: rng.random_range(0.3..0.8),
            beta_kill: rng.random_range(0.4..1.2),
            beta_stress: rng.random_range(0.1..0.5),
            delta: rng.random_range(1.0..2.0),
            gamma: rng.random_range(0.5..1.0),
        };
        let (x0, y0) = (rng.random_range(0.2..1.0), rng.random_range(0.2..1.0));
        let t = grid(11, 1.0);
        let tr = lv_simulate(&p, x0, y0, &t, Tolerance::default()).unwrap();
        let f = |_: f64, s: &[f64], ds: &mut [f64]| {
            ds[0] = p.alpha * s[0] - (p.beta_kill + p.beta_stress) * s[0] * s[1];
            ds[1] = p.delta * s[0] * s[1] - p.gamma * s[1];
        };
        let mut s = vec![x0, y0];
        for i in 1..t.len() {
            s = rk4(f, &s, t[i - 1], t[i], 1e-4);
            assert!((tr.x[i] - s[0]).abs() <= 1e-5 * s[0].abs());
            assert!((tr.y[i] - s[1]).abs() <= 1e-5 * s[1].abs());
        }
    }
}

#[test]
fn classical_invariant_is_conserved() {
    let p = LvParams { beta_stress: 0.0, ..default_params() };
    let tr = lv_simulate(&p, 0.8, 0.3, &grid(201, 0.25), Tolerance::default()).unwrap();
    let v = |x: f64, y: f64| p.delta * x - p.gamma * x.ln() + p.beta_kill * y - p.alpha * y.ln();
    let v0 = v(0.8, 0.3);
    for (x, y) in tr.x.iter().zip(&tr.y) {
        assert!((v(*x, *y) - v0).abs() <= 1e-5 * v0.abs());
    }
}

#[test]
fn non_positive_inputs_rejected() {
    let mut p = default_params();
    p.delta = -1.0;
    assert!(lv_simulate(&p, 1.0, 1.0, &[0.0, 1.0], Tolerance::default()).is_err());
}

#[test]
fn zero_residual_loglik() {
    let cfg = LvConfig::default();
    let syn = make_lv_synthetic(&cfg, 0.0, 1).unwrap();
    let c_d = -(SIGMA_DENSITY * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let c_n = -(SIGMA_NATALITY * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let [lx, ly] = cfg.lynx_init;
    let [hx, hy] = cfg.hare_init;
    let ll = lv_loglik(&cfg.params, lx, ly, &syn.lynx);
    assert!((ll - 20.0 * c_d).abs() < 1e-9);
    let ll = lv_loglik(&cfg.params, hx, hy, &syn.hare);
    assert!((ll - 20.0 * (c_d + c_n)).abs() < 1e-9);

    let mut shifted = syn.lynx.clone();
    shifted.density[4] += 0.15;
    let ll = lv_loglik(&cfg.params, lx, ly, &shifted);
    assert!((ll - (20.0 * c_d - 0.5)).abs() < 1e-9);
}

#[test]
fn loglik_matches_independent_sum() {
    let cfg = LvConfig::default();
    let syn = make_lv_synthetic(&cfg, 1.0, 4).unwrap();
    let normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
    use statrs::distribution::Continuous;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let mut v = cfg.params.to_vec();
        for x in &mut v {
            *x *= rng.random_range(0.8..1.2);
        }
        let p = LvParams::from_slice(&v);
        let tr = lv_simulate(&p, 0.3, 0.6, &syn.hare.t, Tolerance::default()).unwrap();
        let mut want = 0.0;
        for i in 0..tr.x.len() {
            want += (normal.pdf((syn.hare.density[i] - tr.x[i]) / 0.15) / 0.15).ln();
            want += (normal.pdf((syn.hare.natality[i] - tr.natality[i]) / 2.0) / 2.0).ln();
        }
        let got = lv_loglik(&p, 0.3, 0.6, &syn.hare);
        assert!((got - want).abs() < 1e-10 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn synthetic_noise_and_determinism() {
    let cfg = LvConfig::default();
    let clean = make_lv_synthetic(&cfg, 0.0, 1).unwrap();
    let a = make_lv_synthetic(&cfg, 1.0, 2).unwrap();
    let b = make_lv_synthetic(&cfg, 1.0, 2).unwrap();
    let c = make_lv_synthetic(&cfg, 1.0, 3).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.lynx.density, c.lynx.density);

    let mut resid = Vec::new();
    for seed in 0..500 {
        let s = make_lv_synthetic(&cfg, 1.0, seed).unwrap();
        resid.extend(s.lynx.density.iter().zip(&clean.lynx.density).map(|(o, m)| o - m));
    }
    assert_eq!(resid.len(), 10_000);
    let sd = (resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64).sqrt();
    assert!((sd / SIGMA_DENSITY - 1.0).abs() < 0.05, "sd {sd}");
}

#[test]
fn lv_problem_layout() {
    let syn = make_lv_synthetic(&LvConfig::default(), 1.0, 1).unwrap();
    let log = LvProblem::new(syn.clone(), Scale::Log);
    assert_eq!(log.dim(Stage::Joint), 9);
    assert_eq!(log.names(Stage::Hare)[5], "hare_x0");
    let t = log.truth(Stage::Joint);
    let joint = log.loglik(Stage::Joint, &t);
    let split = log.loglik(Stage::Lynx, &log.truth(Stage::Lynx)) + log.loglik(Stage::Hare, &log.truth(Stage::Hare));
    assert!((joint - split).abs() < 1e-9);

    let nat = LvProblem::new(syn, Scale::Natural);
    let b = nat.bounds(Stage::Lynx);
    let mut rng = LvProblem::prior_rng(2);
    for _ in 0..20 {
        let x = nat.prior_draw(Stage::Lynx, &mut rng);
        assert!(b.contains(&x));
        assert!(nat.log_prior(Stage::Lynx, &x).is_finite());
    }
    let outside = b.upper().iter().map(|u| u * 1.1).collect::<Vec<_>>();
    assert_eq!(nat.log_prior(Stage::Lynx, &outside), f64::NEG_INFINITY);
}

#[test]
fn activation_midpoint_and_flat_response() {
    assert_eq!(activation(0.5), 0.5);
    for w in [0.0, 0.3, 1.0, 10.0] {
        assert_eq!(drug_response(w, 1.0, 2.0, 0.5), 1.0);
    }
}

#[test]
fn activation_and_response_monotone() {
    let xs: Vec<f64> = (0..400).map(|i| -1.0 + i as f64 * 0.005).collect();
    for w in xs.windows(2) {
        assert!(activation(w[1]) > activation(w[0]));
        assert!(drug_response(w[1], 0.2, 2.0, 0.5) < drug_response(w[0], 0.2, 2.0, 0.5));
    }
}

#[test]
fn predict_matches_reimplementation() {
    let f = |x: f64| 1.0 / (1.0 + (-9.19024 * (x - 0.5)).exp());
    let bx = prior_box();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let v: Vec<f64> = bx.lower().iter().zip(bx.upper()).map(|(l, u)| rng.random_range(*l..*u)).collect();
        let p = SignalingParams::from_slice(&v).unwrap();
        let (m, n, w) = (rng.random_range(0..2) as f64, rng.random_range(0..2) as f64, rng.random_range(0.0..2.0));
        let g = v[7] + (1.0 - v[7]) / (10f64.powf(v[8] * (w - v[9])) + 1.0);
        let x = f(v[0] + v[3] * m + v[4] * n) * g;
        let y = f(v[1] + v[5] * x);
        let z = f(v[2] + v[6] * y);
        let (py, pz) = signaling_predict(&p, m, n, w);
        assert!((py - y).abs() < 1e-12 && (pz - z).abs() < 1e-12);
    }
}

#[test]
fn student_t_at_mode_and_symmetry() {
    use statrs::function::gamma::gamma;
    let want = (gamma(2.0) / (gamma(1.5) * (3.0 * std::f64::consts::PI).sqrt() * 0.2)).ln();
    assert!((student_t_logpdf(1.3, 1.3, 0.2, 3.0) - want).abs() < 1e-13);
    for r in [0.05, 0.4, 3.0] {
        assert_eq!(student_t_logpdf(r, 0.0, 0.2, 3.0), student_t_logpdf(-r, 0.0, 0.2, 3.0));
    }
}

#[test]
fn signaling_loglik_matches_statrs() {
    use statrs::distribution::{Continuous, StudentsT};
    let t = StudentsT::new(0.0, 0.2, 3.0).unwrap();
    let syn = make_signaling_synthetic(&SignalingConfig::default(), 3).unwrap();
    assert_eq!(syn.untreated.len(), 16);
    assert_eq!(syn.treated.len(), 80);
    let p = SignalingConfig::default().pre;
    let rows: Vec<_> = syn.untreated.iter().chain(&syn.treated).copied().collect();
    let want: f64 = rows
        .iter()
        .map(|r| {
            let (y, z) = signaling_predict(&p, r.m, r.n, r.w);
            t.ln_pdf(r.p - y) + t.ln_pdf(r.q - z)
        })
        .sum();
    assert!((signaling_loglik(&p, &rows) - want).abs() < 1e-12 * want.abs().max(1.0));
    assert_eq!(make_signaling_synthetic(&SignalingConfig::default(), 3).unwrap(), syn);
}

proptest! {
    #[test]
    fn t_density_symmetric(mu in -2.0..2.0f64, r in 0.0..5.0f64) {
        let a = student_t_logpdf(mu + r, mu, 0.2, 3.0);
        let b = student_t_logpdf(mu - r, mu, 0.2, 3.0);
        prop_assert!((a - b).abs() < 1e-12);
    }
}
