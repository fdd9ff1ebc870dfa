use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use seqpost::eval::*;
use seqpost::gp::{fit_gp, Kernel};
use seqpost::mixture::{fit_gmm, Component, GmModel};
use seqpost::models::{gm_target, GmTarget};
use seqpost::numeric::norm_logpdf;
use seqpost::{Bounds, DensityModel, Error, SampleSet};

fn normal_draws(n: usize, d: usize, seed: u64) -> SampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let lp = rows.iter().map(|x: &Vec<f64>| x.iter().map(|v| norm_logpdf(*v)).sum()).collect();
    SampleSet::new(rows, Some(lp), None).unwrap()
}

fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let below = x.iter().filter(|w| *w < v).count() as f64;
            let equal = x.iter().filter(|w| *w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn brute_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn spearman_examples() {
    let a = [1.0, 4.0, 2.0, 8.0, 5.0];
    assert_eq!(spearman(&a, &a).unwrap(), 1.0);
    let r: Vec<f64> = a.iter().map(|v| -v).collect();
    assert!((spearman(&a, &r).unwrap() + 1.0).abs() < 1e-15);
    assert!(matches!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::DegenerateInput(_))));
    assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).is_err());
}

#[test]
fn spearman_matches_brute_force_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a: Vec<f64> = (0..50).map(|_| rng.random_range(0..10) as f64).collect();
    let b: Vec<f64> = (0..50).map(|_| rng.random_range(0..7) as f64).collect();
    let want = brute_pearson(&brute_ranks(&a), &brute_ranks(&b));
    assert!((spearman(&a, &b).unwrap() - want).abs() < 1e-12);
}

#[test]
fn rmse_examples() {
    assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert_eq!(rmse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
    assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a: Vec<f64> = (0..100).map(|_| rng.random()).collect();
    let b: Vec<f64> = (0..100).map(|_| rng.random()).collect();
    let mut s = 0.0;
    for i in 0..100 {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    assert!((rmse(&a, &b).unwrap() - (s / 100.0).sqrt()).abs() < 1e-14);
}

#[test]
fn ks_examples() {
    let a = [0.3, 1.2, 5.0];
    assert_eq!(ks_statistic(&a, None, &a, None), 0.0);
    assert_eq!(ks_statistic(&a, None, &[10.0, 11.0], None), 1.0);
    assert!((ks_statistic(&[1.0, 2.0, 3.0], None, &[1.5], Some(&[1.0])) - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn exact_normal_integrates_to_one() {
    let m = GmModel::new(vec![1.0], vec![Component::new(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]).unwrap()]).unwrap();
    let region = Bounds::new(vec![-8.0; 2], vec![8.0; 2]).unwrap();
    let c = check_normalization(&m, &region, Quadrature::Grid(201)).unwrap();
    assert!((c.integral - 1.0).abs() < 1e-6, "{}", c.integral);
    assert!(!c.region_too_small);
    let mc = check_normalization(&m, &region, Quadrature::MonteCarlo { n: 200_000, seed: 1 }).unwrap();
    assert!((mc.integral - 1.0).abs() < 4.0 * mc.stderr);

    let small = Bounds::new(vec![-1.0; 2], vec![1.0; 2]).unwrap();
    assert!(check_normalization(&m, &small, Quadrature::Grid(51)).unwrap().region_too_small);
}

#[test]
fn fitted_gm_integrates_to_one() {
    let s = normal_draws(1000, 2, 4);
    let gm = fit_gmm(&s, 3, 1).unwrap();
    let region = Bounds::new(vec![-10.0; 2], vec![10.0; 2]).unwrap();
    let c = check_normalization(&gm, &region, Quadrature::Grid(201)).unwrap();
    assert!((c.integral - 1.0).abs() < 1e-3, "{}", c.integral);
}

#[test]
fn gp_integral_clipped_and_unclipped() {
    let s = normal_draws(200, 2, 5);
    let gp = fit_gp(&s, Kernel::Se, 5, 1).unwrap();
    let region = Bounds::new(vec![-10.0; 2], vec![10.0; 2]).unwrap();
    let raw = integrate(&|x| gp.raw_pdf(x), &region, Quadrature::Grid(201)).unwrap();
    let clipped = check_normalization(&gp, &region, Quadrature::Grid(201)).unwrap();
    assert!((raw.integral - 1.0).abs() < 1e-3, "{}", raw.integral);
    assert!(clipped.integral >= raw.integral);
}

#[test]
fn cv_exact_passthrough() {
    let t = gm_target(2, false, 1).unwrap();
    let fit = |_: &SampleSet, _: u64| -> seqpost::Result<Box<dyn DensityModel>> { Ok(Box::new(t.clone())) };
    let mut cfg = CvConfig::new(100, 3);
    cfg.n_repeats = 5;
    let rep = cross_validate(CvData::Target(&t), "exact", &fit, &cfg).unwrap();
    for r in &rep.rows {
        assert_eq!(r.spearman, 1.0);
        assert_eq!(r.rmse, 0.0);
    }
    assert_eq!(rep.rows.len(), 5);
}

#[test]
fn cv_gm_on_target_and_determinism() {
    let t: GmTarget = gm_target(2, false, 2).unwrap();
    let fit = |s: &SampleSet, seed: u64| -> seqpost::Result<Box<dyn DensityModel>> { Ok(Box::new(fit_gmm(s, 5, seed)?)) };
    let mut cfg = CvConfig::new(1000, 7);
    cfg.n_repeats = 5;
    let a = cross_validate(CvData::Target(&t), "gm", &fit, &cfg).unwrap();
    assert!(a.median_spearman >= 0.95, "{}", a.median_spearman);
    let b = cross_validate(CvData::Target(&t), "gm", &fit, &cfg).unwrap();
    assert_eq!(a, b);

    let mut out = Vec::new();
    write_cv_csv(&a.rows, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("method,train_size,repeat,spearman,rmse\n"));
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn cv_posterior_mode() {
    let s = normal_draws(1200, 2, 9);
    let fit = |s: &SampleSet, seed: u64| -> seqpost::Result<Box<dyn DensityModel>> { Ok(Box::new(fit_gmm(s, 3, seed)?)) };
    let mut cfg = CvConfig::new(600, 1);
    cfg.n_repeats = 3;
    let rep = cross_validate(CvData::Posterior(&s), "gm", &fit, &cfg).unwrap();
    assert!(rep.median_spearman > 0.95);
    assert!(rep.median_rmse < 0.01, "{}", rep.median_rmse);
    cfg.train_size = 1000;
    assert!(matches!(
        cross_validate(CvData::Posterior(&s), "gm", &fit, &cfg),
        Err(Error::InsufficientSamples { .. })
    ));
}

fn small_vec() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, 3..30)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn ks_symmetric_and_triangle(a in small_vec(), b in small_vec(), c in small_vec()) {
        let ab = ks_statistic(&a, None, &b, None);
        prop_assert!((ab - ks_statistic(&b, None, &a, None)).abs() < 1e-15);
        let ac = ks_statistic(&a, None, &c, None);
        let bc = ks_statistic(&b, None, &c, None);
        prop_assert!(ac <= ab + bc + 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn spearman_monotone_invariant(pairs in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 3..30)) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        if let Ok(r) = spearman(&a, &b) {
            let ta: Vec<f64> = a.iter().map(|v| v.powi(3) + 2.0 * v).collect();
            let tb: Vec<f64> = b.iter().map(|v| v.exp()).collect();
            prop_assert!((spearman(&ta, &tb).unwrap() - r).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_permutation_invariant(pairs in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 3..30), seed in 0u64..1000) {
        use rand::seq::SliceRandom;
        let mut p2 = pairs.clone();
        p2.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let split = |p: &[(f64, f64)]| -> (Vec<f64>, Vec<f64>) { (p.iter().map(|x| x.0).collect(), p.iter().map(|x| x.1).collect()) };
        let (a, b) = split(&pairs);
        let (a2, b2) = split(&p2);
        prop_assert!((rmse(&a, &b).unwrap() - rmse(&a2, &b2).unwrap()).abs() < 1e-12);
        prop_assert!((ks_statistic(&a, None, &b, None) - ks_statistic(&a2, None, &b2, None)).abs() < 1e-15);
        if let Ok(r) = spearman(&a, &b) {
            prop_assert!((spearman(&a2, &b2).unwrap() - r).abs() < 1e-12);
        }
    }
}
