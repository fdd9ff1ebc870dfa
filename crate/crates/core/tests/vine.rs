use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use seqpost::marginals::MarginalKind;
use seqpost::numeric::{mvn_logpdf, Cholesky};
use seqpost::vine::{fit_vine, kendall_tau, Family, VineModel};
use seqpost::SampleSet;

fn equicorrelated(rho: f64, d: usize) -> Vec<f64> {
    (0..d * d).map(|k| if k / d == k % d { 1.0 } else { rho }).collect()
}

fn mvn(cov: &[f64], d: usize, n: usize, seed: u64) -> SampleSet {
    let chol = Cholesky::new(cov, d).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            chol.mul_lower(&z)
        })
        .collect();
    SampleSet::new(rows, None, None).unwrap()
}

fn tau_gauss(rho: f64) -> f64 {
    2.0 / std::f64::consts::PI * rho.asin()
}

#[test]
fn two_dimensions_is_one_pair_copula() {
    let s = mvn(&equicorrelated(0.5, 2), 2, 500, 1);
    let v = fit_vine(&s, MarginalKind::EcdfKd, None, 9, 0).unwrap();
    assert_eq!(v.trees().len(), 1);
    let e = &v.trees()[0][0];
    let (f1, f2) = (&v.marginals()[0], &v.marginals()[1]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let (u1, u2) = (f1.pit(x[0]), f2.pit(x[1]));
        let (ua, ub) = if e.a() == 0 { (u1, u2) } else { (u2, u1) };
        let direct = e.copula().pdf(ua, ub) * f1.pdf(x[0]) * f2.pdf(x[1]);
        assert!((v.pdf(&x) - direct).abs() <= 1e-12 * direct.max(1e-300), "{} {direct}", v.pdf(&x));
    }
}

#[test]
fn equicorrelated_first_tree_tau() {
    let s = mvn(&equicorrelated(0.6, 3), 3, 2000, 3);
    let v = fit_vine(&s, MarginalKind::EcdfKd, None, 9, 0).unwrap();
    assert_eq!(v.trees()[0].len(), 2);
    assert_eq!(v.trees()[1].len(), 1);
    for e in &v.trees()[0] {
        assert!((e.copula().tau().abs() - tau_gauss(0.6)).abs() < 0.08, "{:?}", e.copula());
    }
    assert_eq!(v.trees()[1][0].conditioning().len(), 1);
}

#[test]
fn independent_data_gives_independence_copulas() {
    let mut hits = 0;
    for seed in 0..100 {
        let s = mvn(&equicorrelated(0.0, 3), 3, 300, seed);
        if fit_vine(&s, MarginalKind::EcdfKd, None, 9, seed).unwrap().is_independent() {
            hits += 1;
        }
    }
    assert!(hits >= 70, "{hits}");
}

#[test]
fn independence_vine_is_product_of_marginals() {
    let s = mvn(&equicorrelated(0.0, 3), 3, 300, 5);
    let v = fit_vine(&s, MarginalKind::EcdfKd, None, 9, 5).unwrap();
    assert!(v.is_independent());
    for x in [[0.0, 0.1, -0.3], [1.0, -1.0, 0.5]] {
        let prod: f64 = (0..3).map(|j| v.marginals()[j].pdf(x[j]).ln()).sum();
        assert_eq!(v.log_pdf(&x), prod);
    }
}

#[test]
fn two_dimensional_density_integrates_to_one() {
    let s = mvn(&[1.0, 0.7, 0.7, 1.0], 2, 1000, 6);
    let v = fit_vine(&s, MarginalKind::ParamMixture, None, 3, 6).unwrap();
    assert_ne!(v.trees()[0][0].copula().family(), Family::Independence);
    let (lo, hi, m) = (-7.0, 7.0, 500);
    let h = (hi - lo) / m as f64;
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            total += v.pdf(&[lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h]);
        }
    }
    total *= h * h;
    assert!((total - 1.0).abs() < 2e-3, "{total}");
}

#[test]
fn gaussian_copula_matches_mvn_density() {
    let cov = [1.0, 0.5, 0.3, 0.5, 1.0, 0.4, 0.3, 0.4, 1.0];
    let s = mvn(&cov, 3, 20000, 7);
    let v = fit_vine(&s, MarginalKind::ParamMixture, None, 1, 7).unwrap();
    let chol = Cholesky::new(&cov, 3).unwrap();
    let eval = mvn(&cov, 3, 1000, 8);
    let mut worst: f64 = 0.0;
    let mut mean = 0.0;
    for x in eval.rows() {
        let truth = mvn_logpdf(x, &[0.0; 3], &chol).exp();
        let rel = (v.pdf(x) / truth - 1.0).abs();
        worst = worst.max(rel);
        mean += rel / 1000.0;
    }
    println!("mean relative error {mean:.4}, worst {worst:.4}");
    assert!(mean < 5e-2, "{mean}");
}

fn ks(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn independence_vine_draws_follow_marginals() {
    let s = mvn(&equicorrelated(0.0, 3), 3, 300, 5);
    let v = fit_vine(&s, MarginalKind::ParamMixture, None, 2, 5).unwrap();
    assert!(v.is_independent());
    let n = 4000;
    let draws = v.sample(n, 1).unwrap();
    for j in 0..3 {
        let mut col: Vec<f64> = draws.iter().map(|r| r[j]).collect();
        let d = ks(&mut col, |x| v.marginals()[j].cdf(x));
        assert!(d < 1.63 / (n as f64).sqrt(), "dim {j}: {d}");
    }
}

#[test]
fn draws_reproduce_dependence() {
    let s = mvn(&[1.0, 0.8, 0.8, 1.0], 2, 2000, 9);
    let v = fit_vine(&s, MarginalKind::EcdfKd, None, 9, 9).unwrap();
    let draws = v.sample(10_000, 2).unwrap();
    let (a, b): (Vec<f64>, Vec<f64>) = draws.iter().map(|r| (r[0], r[1])).unzip();
    let t = kendall_tau(&a, &b).unwrap();
    assert!((t - tau_gauss(0.8)).abs() < 0.03, "{t}");
    assert!(v.sample(0, 2).unwrap().is_empty());
    assert_eq!(v.sample(5, 4).unwrap(), v.sample(5, 4).unwrap());
}

#[test]
fn refit_on_draws_recovers_first_tree() {
    let cov = [1.0, 0.6, -0.3, 0.2, 0.6, 1.0, -0.2, 0.4, -0.3, -0.2, 1.0, 0.1, 0.2, 0.4, 0.1, 1.0];
    let s = mvn(&cov, 4, 3000, 10);
    let v = fit_vine(&s, MarginalKind::EcdfKd, None, 9, 10).unwrap();
    let draws = SampleSet::new(v.sample(10_000, 3).unwrap(), None, None).unwrap();
    let w = fit_vine(&draws, MarginalKind::EcdfKd, None, 9, 11).unwrap();
    for e in &v.trees()[0] {
        let pair = (e.a().min(e.b()), e.a().max(e.b()));
        let t = kendall_tau(&draws.column(pair.0), &draws.column(pair.1)).unwrap();
        assert!((t - e.copula().tau()).abs() < 0.05, "{pair:?} {t} {}", e.copula().tau());
        let same = w.trees()[0].iter().find(|f| (f.a().min(f.b()), f.a().max(f.b())) == pair);
        if let Some(f) = same {
            assert!((f.copula().tau() - e.copula().tau()).abs() < 0.05);
        }
    }
}

#[test]
fn payload_round_trip() {
    let s = mvn(&equicorrelated(0.4, 4), 4, 500, 12);
    let v = fit_vine(&s, MarginalKind::ParetoTail, None, 9, 0).unwrap();
    let back = VineModel::from_payload(&v.to_payload().unwrap()).unwrap();
    for x in s.rows().take(20) {
        assert_eq!(back.log_pdf(x).to_bits(), v.log_pdf(x).to_bits());
    }
    assert_eq!(back.sample(10, 1).unwrap(), v.sample(10, 1).unwrap());
}

#[test]
fn too_few_samples() {
    let s = mvn(&equicorrelated(0.0, 2), 2, 20, 1);
    assert!(fit_vine(&s, MarginalKind::EcdfKd, None, 9, 0).is_err());
}
