use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::fit_method;
use crate::error::Result;
use crate::model::DensityModel;
use crate::models::gm_target;
use crate::sample::SampleSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub dim: usize,
    pub seed: u64,
    pub eval_methods: Vec<String>,
    pub eval_sizes: [usize; 2],
    pub eval_points: usize,
    pub train_methods: Vec<String>,
    pub train_sizes: [usize; 2],
    /// Each timing is the minimum over this many runs.
    pub runs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            seed: 1,
            eval_methods: vec!["gmm".into(), "vine-mixture".into(), "kde".into()],
            eval_sizes: [500, 5000],
            eval_points: 2000,
            train_methods: vec!["gp-se".into()],
            train_sizes: [200, 800],
            runs: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: String,
    /// "eval" or "train".
    pub phase: String,
    pub small_n: usize,
    pub large_n: usize,
    pub small_seconds: f64,
    pub large_seconds: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<TimingRow>,
}

impl BenchReport {
    pub fn ratio(&self, method: &str, phase: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.method == method && r.phase == phase).map(|r| r.ratio)
    }
}

fn min_time(runs: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..runs.max(1) {
        let t = Instant::now();
        f()?;
        best = best.min(t.elapsed().as_secs_f64());
    }
    Ok(best)
}

fn training_set(target: &dyn DensityModel, n: usize, seed: u64) -> Result<SampleSet> {
    let rows = target.sample(n, seed)?;
    let lp = rows.iter().map(|x| target.log_pdf(x)).collect();
    SampleSet::new(rows, Some(lp), None)
}

/// Evaluation time at two training sizes for the evaluation methods and
/// fit time at two sizes for the training methods.
pub fn run_complexity_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    let target = gm_target(cfg.dim, false, cfg.seed)?;
    let points = target.sample(cfg.eval_points, cfg.seed ^ 0xBEEF)?;
    let mut rows = Vec::new();
    for m in &cfg.eval_methods {
        let mut t = [0.0; 2];
        for (k, &n) in cfg.eval_sizes.iter().enumerate() {
            let model = fit_method(m, &training_set(&target, n, cfg.seed + k as u64)?, None, cfg.seed, 9)?;
            t[k] = min_time(cfg.runs, || {
                let s: f64 = points.iter().map(|x| model.log_pdf(x)).sum();
                black_box(s);
                Ok(())
            })?;
        }
        rows.push(row(m, "eval", cfg.eval_sizes, t));
    }
    for m in &cfg.train_methods {
        let mut t = [0.0; 2];
        for (k, &n) in cfg.train_sizes.iter().enumerate() {
            let set = training_set(&target, n, cfg.seed + 10 + k as u64)?;
            t[k] = min_time(cfg.runs, || {
                black_box(fit_method(m, &set, None, cfg.seed, 9)?);
                Ok(())
            })?;
        }
        rows.push(row(m, "train", cfg.train_sizes, t));
    }
    Ok(BenchReport { rows })
}

fn row(method: &str, phase: &str, n: [usize; 2], t: [f64; 2]) -> TimingRow {
    TimingRow {
        method: method.to_string(),
        phase: phase.to_string(),
        small_n: n[0],
        large_n: n[1],
        small_seconds: t[0],
        large_seconds: t[1],
        ratio: t[1] / t[0],
    }
}
