use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::fit_method;
use crate::error::Result;
use crate::eval::{cross_validate, CvConfig, CvData, CvRow};
use crate::models::gm_target;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryConfig {
    pub dim: usize,
    pub separated: bool,
    pub target_seed: u64,
    pub seed: u64,
    pub methods: Vec<String>,
    pub train_sizes: Vec<usize>,
    pub repeats: usize,
    pub test_size: usize,
    pub g_max: usize,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            separated: false,
            target_seed: 1,
            seed: 1,
            methods: vec!["gmm".into(), "gp-se".into()],
            train_sizes: vec![300, 1000],
            repeats: 20,
            test_size: 500,
            g_max: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub method: String,
    pub train_size: usize,
    pub median_spearman: f64,
    pub median_rmse: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub summary: Vec<RecoveryRow>,
    #[serde(skip)]
    pub rows: Vec<CvRow>,
}

impl RecoveryReport {
    pub fn median_spearman(&self, method: &str, train_size: usize) -> Option<f64> {
        self.summary.iter().find(|r| r.method == method && r.train_size == train_size).map(|r| r.median_spearman)
    }
}

/// Fits each method to fresh draws of a two-component target and scores it
/// on 500 new draws against the exact density.
pub fn run_gm_recovery(cfg: &RecoveryConfig) -> Result<RecoveryReport> {
    let target = gm_target(cfg.dim, cfg.separated, cfg.target_seed)?;
    let mut summary = Vec::new();
    let mut rows = Vec::new();
    for method in &cfg.methods {
        for &n in &cfg.train_sizes {
            let start = Instant::now();
            let fit = |s: &crate::sample::SampleSet, seed: u64| fit_method(method, s, None, seed, cfg.g_max);
            let cv = CvConfig { n_repeats: cfg.repeats, train_size: n, test_size: cfg.test_size, seed: cfg.seed };
            let rep = cross_validate(CvData::Target(&target), method, &fit, &cv)?;
            log::info!("{method} n={n}: median spearman {:.4}", rep.median_spearman);
            summary.push(RecoveryRow {
                method: method.clone(),
                train_size: n,
                median_spearman: rep.median_spearman,
                median_rmse: rep.median_rmse,
                seconds: start.elapsed().as_secs_f64(),
            });
            rows.extend(rep.rows);
        }
    }
    Ok(RecoveryReport { summary, rows })
}
