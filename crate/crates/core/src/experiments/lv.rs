use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{approx_prior_chain, chain_from, column_ks, fit_method, sub_seed, ChainConfig, MethodKs};
use crate::error::Result;
use crate::inference::importance_reweight;
use crate::models::lv::{make_lv_synthetic, LvConfig, LvProblem, Scale, Stage};
use crate::sample::{Bounds, SampleSet};

/// Rates are shared; stage-two initial conditions sit at 7 and 8 in the
/// joint layout.
const SHARED_IN_JOINT: [usize; 7] = [0, 1, 2, 3, 4, 7, 8];
const RATES: [usize; 5] = [0, 1, 2, 3, 4];
const IC: [usize; 2] = [5, 6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LvSequentialConfig {
    pub lv: LvConfig,
    pub noise_scale: f64,
    pub data_seed: u64,
    pub seed: u64,
    pub methods: Vec<String>,
    pub stage1: ChainConfig,
    pub stage2: ChainConfig,
    pub joint: ChainConfig,
    pub reweight_samples: usize,
    pub g_max: usize,
}

impl Default for LvSequentialConfig {
    fn default() -> Self {
        Self {
            lv: LvConfig::default(),
            noise_scale: 1.0,
            data_seed: 1,
            seed: 1,
            methods: vec!["gmm".into()],
            stage1: ChainConfig::new(4000, 4000, 10),
            stage2: ChainConfig::new(4000, 4000, 10),
            joint: ChainConfig::new(4000, 4000, 10),
            reweight_samples: 1000,
            g_max: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvSequentialReport {
    pub names: Vec<String>,
    pub sequential: Vec<MethodKs>,
    pub reweighting: MethodKs,
    pub reweighting_ess: f64,
    pub reweighting_n: usize,
    pub joint_acceptance: f64,
    pub stage1_acceptance: f64,
    pub seconds: f64,
}

struct Pipeline {
    problem: LvProblem,
    joint: SampleSet,
    joint_acceptance: f64,
}

impl Pipeline {
    fn new(lv: &LvConfig, noise_scale: f64, data_seed: u64, scale: Scale, joint: &ChainConfig, seed: u64) -> Result<Self> {
        let problem = LvProblem::new(make_lv_synthetic(lv, noise_scale, data_seed)?, scale);
        let out = chain_from(
            &|x| problem.loglik(Stage::Joint, x),
            &|x| problem.log_prior(Stage::Joint, x),
            &problem.bounds(Stage::Joint),
            problem.truth(Stage::Joint),
            joint,
            seed,
        )?;
        Ok(Self { problem, joint: out.samples, joint_acceptance: out.acceptance_rate })
    }

    fn stage1(&self, chain: &ChainConfig, seed: u64) -> Result<(SampleSet, f64)> {
        let p = &self.problem;
        let out = chain_from(
            &|x| p.loglik(Stage::Lynx, x),
            &|x| p.log_prior(Stage::Lynx, x),
            &p.bounds(Stage::Lynx),
            p.truth(Stage::Lynx),
            chain,
            seed,
        )?;
        Ok((out.samples, out.acceptance_rate))
    }

    /// Stage-one rate draws combined with prior draws of the stage-two
    /// initial conditions.
    fn starts(&self, stage1: &SampleSet, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        stage1
            .rows()
            .step_by((stage1.len() / 64).max(1))
            .map(|r| {
                let mut x = r[..5].to_vec();
                let ic = self.problem.prior_draw(Stage::Hare, &mut rng);
                x.extend(&ic[5..]);
                x
            })
            .filter(|x| self.problem.log_prior(Stage::Hare, x).is_finite())
            .collect()
    }

    fn sequential(&self, method: &str, stage1: &SampleSet, chain: &ChainConfig, g_max: usize, seed: u64) -> Result<MethodKs> {
        let p = &self.problem;
        let rates = stage1.select_columns(&RATES)?;
        let rate_bounds = p.bounds(Stage::Lynx).select(&RATES);
        let bounds = (!rate_bounds.is_unbounded()).then_some(&rate_bounds);
        let approx = fit_method(method, &rates, bounds, seed, g_max)?;
        let starts: Vec<Vec<f64>> =
            self.starts(stage1, seed).into_iter().filter(|x| approx.log_pdf(&x[..5]).is_finite()).collect();
        let out = approx_prior_chain(
            approx.as_ref(),
            &RATES,
            &|x| p.log_prior_of(Stage::Hare, x, &IC),
            &|x| p.loglik(Stage::Hare, x),
            &p.bounds(Stage::Hare),
            &starts,
            chain,
            sub_seed(seed, 2),
        )?;
        let cols: Vec<usize> = (0..7).collect();
        Ok(MethodKs::new(method, column_ks(&out.samples, &cols, &self.joint, &SHARED_IN_JOINT), out.acceptance_rate))
    }
}

pub fn run_lv_sequential(cfg: &LvSequentialConfig) -> Result<LvSequentialReport> {
    let start = Instant::now();
    let pipe = Pipeline::new(&cfg.lv, cfg.noise_scale, cfg.data_seed, Scale::Log, &cfg.joint, sub_seed(cfg.seed, 0))?;
    let (stage1, stage1_acceptance) = pipe.stage1(&cfg.stage1, sub_seed(cfg.seed, 1))?;
    let sequential = cfg
        .methods
        .iter()
        .map(|m| pipe.sequential(m, &stage1, &cfg.stage2, cfg.g_max, sub_seed(cfg.seed, 3)))
        .collect::<Result<Vec<_>>>()?;

    // Reweighting: stage-one draws, stage-two initial conditions from their
    // prior, weights from the stage-two likelihood.
    let step = (stage1.len() / cfg.reweight_samples.max(1)).max(1);
    let idx: Vec<usize> = (0..stage1.len()).step_by(step).take(cfg.reweight_samples).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 4));
    let rows: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| {
            let mut x = stage1.row(i)[..5].to_vec();
            x.extend(&pipe.problem.prior_draw(Stage::Hare, &mut rng)[5..]);
            x
        })
        .collect();
    let n = rows.len();
    let aug = SampleSet::new(rows, None, None)?;
    let problem = &pipe.problem;
    let w = importance_reweight(&aug, &|x| problem.loglik(Stage::Hare, x))?;
    let cols: Vec<usize> = (0..7).collect();
    let reweighting = MethodKs::new("reweighting", column_ks(&w.samples, &cols, &pipe.joint, &SHARED_IN_JOINT), 1.0);

    Ok(LvSequentialReport {
        names: pipe.problem.names(Stage::Hare),
        sequential,
        reweighting,
        reweighting_ess: w.ess,
        reweighting_n: n,
        joint_acceptance: pipe.joint_acceptance,
        stage1_acceptance,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LvBoundedConfig {
    pub lv: LvConfig,
    pub noise_scale: f64,
    pub data_seed: u64,
    pub seed: u64,
    pub repeats: usize,
    /// The first entry is the baseline the others are compared against.
    pub methods: Vec<String>,
    pub stage1: ChainConfig,
    pub stage2: ChainConfig,
    pub joint: ChainConfig,
    pub g_max: usize,
}

impl Default for LvBoundedConfig {
    fn default() -> Self {
        Self {
            lv: LvConfig::default(),
            noise_scale: 1.0,
            data_seed: 1,
            seed: 1,
            repeats: 20,
            methods: vec!["gmm".into(), "tgmm".into(), "gmm:auto".into()],
            stage1: ChainConfig::new(4000, 3000, 5),
            stage2: ChainConfig::new(4000, 3000, 5),
            joint: ChainConfig::new(8000, 4000, 10),
            g_max: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvBoundedReport {
    pub names: Vec<String>,
    pub bounds: Bounds,
    /// `runs[r][m]` is method m in repeat r.
    pub runs: Vec<Vec<MethodKs>>,
    /// For each method, repeats where its max-KS is strictly below the
    /// baseline's.
    pub wins_over_baseline: Vec<usize>,
    /// Share of joint draws within 5% of the box width from a bound, per
    /// parameter.
    pub joint_edge_share: Vec<f64>,
    pub seconds: f64,
}

pub fn run_lv_bounded(cfg: &LvBoundedConfig) -> Result<LvBoundedReport> {
    let start = Instant::now();
    let pipe = Pipeline::new(&cfg.lv, cfg.noise_scale, cfg.data_seed, Scale::Natural, &cfg.joint, sub_seed(cfg.seed, 0))?;
    let mut runs = Vec::with_capacity(cfg.repeats);
    for r in 0..cfg.repeats {
        let seed = sub_seed(cfg.seed, 100 + r as u64);
        let (stage1, _) = pipe.stage1(&cfg.stage1, sub_seed(seed, 1))?;
        let row = cfg
            .methods
            .iter()
            .map(|m| pipe.sequential(m, &stage1, &cfg.stage2, cfg.g_max, sub_seed(seed, 3)))
            .collect::<Result<Vec<_>>>()?;
        log::info!("lv-bounded repeat {r}: {:?}", row.iter().map(|m| m.max_ks).collect::<Vec<_>>());
        runs.push(row);
    }
    let wins = (0..cfg.methods.len())
        .map(|m| runs.iter().filter(|row| row[m].max_ks < row[0].max_ks).count())
        .collect();
    let b = pipe.problem.bounds(Stage::Joint);
    let edge = SHARED_IN_JOINT
        .iter()
        .map(|&j| {
            let (lo, hi) = (b.lower()[j], b.upper()[j]);
            let c = pipe.joint.column(j);
            c.iter().filter(|v| (*v - lo) < 0.05 * (hi - lo) || (hi - *v) < 0.05 * (hi - lo)).count() as f64 / c.len() as f64
        })
        .collect();
    Ok(LvBoundedReport {
        names: pipe.problem.names(Stage::Hare),
        bounds: pipe.problem.bounds(Stage::Hare),
        runs,
        wins_over_baseline: wins,
        joint_edge_share: edge,
        seconds: start.elapsed().as_secs_f64(),
    })
}
