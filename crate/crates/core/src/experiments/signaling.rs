use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{approx_prior_chain, chain_from, column_ks, fit_method, sub_seed, ChainConfig, MethodKs};
use crate::error::Result;
use crate::models::signaling::{
    make_signaling_synthetic, prior_box, signaling_loglik_of, Observables, SignalingConfig, SignalingParams, SignalingRow,
    PARAM_NAMES,
};
use crate::sample::SampleSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalingSplitConfig {
    pub signaling: SignalingConfig,
    pub data_seed: u64,
    pub seed: u64,
    /// Approximations tried on the pre-/on-treatment split.
    pub treatment_methods: Vec<String>,
    /// Approximations tried on the split by observable.
    pub observable_methods: Vec<String>,
    pub stage1: ChainConfig,
    pub stage2: ChainConfig,
    pub joint: ChainConfig,
    /// GP fits use at most this many stage-one draws.
    pub gp_max_samples: usize,
    pub g_max: usize,
}

impl Default for SignalingSplitConfig {
    fn default() -> Self {
        Self {
            signaling: SignalingConfig::default(),
            data_seed: 1,
            seed: 1,
            treatment_methods: vec!["gmm".into(), "tgmm".into(), "kde".into(), "vine-mixture".into(), "gp-se".into()],
            observable_methods: vec!["gmm:auto".into(), "gmm".into()],
            stage1: ChainConfig::new(4000, 20000, 100),
            stage2: ChainConfig::new(4000, 20000, 100),
            joint: ChainConfig::new(4000, 20000, 100),
            gp_max_samples: 500,
            g_max: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalingSplitReport {
    pub names: Vec<String>,
    pub treatment: Vec<MethodKs>,
    pub observable: Vec<MethodKs>,
    pub joint_acceptance: f64,
    pub seconds: f64,
}

struct Split<'a> {
    first: (&'a [SignalingRow], Observables),
    second: (&'a [SignalingRow], Observables),
}

fn thin_to(s: &SampleSet, max: usize) -> Result<SampleSet> {
    if s.len() <= max {
        return Ok(s.clone());
    }
    let idx: Vec<usize> = (0..max).map(|i| i * s.len() / max).collect();
    s.subset(&idx)
}

fn run_split(
    cfg: &SignalingSplitConfig,
    split: &Split<'_>,
    methods: &[String],
    joint: &SampleSet,
    init: &[f64],
    seed: u64,
) -> Result<Vec<MethodKs>> {
    let bounds = prior_box();
    let ll = |rows: &[SignalingRow], which: Observables, x: &[f64]| match SignalingParams::from_slice(x) {
        Ok(p) => signaling_loglik_of(&p, rows, which),
        Err(_) => f64::NEG_INFINITY,
    };
    let stage1 = chain_from(
        &|x| ll(split.first.0, split.first.1, x),
        &|_| 0.0,
        &bounds,
        init.to_vec(),
        &cfg.stage1,
        sub_seed(seed, 1),
    )?
    .samples;
    let cols: Vec<usize> = (0..10).collect();
    methods
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let train = if m.starts_with("gp") { thin_to(&stage1, cfg.gp_max_samples)? } else { stage1.clone() };
            let approx = fit_method(m, &train, Some(&bounds), sub_seed(seed, 10 + k as u64), cfg.g_max)?;
            let starts: Vec<Vec<f64>> = stage1.rows().map(<[f64]>::to_vec).filter(|x| approx.log_pdf(x).is_finite()).collect();
            let out = approx_prior_chain(
                approx.as_ref(),
                &cols,
                &|_| 0.0,
                &|x| ll(split.second.0, split.second.1, x),
                &bounds,
                &starts,
                &cfg.stage2,
                sub_seed(seed, 20 + k as u64),
            )?;
            log::info!("signaling {m}: acceptance {:.3}", out.acceptance_rate);
            Ok(MethodKs::new(m, column_ks(&out.samples, &cols, joint, &cols), out.acceptance_rate))
        })
        .collect()
}

pub fn run_signaling_split(cfg: &SignalingSplitConfig) -> Result<SignalingSplitReport> {
    let start = Instant::now();
    let data = make_signaling_synthetic(&cfg.signaling, cfg.data_seed)?;
    let all: Vec<SignalingRow> = data.untreated.iter().chain(&data.treated).copied().collect();
    let init = cfg.signaling.pre.to_vec();
    let joint_out = chain_from(
        &|x| SignalingParams::from_slice(x).map_or(f64::NEG_INFINITY, |p| signaling_loglik_of(&p, &all, Observables::Both)),
        &|_| 0.0,
        &prior_box(),
        init.clone(),
        &cfg.joint,
        sub_seed(cfg.seed, 0),
    )?;
    let treatment_split =
        Split { first: (&data.untreated, Observables::Both), second: (&data.treated, Observables::Both) };
    let treatment = run_split(cfg, &treatment_split, &cfg.treatment_methods, &joint_out.samples, &init, sub_seed(cfg.seed, 1))?;
    let observable_split = Split { first: (&all, Observables::P), second: (&all, Observables::Q) };
    let observable =
        run_split(cfg, &observable_split, &cfg.observable_methods, &joint_out.samples, &init, sub_seed(cfg.seed, 2))?;
    Ok(SignalingSplitReport {
        names: PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
        treatment,
        observable,
        joint_acceptance: joint_out.acceptance_rate,
        seconds: start.elapsed().as_secs_f64(),
    })
}
