//! Built-in likelihoods addressable from the command line.

use std::path::Path;

use clap::ValueEnum;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use seqpost::experiments::{approx_prior_chain, ChainConfig};
use seqpost::inference::McmcOutput;
use seqpost::io::write_atomic;
use seqpost::models::lv::{self, make_lv_synthetic, LvConfig, LvProblem, LvSynthetic, Scale, Stage};
use seqpost::models::signaling::{
    self, make_signaling_synthetic, prior_box, signaling_loglik_of, Observables, SignalingConfig, SignalingParams,
    SignalingRow, SignalingSynthetic,
};
use seqpost::sample::fmt_f64;
use seqpost::{Bounds, DensityModel, Error, Result};

use crate::{ProblemArgs, ScaleArg};

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Lv,
    Signaling,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
enum Metadata {
    Lv { sigma_density: f64, sigma_natality: f64, data: LvSynthetic },
    Signaling { noise_sigma: f64, noise_nu: f64, data: SignalingSynthetic },
}

pub enum StageProblem {
    Lv { problem: LvProblem, stage: Stage },
    Signaling { rows: Vec<SignalingRow>, which: Observables, start: Vec<f64> },
}

fn load_metadata(path: &Path) -> Result<Metadata> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

impl StageProblem {
    pub fn from_args(a: &ProblemArgs) -> Result<Self> {
        let meta = a.data.as_deref().map(load_metadata).transpose()?;
        match a.model {
            crate::ProblemKind::Lv => {
                let data = match meta {
                    Some(Metadata::Lv { data, .. }) => data,
                    Some(_) => return Err(Error::InvalidInput("data file is not an lv dataset".into())),
                    None => make_lv_synthetic(&LvConfig::default(), 1.0, a.data_seed)?,
                };
                let stage = match a.stage.as_str() {
                    "lynx" => Stage::Lynx,
                    "hare" => Stage::Hare,
                    "joint" => Stage::Joint,
                    s => return Err(Error::InvalidInput(format!("unknown lv stage `{s}` (lynx, hare, joint)"))),
                };
                let scale = if a.scale == ScaleArg::Log { Scale::Log } else { Scale::Natural };
                Ok(Self::Lv { problem: LvProblem::new(data, scale), stage })
            }
            crate::ProblemKind::Signaling => {
                let data = match meta {
                    Some(Metadata::Signaling { data, .. }) => data,
                    Some(_) => return Err(Error::InvalidInput("data file is not a signaling dataset".into())),
                    None => make_signaling_synthetic(&SignalingConfig::default(), a.data_seed)?,
                };
                let all: Vec<SignalingRow> = data.untreated.iter().chain(&data.treated).copied().collect();
                let (rows, which) = match a.stage.as_str() {
                    "untreated" => (data.untreated.clone(), Observables::Both),
                    "treated" => (data.treated.clone(), Observables::Both),
                    "p" => (all, Observables::P),
                    "q" => (all, Observables::Q),
                    "all" => (all, Observables::Both),
                    s => {
                        return Err(Error::InvalidInput(format!(
                            "unknown signaling stage `{s}` (untreated, treated, p, q, all)"
                        )))
                    }
                };
                Ok(Self::Signaling { rows, which, start: data.config.pre.to_vec() })
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Lv { problem, stage } => problem.dim(*stage),
            Self::Signaling { .. } => 10,
        }
    }

    pub fn names(&self) -> Vec<String> {
        match self {
            Self::Lv { problem, stage } => problem.names(*stage),
            Self::Signaling { .. } => signaling::PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn loglik(&self, x: &[f64]) -> f64 {
        match self {
            Self::Lv { problem, stage } => problem.loglik(*stage, x),
            Self::Signaling { rows, which, .. } => {
                SignalingParams::from_slice(x).map_or(f64::NEG_INFINITY, |p| signaling_loglik_of(&p, rows, *which))
            }
        }
    }

    fn bounds(&self) -> Bounds {
        match self {
            Self::Lv { problem, stage } => problem.bounds(*stage),
            Self::Signaling { .. } => prior_box(),
        }
    }

    /// Runs the chain with `prior` on the leading coordinates. An lv prior
    /// over the five rates is completed by the stage's prior on the initial
    /// conditions.
    pub fn sequential(&self, prior: &dyn DensityModel, chain: &ChainConfig, seed: u64) -> Result<McmcOutput> {
        let d = self.dim();
        let k = prior.dim();
        let cols: Vec<usize> = (0..k).collect();
        let rest: Vec<usize> = (k..d).collect();
        let allowed = match self {
            Self::Lv { .. } => k == 5 || k == d,
            Self::Signaling { .. } => k == d,
        };
        if !allowed {
            return Err(Error::InvalidInput(format!("prior has dimension {k}, stage has {d}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5157);
        let complete = |head: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
            let mut x = head.to_vec();
            match self {
                Self::Lv { problem, stage } => x.extend(&problem.prior_draw(*stage, rng)[k..]),
                Self::Signaling { .. } => {}
            }
            x
        };
        let fallback = match self {
            Self::Lv { problem, stage } => problem.truth(*stage),
            Self::Signaling { start, .. } => start.clone(),
        };
        let bounds = self.bounds();
        let mut starts: Vec<Vec<f64>> = match prior.sample(64, seed) {
            Ok(rows) => rows.iter().map(|r| complete(r, &mut rng)).collect(),
            Err(_) => Vec::new(),
        };
        starts.push(fallback);
        starts.retain(|x| bounds.contains(x) && prior.log_pdf(&x[..k]).is_finite());
        let rest_prior = |x: &[f64]| match self {
            Self::Lv { problem, stage } => problem.log_prior_of(*stage, x, &rest),
            Self::Signaling { .. } => 0.0,
        };
        approx_prior_chain(prior, &cols, &rest_prior, &|x| self.loglik(x), &bounds, &starts, chain, seed)
    }
}

fn table(header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| fmt_f64(*v)))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn simulate(kind: ProblemKind, noise_scale: f64, seed: u64, out: &Path) -> Result<()> {
    let meta = match kind {
        ProblemKind::Lv => {
            let data = make_lv_synthetic(&LvConfig::default(), noise_scale, seed)?;
            let l = &data.lynx;
            write_atomic(&out.join("lynx.csv"), &table(&["t", "lynx"], l.t.iter().zip(&l.density).map(|(t, y)| vec![*t, *y]))?)?;
            let h = &data.hare;
            let rows = (0..h.t.len()).map(|i| vec![h.t[i], h.density[i], h.natality[i]]);
            write_atomic(&out.join("hare.csv"), &table(&["t", "hare", "natality"], rows)?)?;
            Metadata::Lv { sigma_density: lv::SIGMA_DENSITY * noise_scale, sigma_natality: lv::SIGMA_NATALITY * noise_scale, data }
        }
        ProblemKind::Signaling => {
            let data = make_signaling_synthetic(&SignalingConfig::default(), seed)?;
            let rows = data.untreated.iter().chain(&data.treated).map(|r| vec![r.m, r.n, r.w, r.p, r.q]);
            write_atomic(&out.join("signaling.csv"), &table(&["m", "n", "w", "p", "q"], rows)?)?;
            Metadata::Signaling { noise_sigma: signaling::NOISE_SIGMA, noise_nu: signaling::NOISE_NU, data }
        }
    };
    let mut bytes = serde_json::to_vec_pretty(&meta)?;
    bytes.push(b'\n');
    write_atomic(&out.join("metadata.json"), &bytes)
}
