mod config;
mod problems;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use seqpost::eval::{cross_validate, write_cv_csv, CvConfig, CvData};
use seqpost::experiments::{self, fit_method};
use seqpost::inference::{estimate_log_evidence, importance_reweight};
use seqpost::io::write_atomic;
use seqpost::model::{load_model, save_model};
use seqpost::models::gm_target;
use seqpost::sample::fmt_f64;
use seqpost::{Bounds, Error, SampleSet, TransformMode};

use problems::{ProblemKind, StageProblem};

#[derive(Parser, Debug)]
#[command(name = "seqpost", version, about = "Posterior approximations for sequential Bayesian inference")]
#[command(args_override_self = true)]
struct Cli {
    /// key=value file supplying defaults for the subcommand's flags
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Cap on worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (repeat for debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a density approximation to a sample CSV
    Fit(FitArgs),
    /// Evaluate a fitted model at points
    Pdf(PdfArgs),
    /// Draw from a fitted model
    Sample(SampleArgs),
    /// Repeated random subsampling validation
    Cv(CvArgs),
    /// Second-stage posterior with a fitted model as prior
    Seqinf(SeqinfArgs),
    /// Importance-reweight samples by a second-stage likelihood
    Reweight(ReweightArgs),
    /// Log marginal likelihood from a fitted model and posterior samples
    Evidence(EvidenceArgs),
    /// Run a named experiment suite
    Experiment(ExperimentArgs),
    /// Write synthetic data for a built-in model
    Simulate(SimulateArgs),
}

#[derive(Args, Debug)]
struct SeedArg {
    #[arg(long, env = "MVD_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    method: String,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value = "none")]
    transform: TransformMode,
    /// Comma-separated lower bounds (use -inf for none)
    #[arg(long, allow_hyphen_values = true)]
    lower: Option<String>,
    /// Comma-separated upper bounds (use inf for none)
    #[arg(long, allow_hyphen_values = true)]
    upper: Option<String>,
    #[arg(long, default_value_t = 9)]
    g_max: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args, Debug)]
struct PdfArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    points: PathBuf,
    /// Output CSV (stdout when omitted)
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(short, long)]
    n: usize,
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args, Debug)]
struct CvArgs {
    /// Comma-separated methods
    #[arg(long, value_delimiter = ',')]
    method: Vec<String>,
    /// Posterior samples with log_post; without it a Gaussian-mixture target is used
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long)]
    separated: bool,
    #[arg(long)]
    train_size: usize,
    #[arg(long, default_value_t = 500)]
    test_size: usize,
    #[arg(long, default_value_t = 100)]
    repeats: usize,
    #[arg(long, default_value_t = 9)]
    g_max: usize,
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args, Debug, Clone)]
struct ProblemArgs {
    #[arg(long, value_enum)]
    model: ProblemKind,
    /// lv: lynx | hare | joint; signaling: untreated | treated | p | q | all
    #[arg(long)]
    stage: String,
    /// lv parameter scale
    #[arg(long, value_enum, default_value_t = ScaleArg::Log)]
    scale: ScaleArg,
    /// Metadata JSON written by `simulate`; synthetic data from --data-seed otherwise
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    data_seed: u64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ScaleArg {
    Log,
    Natural,
}

#[derive(Args, Debug)]
struct SeqinfArgs {
    #[arg(long)]
    prior_model: PathBuf,
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value_t = 4000)]
    n_samples: usize,
    #[arg(long, default_value_t = 4000)]
    burn_in: usize,
    #[arg(long, default_value_t = 10)]
    thin: usize,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args, Debug)]
struct ReweightArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct EvidenceArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// gm-recovery | lv-sequential | lv-bounded | signaling-split | complexity-bench
    name: String,
    /// JSON file with suite settings; missing keys keep their defaults
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the suite's seed
    #[arg(long, env = "MVD_SEED")]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    model: ProblemKind,
    #[arg(long, default_value_t = 1.0)]
    noise_scale: f64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    seed: SeedArg,
}

fn parse_list(s: &str) -> seqpost::Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::InvalidInput(format!("cannot parse bound `{t}`"))))
        .collect()
}

fn bounds_from(lower: Option<&str>, upper: Option<&str>, d: usize) -> seqpost::Result<Option<Bounds>> {
    if lower.is_none() && upper.is_none() {
        return Ok(None);
    }
    let lo = lower.map(parse_list).transpose()?.unwrap_or_else(|| vec![f64::NEG_INFINITY; d]);
    let hi = upper.map(parse_list).transpose()?.unwrap_or_else(|| vec![f64::INFINITY; d]);
    Ok(Some(Bounds::new(lo, hi)?))
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> seqpost::Result<()> {
    match path {
        Some(p) => write_atomic(p, bytes),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn csv_bytes(set: &SampleSet) -> seqpost::Result<Vec<u8>> {
    let mut buf = Vec::new();
    set.write_csv(&mut buf)?;
    Ok(buf)
}

fn json_bytes<T: serde::Serialize>(v: &T) -> seqpost::Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v)?;
    s.push(b'\n');
    Ok(s)
}

fn fit(a: FitArgs) -> seqpost::Result<()> {
    let samples = SampleSet::read_csv_path(&a.input)?;
    let bounds = bounds_from(a.lower.as_deref(), a.upper.as_deref(), samples.dim())?;
    let cfg = seqpost::FitConfig { bounds, seed: a.seed.seed, g_max: a.g_max, folds: a.folds };
    let model = seqpost::model::fit_model(&a.method, &samples, &cfg, a.transform)?;
    save_model(model.as_ref(), &a.output)
}

fn pdf(a: PdfArgs) -> seqpost::Result<()> {
    let model = load_model(&a.model)?;
    let points = SampleSet::read_csv_path(&a.points)?;
    if points.dim() != model.dim() {
        return Err(Error::InvalidInput(format!("points have {} columns, model {}", points.dim(), model.dim())));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = points.column_names();
    header.push("density".into());
    w.write_record(&header)?;
    for x in points.rows() {
        let mut rec: Vec<String> = x.iter().map(|v| fmt_f64(*v)).collect();
        rec.push(fmt_f64(model.pdf(x)));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    emit(a.output.as_deref(), &bytes)
}

fn sample(a: SampleArgs) -> seqpost::Result<()> {
    let model = load_model(&a.model)?;
    let rows = model.sample(a.n, a.seed.seed)?;
    if rows.is_empty() {
        let header: Vec<String> = (1..=model.dim()).map(|j| format!("x{j}")).collect();
        return emit(a.output.as_deref(), format!("{}\n", header.join(",")).as_bytes());
    }
    emit(a.output.as_deref(), &csv_bytes(&SampleSet::new(rows, None, None)?)?)
}

fn cv(a: CvArgs) -> seqpost::Result<()> {
    let posterior = a.input.as_ref().map(SampleSet::read_csv_path).transpose()?;
    let target = gm_target(a.dim, a.separated, a.seed.seed)?;
    let mut rows = Vec::new();
    for m in &a.method {
        let fit = |s: &SampleSet, seed: u64| fit_method(m, s, None, seed, a.g_max);
        let cfg = CvConfig { n_repeats: a.repeats, train_size: a.train_size, test_size: a.test_size, seed: a.seed.seed };
        let data = match &posterior {
            Some(s) => CvData::Posterior(s),
            None => CvData::Target(&target),
        };
        let rep = cross_validate(data, m, &fit, &cfg)?;
        eprintln!("{m}: median spearman {:.4}, median rmse {:.4e}", rep.median_spearman, rep.median_rmse);
        rows.extend(rep.rows);
    }
    let mut buf = Vec::new();
    write_cv_csv(&rows, &mut buf)?;
    emit(a.output.as_deref(), &buf)
}

fn seqinf(a: SeqinfArgs) -> seqpost::Result<()> {
    let prior = load_model(&a.prior_model)?;
    let problem = StageProblem::from_args(&a.problem)?;
    let chain = experiments::ChainConfig::new(a.n_samples, a.burn_in, a.thin);
    let out = problem.sequential(prior.as_ref(), &chain, a.seed.seed)?;
    eprintln!("acceptance rate {:.3}", out.acceptance_rate);
    let set = out.samples.with_names(problem.names())?;
    write_atomic(&a.output, &csv_bytes(&set)?)
}

fn reweight(a: ReweightArgs) -> seqpost::Result<()> {
    let samples = SampleSet::read_csv_path(&a.input)?;
    let problem = StageProblem::from_args(&a.problem)?;
    if samples.dim() != problem.dim() {
        return Err(Error::InvalidInput(format!("samples have {} columns, stage has {}", samples.dim(), problem.dim())));
    }
    let w = importance_reweight(&samples, &|x| problem.loglik(x))?;
    eprintln!("effective sample size {:.2} of {}", w.ess, samples.len());
    write_atomic(&a.output, &csv_bytes(&w.samples)?)
}

fn evidence(a: EvidenceArgs) -> seqpost::Result<()> {
    let model = load_model(&a.model)?;
    let samples = SampleSet::read_csv_path(&a.input)?;
    let e = estimate_log_evidence(model.as_ref(), &samples)?;
    let v = serde_json::json!({
        "log_z": e.log_z,
        "slope": e.slope,
        "stderr": e.stderr,
        "log_z_fixed_slope": e.log_z_fixed_slope,
        "slope_warning": e.slope_warning,
        "n_used": e.n_used,
        "n_excluded": e.n_excluded,
    });
    emit(a.output.as_deref(), &json_bytes(&v)?)
}

fn experiment(a: ExperimentArgs) -> seqpost::Result<()> {
    let params: serde_json::Value = match &a.params {
        Some(p) => serde_json::from_slice(&std::fs::read(p)?)?,
        None => serde_json::json!({}),
    };
    let mut params = params;
    if let (Some(seed), Some(obj)) = (a.seed, params.as_object_mut()) {
        obj.insert("seed".into(), seed.into());
    }
    std::fs::create_dir_all(&a.out)?;
    let report = a.out.join("report.json");
    match a.name.as_str() {
        "gm-recovery" => {
            let r = experiments::run_gm_recovery(&experiments::config_from_json(&params)?)?;
            let mut buf = Vec::new();
            write_cv_csv(&r.rows, &mut buf)?;
            write_atomic(&a.out.join("cv.csv"), &buf)?;
            write_atomic(&report, &json_bytes(&r)?)
        }
        "lv-sequential" => write_atomic(&report, &json_bytes(&experiments::run_lv_sequential(&experiments::config_from_json(&params)?)?)?),
        "lv-bounded" => write_atomic(&report, &json_bytes(&experiments::run_lv_bounded(&experiments::config_from_json(&params)?)?)?),
        "signaling-split" => {
            write_atomic(&report, &json_bytes(&experiments::run_signaling_split(&experiments::config_from_json(&params)?)?)?)
        }
        "complexity-bench" => {
            write_atomic(&report, &json_bytes(&experiments::run_complexity_bench(&experiments::config_from_json(&params)?)?)?)
        }
        other => Err(Error::InvalidInput(format!("unknown experiment `{other}`; expected one of {}", experiments::SUITES.join(", ")))),
    }
}

fn simulate(a: SimulateArgs) -> seqpost::Result<()> {
    std::fs::create_dir_all(&a.out)?;
    problems::simulate(a.model, a.noise_scale, a.seed.seed, &a.out)
}

fn run(cli: Cli) -> seqpost::Result<()> {
    match cli.command {
        Command::Fit(a) => fit(a),
        Command::Pdf(a) => pdf(a),
        Command::Sample(a) => sample(a),
        Command::Cv(a) => cv(a),
        Command::Seqinf(a) => seqinf(a),
        Command::Reweight(a) => reweight(a),
        Command::Evidence(a) => evidence(a),
        Command::Experiment(a) => experiment(a),
        Command::Simulate(a) => simulate(a),
    }
}

fn main() -> ExitCode {
    let args: Vec<OsString> = std::env::args_os().collect();
    let args = match config::expand(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::try_parse_from(args).unwrap_or_else(|e| e.exit());
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
