//! Command-line front end: argument parsing, config merging and the five
//! subcommands.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use symcomplete::gd::{run_gd, GdConfig, StepSize, StopReason, DEFAULT_STOP_TOL_REL};
use symcomplete::linops::DEFAULT_DENSE_CAP;
use symcomplete::problem::{init_perturbed, init_spectral, ProblemInstance, SamplingScheme};
use symcomplete::rate::{
    contraction_check, contraction_check_with, empirical_rate, implied_constant, GelfandOptions,
    RateOptions, RateWindow,
};
use symcomplete::report::to_precise_json;
use symcomplete::verify::{
    attach_first_order_predictions, compare_first_order_traces, run_suite, Suite, VerifyOptions,
};

/// Default output directory when neither `--out-dir` nor a config file sets one.
pub const OUT_DIR_ENV: &str = "SYMCOMPLETE_OUT_DIR";

pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DIVERGED: i32 = 2;
    pub const VERIFY_FAILED: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error(transparent)]
    Core(#[from] symcomplete::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("gradient descent diverged for seed(s) {0:?}")]
    Diverged(Vec<u64>),
    #[error("verification failed for seed(s) {0:?}")]
    VerificationFailed(Vec<u64>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Diverged(_) => exit::DIVERGED,
            Self::VerificationFailed(_) => exit::VERIFY_FAILED,
            _ => exit::USAGE,
        }
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

fn config_err(field: &'static str, reason: impl Into<String>) -> CliError {
    CliError::Config {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Perturbed,
    Spectral,
}

/// Everything an experiment needs; loaded from JSON, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub r: usize,
    pub p: f64,
    pub sampling: SamplingScheme,
    pub sigma: f64,
    pub eta_rule: StepSize,
    pub max_iters: usize,
    /// Absolute threshold on `‖E^k‖_F`; `1e-12·‖M‖_F` when unset.
    pub stop_tol: Option<f64>,
    pub seed: u64,
    pub output_path: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub init_mode: InitMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 20,
            r: 3,
            p: 0.3,
            sampling: SamplingScheme::UpperTriangle,
            sigma: 1e-2,
            eta_rule: StepSize::default(),
            max_iters: 5000,
            stop_tol: None,
            seed: 0,
            output_path: None,
            out_dir: None,
            init_mode: InitMode::Perturbed,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config_err("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(config_err("n", "must be >= 1"));
        }
        if self.r == 0 || self.r > self.n {
            return Err(config_err("r", format!("must lie in [1, n={}], got {}", self.n, self.r)));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(config_err("p", format!("must lie in (0, 1], got {}", self.p)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(config_err("sigma", format!("must be finite and >= 0, got {}", self.sigma)));
        }
        match self.eta_rule {
            StepSize::Absolute { eta } if !(eta >= 0.0 && eta.is_finite()) => {
                return Err(config_err("eta_rule", format!("eta must be finite and >= 0, got {eta}")))
            }
            StepSize::OverSpectralNorm { c } if !(c >= 0.0 && c.is_finite()) => {
                return Err(config_err("eta_rule", format!("c must be finite and >= 0, got {c}")))
            }
            _ => {}
        }
        if self.max_iters == 0 {
            return Err(config_err("max_iters", "must be >= 1"));
        }
        if let Some(tol) = self.stop_tol {
            if !(tol >= 0.0) {
                return Err(config_err("stop_tol", format!("must be >= 0, got {tol}")));
            }
        }
        Ok(())
    }

    /// Output directory: config/flag value, else the environment variable,
    /// else the working directory.
    pub fn resolved_out_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }

    fn gd_config(&self, instance: &ProblemInstance) -> GdConfig {
        GdConfig {
            eta: self.eta_rule.resolve(&instance.truth),
            max_iters: self.max_iters,
            stop_tol: self
                .stop_tol
                .unwrap_or(DEFAULT_STOP_TOL_REL * instance.m().norm()),
            record_every: 1,
        }
    }
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigFlags {
    /// JSON config file; flags take precedence over its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    /// Bernoulli sampling probability.
    #[arg(long)]
    pub p: Option<f64>,
    /// Mask sampling scheme: upper-triangle or closure.
    #[arg(long, value_parser = parse_sampling)]
    pub sampling: Option<SamplingScheme>,
    /// Standard deviation of the initial perturbation.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Absolute step size.
    #[arg(long, conflicts_with = "eta_c")]
    pub eta: Option<f64>,
    /// Step size c/‖M‖₂.
    #[arg(long = "eta-c")]
    pub eta_c: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub stop_tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub init: Option<InitMode>,
    /// Primary output file.
    #[arg(long, short = 'o', value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Output directory [default: $SYMCOMPLETE_OUT_DIR or .]
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

impl ConfigFlags {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident <- $flag:ident),*) => {
                $(if let Some(v) = self.$flag.clone() { cfg.$field = v; })*
            };
        }
        set!(n <- n, r <- r, p <- p, sampling <- sampling, sigma <- sigma, max_iters <- max_iters, seed <- seed, init_mode <- init);
        if let Some(eta) = self.eta {
            cfg.eta_rule = StepSize::Absolute { eta };
        }
        if let Some(c) = self.eta_c {
            cfg.eta_rule = StepSize::OverSpectralNorm { c };
        }
        if self.stop_tol.is_some() {
            cfg.stop_tol = self.stop_tol;
        }
        if self.output.is_some() {
            cfg.output_path = self.output.clone();
        }
        if self.out_dir.is_some() {
            cfg.out_dir = self.out_dir.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Parser)]
#[command(name = "symcomplete", version, about = "Symmetric low-rank matrix completion by factorized gradient descent")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an instance file.
    Generate {
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Run gradient descent; writes a trace CSV and a rate report.
    Run {
        #[command(flatten)]
        flags: ConfigFlags,
        /// Use this instance instead of generating one.
        #[arg(long, value_name = "FILE")]
        instance: Option<PathBuf>,
    },
    /// Print the rate report (ρ(H), ρ(A), verdict).
    Rate {
        #[command(flatten)]
        flags: ConfigFlags,
        #[arg(long, value_name = "FILE")]
        instance: Option<PathBuf>,
        /// Allow the power-iteration estimate instead of a dense eigensolve.
        #[arg(long)]
        matrix_free: bool,
        /// Largest n² handled densely.
        #[arg(long, default_value_t = DEFAULT_DENSE_CAP)]
        dense_cap: usize,
    },
    /// Run verification checks; exit code 3 if any fails.
    Verify {
        #[command(flatten)]
        flags: ConfigFlags,
        #[arg(long, value_name = "FILE", conflicts_with = "seeds")]
        instance: Option<PathBuf>,
        #[arg(long, default_value = "all", value_parser = parse_suite)]
        suite: Suite,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Worker threads for multiple seeds.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Fixed-horizon comparison of GD with ‖Aᵏe⁰‖ and ‖Hᵏe⁰‖.
    TraceCompare {
        #[command(flatten)]
        flags: ConfigFlags,
        #[arg(long, value_name = "FILE")]
        instance: Option<PathBuf>,
        /// Number of iterations [default: max_iters].
        #[arg(long)]
        iters: Option<usize>,
    },
}

fn parse_sampling(s: &str) -> std::result::Result<SamplingScheme, String> {
    s.parse::<SamplingScheme>().map_err(|e| e.to_string())
}

fn parse_suite(s: &str) -> std::result::Result<Suite, String> {
    s.parse::<Suite>().map_err(|e| e.to_string())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    fs::write(path, contents).map_err(io)
}

fn load_or_generate(cfg: &ExperimentConfig, instance: Option<&Path>) -> Result<ProblemInstance> {
    match instance {
        Some(path) => Ok(ProblemInstance::read(path)?),
        None => Ok(ProblemInstance::generate_with(
            cfg.n, cfg.r, cfg.p, cfg.seed, cfg.sampling,
        )?),
    }
}

/// Initial point according to the configured mode.
pub fn initial_point(
    cfg: &ExperimentConfig,
    instance: &ProblemInstance,
) -> Result<(nalgebra::DMatrix<f64>, bool)> {
    match cfg.init_mode {
        InitMode::Perturbed => Ok((
            init_perturbed(&instance.truth.canonical_factor(), cfg.sigma, instance.seed())?,
            false,
        )),
        InitMode::Spectral => {
            let p = instance.p.unwrap_or(cfg.p);
            let init = init_spectral(&instance.observed(), &instance.mask, p, instance.r())?;
            Ok((init.x0, init.deficient))
        }
    }
}

#[derive(Debug, Serialize)]
struct GenerateSummary<'a> {
    path: &'a Path,
    n: usize,
    r: usize,
    seed: u64,
    s: usize,
    lambda_1: f64,
    lambda_r: f64,
}

pub fn cmd_generate(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<PathBuf> {
    let instance = load_or_generate(cfg, None)?;
    let path = cfg
        .output_path
        .clone()
        .unwrap_or_else(|| cfg.resolved_out_dir().join(format!("instance_seed{}.json", cfg.seed)));
    write_file(&path, &instance.to_json()?)?;
    let summary = GenerateSummary {
        path: &path,
        n: instance.n(),
        r: instance.r(),
        seed: instance.seed(),
        s: instance.mask.len(),
        lambda_1: instance.truth.spectral_norm(),
        lambda_r: instance.truth.lambda_min(),
    };
    emit(out, &summary)?;
    Ok(path)
}

fn emit<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    let text = to_precise_json(value)?;
    out.write_all(text.as_bytes()).map_err(|source| CliError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    })
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub eta: f64,
    pub iterations: usize,
    pub stop: StopReason,
    pub diverged: bool,
    pub init_deficient: bool,
    pub final_err_fro: f64,
    pub rho_h: f64,
    pub empirical_rate: Option<f64>,
    pub implied_constant: Option<f64>,
    pub trace_csv: PathBuf,
    pub rate_report: PathBuf,
}

pub fn cmd_run(
    cfg: &ExperimentConfig,
    instance: Option<&Path>,
    out: &mut dyn Write,
) -> Result<RunSummary> {
    let inst = load_or_generate(cfg, instance)?;
    let gd = cfg.gd_config(&inst);
    let (x0, init_deficient) = initial_point(cfg, &inst)?;
    let rate = contraction_check(&inst, gd.eta)?;
    let run = run_gd(&inst, &x0, &gd)?;
    let mut trace = run.trace;
    attach_first_order_predictions(&mut trace, &inst, &x0, gd.eta, rate.rho_h)?;

    let dir = cfg.resolved_out_dir();
    let seed = inst.seed();
    let csv_path = cfg
        .output_path
        .clone()
        .unwrap_or_else(|| dir.join(format!("run_seed{seed}.csv")));
    let rate_path = dir.join(format!("rate_seed{seed}.json"));
    write_file(&csv_path, &trace.to_prediction_csv()?)?;
    write_file(&rate_path, &to_precise_json(&rate)?)?;

    let summary = RunSummary {
        seed,
        eta: gd.eta,
        iterations: run.iterations,
        stop: run.stop,
        diverged: run.stop == StopReason::Diverged,
        init_deficient,
        final_err_fro: *trace.err_fro.last().unwrap_or(&f64::NAN),
        rho_h: rate.rho_h,
        empirical_rate: empirical_rate(&trace, inst.m().norm(), &RateWindow::default())
            .map(|r| r.rate),
        implied_constant: implied_constant(&trace, rate.rho_h),
        trace_csv: csv_path,
        rate_report: rate_path,
    };
    emit(out, &summary)?;
    if summary.diverged {
        return Err(CliError::Diverged(vec![seed]));
    }
    Ok(summary)
}

pub fn cmd_rate(
    cfg: &ExperimentConfig,
    instance: Option<&Path>,
    matrix_free: bool,
    dense_cap: usize,
    out: &mut dyn Write,
) -> Result<symcomplete::RateReport> {
    let inst = load_or_generate(cfg, instance)?;
    let dim = inst.n() * inst.n();
    if dim > dense_cap && !matrix_free {
        return Err(CliError::Usage(format!(
            "n² = {dim} exceeds the dense cap {dense_cap}; pass --matrix-free to estimate by power iteration"
        )));
    }
    let opts = RateOptions {
        dense_limit: if matrix_free { 0 } else { dense_cap },
        gelfand: GelfandOptions {
            seed: inst.seed(),
            ..GelfandOptions::default()
        },
    };
    let report = contraction_check_with(&inst, cfg.eta_rule.resolve(&inst.truth), &opts)?;
    if let Some(path) = &cfg.output_path {
        write_file(path, &to_precise_json(&report)?)?;
    }
    emit(out, &report)?;
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct VerifySeedSummary {
    pub seed: u64,
    pub passed: bool,
    pub report: PathBuf,
    pub outcomes: Vec<(String, symcomplete::verify::Outcome)>,
}

fn verify_one(
    cfg: &ExperimentConfig,
    instance: Option<&Path>,
    suite: Suite,
    seed: u64,
    single: bool,
) -> Result<VerifySeedSummary> {
    let cfg = ExperimentConfig {
        seed,
        ..cfg.clone()
    };
    let inst = load_or_generate(&cfg, instance)?;
    let eta = cfg.eta_rule.resolve(&inst.truth);
    let (x0, _) = initial_point(&cfg, &inst)?;
    let opts = VerifyOptions {
        direction_seed: inst.seed(),
        ..VerifyOptions::default()
    };
    let report = run_suite(&inst, &x0, eta, suite, &opts)?;
    let path = match (&cfg.output_path, single) {
        (Some(p), true) => p.clone(),
        _ => cfg
            .resolved_out_dir()
            .join(format!("verify_seed{}.json", inst.seed())),
    };
    write_file(&path, &to_precise_json(&report)?)?;
    Ok(VerifySeedSummary {
        seed: inst.seed(),
        passed: report.passed(),
        report: path,
        outcomes: report
            .checks
            .iter()
            .map(|c| (c.name.clone(), c.outcome))
            .collect(),
    })
}

pub fn cmd_verify(
    cfg: &ExperimentConfig,
    instance: Option<&Path>,
    suite: Suite,
    seeds: u64,
    jobs: usize,
    out: &mut dyn Write,
) -> Result<Vec<VerifySeedSummary>> {
    if seeds == 0 {
        return Err(config_err("seeds", "must be >= 1"));
    }
    if jobs == 0 {
        return Err(config_err("jobs", "must be >= 1"));
    }
    let list: Vec<u64> = (0..seeds).map(|k| cfg.seed + k).collect();
    let single = list.len() == 1;
    let results: Vec<Result<VerifySeedSummary>> = if jobs > 1 && !single {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        pool.install(|| {
            list.par_iter()
                .map(|&s| verify_one(cfg, instance, suite, s, single))
                .collect()
        })
    } else {
        list.iter()
            .map(|&s| verify_one(cfg, instance, suite, s, single))
            .collect()
    };
    let summaries = results.into_iter().collect::<Result<Vec<_>>>()?;
    emit(out, &summaries)?;
    let failed: Vec<u64> = summaries.iter().filter(|s| !s.passed).map(|s| s.seed).collect();
    if !failed.is_empty() {
        return Err(CliError::VerificationFailed(failed));
    }
    Ok(summaries)
}

#[derive(Debug, Serialize)]
struct TraceCompareSummary {
    seed: u64,
    eta: f64,
    rho_h: f64,
    e0_norm: f64,
    implied_constant: Option<f64>,
    fidelity: symcomplete::verify::FidelityCheck,
    csv: PathBuf,
}

pub fn cmd_trace_compare(
    cfg: &ExperimentConfig,
    instance: Option<&Path>,
    iters: Option<usize>,
    out: &mut dyn Write,
) -> Result<PathBuf> {
    let inst = load_or_generate(cfg, instance)?;
    let eta = cfg.eta_rule.resolve(&inst.truth);
    let (x0, _) = initial_point(cfg, &inst)?;
    let k_max = iters.unwrap_or(cfg.max_iters);
    if k_max == 0 {
        return Err(config_err("iters", "must be >= 1"));
    }
    let cmp = compare_first_order_traces(&inst, &x0, eta, k_max)?;
    let path = cfg
        .output_path
        .clone()
        .unwrap_or_else(|| cfg.resolved_out_dir().join(format!("trace_compare_seed{}.csv", inst.seed())));
    write_file(&path, &cmp.to_csv())?;
    let defaults = VerifyOptions::default();
    let summary = TraceCompareSummary {
        seed: inst.seed(),
        eta,
        rho_h: cmp.rho_h,
        e0_norm: cmp.e0_norm,
        implied_constant: cmp.implied_constant,
        fidelity: cmp.fidelity(defaults.trace_window.0, defaults.trace_window.1, defaults.trace_log_tol),
        csv: path.clone(),
    };
    emit(out, &summary)?;
    Ok(path)
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Generate { flags } => cmd_generate(&flags.resolve()?, out).map(drop),
        Command::Run { flags, instance } => {
            cmd_run(&flags.resolve()?, instance.as_deref(), out).map(drop)
        }
        Command::Rate {
            flags,
            instance,
            matrix_free,
            dense_cap,
        } => cmd_rate(&flags.resolve()?, instance.as_deref(), matrix_free, dense_cap, out).map(drop),
        Command::Verify {
            flags,
            instance,
            suite,
            seeds,
            jobs,
        } => cmd_verify(&flags.resolve()?, instance.as_deref(), suite, seeds, jobs, out).map(drop),
        Command::TraceCompare {
            flags,
            instance,
            iters,
        } => cmd_trace_compare(&flags.resolve()?, instance.as_deref(), iters, out).map(drop),
    }
}

/// Parses `args` and runs the command, returning the process exit code.
/// Usage errors and help text go to stderr/stdout as clap prints them.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    match execute(cli, out) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"n": 8, "r": 2, "p": 0.5, "seed": 4}"#).unwrap();
        let flags = ConfigFlags {
            config: Some(path),
            r: Some(1),
            eta: Some(0.01),
            ..Default::default()
        };
        let cfg = flags.resolve().unwrap();
        assert_eq!((cfg.n, cfg.r, cfg.seed), (8, 1, 4));
        assert_eq!(cfg.p, 0.5);
        assert_eq!(cfg.eta_rule, StepSize::Absolute { eta: 0.01 });
        assert_eq!(cfg.sigma, 1e-2);
    }

    #[test]
    fn field_level_errors() {
        let flags = ConfigFlags {
            p: Some(1.5),
            ..Default::default()
        };
        let err = flags.resolve().unwrap_err();
        assert!(err.to_string().contains("`p`"), "{err}");
        assert_eq!(err.exit_code(), exit::USAGE);
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#).is_err());
        let cfg = ExperimentConfig {
            r: 30,
            ..Default::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("`r`"));
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = ExperimentConfig {
            eta_rule: StepSize::Absolute { eta: 0.25 },
            stop_tol: Some(1e-9),
            ..Default::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }
}
