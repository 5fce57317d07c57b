//! `cnnselect` command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid usage.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cnnselect_core::budget::NetworkProfile;
use cnnselect_core::profile::{
    load_profiles, load_profiles_file, profiles_from_csv, profiles_to_csv, save_profiles, validate_profiles,
    ModelProfile, ProfileStore,
};
use cnnselect_core::selector::{AccuracyMetric, SelectorConfig};
use cnnselect_core::sim::{
    compare_pair, compare_policies, run_simulation, simulate_device_fallback, sla_range, ColdStartMode,
    ExecDistribution, NetworkModel, Policy, ProfileSource, SimulationConfig, SimulationReport, ThresholdPolicy,
};
use cnnselect_gateway::{serve, Gateway, GatewayConfig, MockBackend};

#[derive(Debug, Parser)]
#[command(name = "cnnselect", version, about = "SLA-aware CNN model selection: simulate, compare, serve")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replay request streams at the given SLA targets.
    Simulate(SimulateArgs),
    /// Replay request streams over an evenly spaced SLA range.
    Sweep(SweepArgs),
    /// Compare policies in a JSON report.
    Compare(CompareArgs),
    /// Run the inference gateway.
    Serve(ServeArgs),
    /// Validate, convert or display profile files.
    #[command(subcommand)]
    Profiles(ProfilesCommand),
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be positive, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn non_negative_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 => Ok(v),
        Ok(v) => Err(format!("must be non-negative, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExecDist {
    Normal,
    Lognormal,
}

#[derive(Debug, Args)]
pub struct SimFlags {
    /// Profile file (JSON); the bundled measured profiles when omitted.
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    /// Network model: fixed:MS, normal:MEAN,STD, lognormal:MEAN,CV, trace:FILE, profile:FILE,BYTES.
    #[arg(long, default_value = "lognormal:63,0.3")]
    pub network: NetworkModel,
    /// Requests replayed per SLA point and policy.
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub requests: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated subset of cnnselect, greedy, fastest, oracle.
    #[arg(long, value_delimiter = ',', default_value = "cnnselect,greedy,fastest")]
    pub policies: Vec<Policy>,
    /// always-hot or lru:CAPACITY.
    #[arg(long, default_value = "always-hot")]
    pub cold_start: ColdStartMode,
    #[arg(long, value_enum, default_value = "normal")]
    pub exec_dist: ExecDist,
    /// Expected on-device inference time, ms.
    #[arg(long, default_value_t = 150.0, value_parser = positive_f64)]
    pub device_time: f64,
    /// Profile-uncertainty threshold: MS or frac:F (fraction of device time).
    #[arg(long, default_value = "frac:0.2")]
    pub threshold: ThresholdPolicy,
    /// Model whose accuracy is credited to on-device runs (default: fastest).
    #[arg(long)]
    pub device_model: Option<String>,
    /// Add a cnnselect+device column that may run requests on the device.
    #[arg(long)]
    pub device_fallback: bool,
    #[arg(long, default_value = "top1")]
    pub metric: AccuracyMetric,
    /// Floor on the utility denominator, ms.
    #[arg(long, default_value_t = 0.1, value_parser = positive_f64)]
    pub epsilon: f64,
    /// Leave the base model out of the eligible set unless it lies in the window.
    #[arg(long)]
    pub exclude_base: bool,
    /// Download time as a fraction of upload time.
    #[arg(long, default_value_t = 0.1, value_parser = non_negative_f64)]
    pub output_ratio: f64,
    /// Override every profile's observation count.
    #[arg(long)]
    pub pseudo_count: Option<u64>,
    /// Report CSV path.
    #[arg(long, default_value = "report.csv")]
    pub out: PathBuf,
    /// Model-usage CSV path (default: usage.csv next to --out).
    #[arg(long)]
    pub usage_out: Option<PathBuf>,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Skip the summary table on stdout.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// SLA target in ms; repeat for several points.
    #[arg(long = "sla", default_value = "200", value_parser = positive_f64)]
    pub sla: Vec<f64>,
    #[command(flatten)]
    pub sim: SimFlags,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value_t = 25.0, value_parser = positive_f64)]
    pub sla_min: f64,
    #[arg(long, default_value_t = 500.0, value_parser = positive_f64)]
    pub sla_max: f64,
    #[arg(long, default_value_t = 25.0, value_parser = positive_f64)]
    pub sla_step: f64,
    #[command(flatten)]
    pub sim: SimFlags,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// JSON report written by `simulate --json` or `sweep --json`.
    #[arg(long)]
    pub report: PathBuf,
    /// Candidate policy (default: first in the report).
    #[arg(long)]
    pub candidate: Option<String>,
    /// Baseline policy (default: every other policy).
    #[arg(long)]
    pub baseline: Option<String>,
    /// Write the comparison CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "CNNSELECT_HOST", default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "CNNSELECT_PORT", default_value_t = 8080)]
    pub port: u16,
    /// Profile file; the bundled measured profiles when omitted.
    #[arg(long, env = "CNNSELECT_PROFILES")]
    pub profiles: Option<PathBuf>,
    #[arg(long, env = "CNNSELECT_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Seed per-request generators from (seed, request counter).
    #[arg(long)]
    pub test_mode: bool,
    /// Do not feed realized execution times back into the profiles.
    #[arg(long)]
    pub freeze_profiles: bool,
    /// Reject PUT of unknown models with 409 instead of creating them.
    #[arg(long)]
    pub no_create: bool,
    /// Wall-clock seconds slept per simulated execution second.
    #[arg(long, default_value_t = 1.0, value_parser = non_negative_f64)]
    pub time_scale: f64,
    #[arg(long, default_value_t = 150.0, value_parser = positive_f64)]
    pub device_time: f64,
    /// Default threshold when a request carries none, ms.
    #[arg(long, default_value_t = 30.0, value_parser = non_negative_f64)]
    pub threshold: f64,
    /// Network profile JSON used before any client-measured upload time arrives.
    #[arg(long)]
    pub network_profile: Option<PathBuf>,
    #[arg(long, default_value = "top1")]
    pub metric: AccuracyMetric,
}

#[derive(Debug, Subcommand)]
pub enum ProfilesCommand {
    /// Check a profile file against the schema; lists every violation.
    Validate { file: PathBuf },
    /// Convert between JSON and CSV, chosen by file extension.
    Convert { input: PathBuf, output: PathBuf },
    /// Print profiles as a table.
    Show { file: PathBuf },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Sweep(args) => sweep(args),
        Command::Compare(args) => compare(args),
        Command::Serve(args) => serve_cmd(args),
        Command::Profiles(cmd) => profiles(cmd),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            2
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn sim_config(flags: &SimFlags, sla_sweep: Vec<f64>) -> SimulationConfig {
    let profiles = match &flags.profiles {
        Some(path) => ProfileSource::Path { path: path.clone() },
        None => ProfileSource::Inline {
            profiles: cnnselect_core::fixtures::measured_models(),
        },
    };
    SimulationConfig {
        profiles,
        pseudo_count: flags.pseudo_count,
        network: flags.network.clone(),
        output_ratio: flags.output_ratio,
        sla_sweep,
        requests_per_sla: flags.requests as usize,
        policies: flags.policies.clone(),
        cold_start_mode: flags.cold_start,
        exec_distribution: match flags.exec_dist {
            ExecDist::Normal => ExecDistribution::Normal,
            ExecDist::Lognormal => ExecDistribution::Lognormal,
        },
        device_time_ms: flags.device_time,
        threshold: flags.threshold,
        device_model: flags.device_model.clone(),
        selector: SelectorConfig {
            accuracy_metric: flags.metric,
            include_base_in_exploration: !flags.exclude_base,
            denominator_epsilon_ms: flags.epsilon,
            rng_seed: flags.seed,
        },
        seed: flags.seed,
    }
}

fn check_usage(flags: &SimFlags) -> Outcome {
    let threshold = flags.threshold.resolve(flags.device_time);
    if !(threshold >= 0.0 && threshold <= flags.device_time) {
        return Err(Failure::Usage(format!(
            "--threshold resolves to {threshold} ms, outside [0, --device-time = {}]",
            flags.device_time
        )));
    }
    if flags.policies.is_empty() {
        return Err(Failure::Usage("--policies must name at least one policy".into()));
    }
    if flags.cold_start == (ColdStartMode::Lru { capacity: 0 }) {
        return Err(Failure::Usage("--cold-start lru capacity must be positive".into()));
    }
    Ok(())
}

fn run_and_write(flags: &SimFlags, cfg: SimulationConfig) -> Outcome {
    let report = if flags.device_fallback {
        simulate_device_fallback(&cfg)?
    } else {
        run_simulation(&cfg)?
    };
    write_report(flags, &report)?;
    if !flags.quiet {
        print_summary(&report);
    }
    Ok(())
}

fn usage_path(flags: &SimFlags) -> PathBuf {
    flags.usage_out.clone().unwrap_or_else(|| {
        flags
            .out
            .parent()
            .unwrap_or_else(|| Path::new(""))
            .join("usage.csv")
    })
}

fn write_report(flags: &SimFlags, report: &SimulationReport) -> Outcome {
    std::fs::write(&flags.out, report.to_csv_string())
        .map_err(|e| Failure::Runtime(format!("{}: {e}", flags.out.display())))?;
    let usage = usage_path(flags);
    std::fs::write(&usage, report.to_usage_csv_string())
        .map_err(|e| Failure::Runtime(format!("{}: {e}", usage.display())))?;
    if let Some(path) = &flags.json {
        std::fs::write(path, report.to_json_string())
            .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn print_summary(report: &SimulationReport) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "{:>8}  {:<18} {:>7} {:>7} {:>9} {:>9} {:>9}  {}",
        "sla_ms", "policy", "miss%", "acc%", "lat_mean", "lat_p50", "lat_p99", "modal model"
    );
    for c in &report.per_sla {
        let _ = writeln!(
            out,
            "{:>8}  {:<18} {:>7.2} {:>7.2} {:>9.2} {:>9.2} {:>9.2}  {}",
            c.sla_ms,
            c.policy,
            c.miss_rate * 100.0,
            c.accuracy * 100.0,
            c.lat_mean,
            c.lat_p50,
            c.lat_p99,
            c.modal_model().unwrap_or("-")
        );
    }
}

fn simulate(args: SimulateArgs) -> Outcome {
    check_usage(&args.sim)?;
    let cfg = sim_config(&args.sim, args.sla.clone());
    run_and_write(&args.sim, cfg)
}

fn sweep(args: SweepArgs) -> Outcome {
    check_usage(&args.sim)?;
    if args.sla_max < args.sla_min {
        return Err(Failure::Usage("--sla-max must not be below --sla-min".into()));
    }
    let slas = sla_range(args.sla_min, args.sla_max, args.sla_step).map_err(|e| Failure::Usage(e.to_string()))?;
    let cfg = sim_config(&args.sim, slas);
    run_and_write(&args.sim, cfg)
}

fn compare(args: CompareArgs) -> Outcome {
    let text = std::fs::read_to_string(&args.report)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", args.report.display())))?;
    let report = SimulationReport::from_json_str(&text)?;
    let comparisons = match (&args.candidate, &args.baseline) {
        (None, None) => compare_policies(&report)?,
        (candidate, baseline) => {
            let policies = report.policies();
            let candidate = candidate.clone().unwrap_or_else(|| policies[0].to_string());
            let baselines: Vec<String> = match baseline {
                Some(b) => vec![b.clone()],
                None => policies
                    .iter()
                    .filter(|p| **p != candidate)
                    .map(|p| p.to_string())
                    .collect(),
            };
            if baselines.is_empty() {
                return Err(Failure::Runtime(
                    cnnselect_core::SimError::InsufficientPolicies(policies.len()).to_string(),
                ));
            }
            baselines
                .iter()
                .map(|b| compare_pair(&report, &candidate, b))
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    let mut buf = Vec::new();
    for (i, c) in comparisons.iter().enumerate() {
        c.write_csv(&mut buf, i == 0)?;
    }
    match &args.out {
        Some(path) => std::fs::write(path, &buf).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?,
        None => std::io::stdout().write_all(&buf)?,
    }
    Ok(())
}

fn read_profiles(path: &Option<PathBuf>) -> Result<Vec<ModelProfile>, Failure> {
    match path {
        Some(p) => load_profiles_file(p).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display()))),
        None => Ok(cnnselect_core::fixtures::measured_models()),
    }
}

fn serve_cmd(args: ServeArgs) -> Outcome {
    let store = Arc::new(ProfileStore::from_profiles(read_profiles(&args.profiles)?)?);
    let mut config = GatewayConfig {
        seed: args.seed,
        test_mode: args.test_mode,
        freeze_profiles: args.freeze_profiles,
        allow_create: !args.no_create,
        device_time_ms: args.device_time,
        default_threshold_ms: args.threshold,
        selector: SelectorConfig {
            accuracy_metric: args.metric,
            rng_seed: args.seed,
            ..Default::default()
        },
        ..Default::default()
    };
    if args.threshold > args.device_time {
        return Err(Failure::Usage("--threshold must not exceed --device-time".into()));
    }
    if let Some(path) = &args.network_profile {
        let text = std::fs::read_to_string(path)?;
        config.network = NetworkProfile::from_json(&text)?;
    }
    let gateway = Arc::new(Gateway::new(config, store, MockBackend { time_scale: args.time_scale }));
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port)).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        serve(listener, gateway, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })?;
    Ok(())
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn profiles(cmd: ProfilesCommand) -> Outcome {
    match cmd {
        ProfilesCommand::Validate { file } => {
            let text = std::fs::read_to_string(&file)
                .map_err(|e| Failure::Runtime(format!("{}: {e}", file.display())))?;
            let violations = if is_csv(&file) {
                match profiles_from_csv(&text) {
                    Ok(_) => Vec::new(),
                    Err(e) => vec![e.to_string()],
                }
            } else {
                match validate_profiles(&text) {
                    Ok(v) => v.iter().map(ToString::to_string).collect(),
                    Err(e) => vec![e.to_string()],
                }
            };
            if violations.is_empty() {
                println!("{}: ok", file.display());
                Ok(())
            } else {
                for v in &violations {
                    eprintln!("{}: {v}", file.display());
                }
                Err(Failure::Runtime(format!("{} violation(s)", violations.len())))
            }
        }
        ProfilesCommand::Convert { input, output } => {
            let text = std::fs::read_to_string(&input)
                .map_err(|e| Failure::Runtime(format!("{}: {e}", input.display())))?;
            let profiles = if is_csv(&input) {
                profiles_from_csv(&text)?
            } else {
                load_profiles(&text)?
            };
            let rendered = if is_csv(&output) {
                profiles_to_csv(&profiles)?
            } else {
                save_profiles(&profiles)
            };
            std::fs::write(&output, rendered)
                .map_err(|e| Failure::Runtime(format!("{}: {e}", output.display())))?;
            Ok(())
        }
        ProfilesCommand::Show { file } => {
            let text = std::fs::read_to_string(&file)
                .map_err(|e| Failure::Runtime(format!("{}: {e}", file.display())))?;
            let profiles = if is_csv(&file) {
                profiles_from_csv(&text)?
            } else {
                load_profiles(&text)?
            };
            let fmt_opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
            let mut out = std::io::stdout().lock();
            let _ = writeln!(
                out,
                "{:<20} {:>6} {:>6} {:>9} {:>7} {:>10} {:>8} {:>7}",
                "name", "top1%", "top5%", "mean_ms", "std_ms", "cold_ms", "cold_std", "count"
            );
            for p in &profiles {
                let _ = writeln!(
                    out,
                    "{:<20} {:>6.1} {:>6.1} {:>9.2} {:>7.2} {:>10} {:>8} {:>7}",
                    p.name,
                    p.accuracy_top1 * 100.0,
                    p.accuracy_top5 * 100.0,
                    p.mean_ms,
                    p.std_ms,
                    fmt_opt(p.cold_start_mean_ms),
                    fmt_opt(p.cold_start_std_ms),
                    p.observation_count
                );
            }
            Ok(())
        }
    }
}
