//! Seeded replay of inference request streams.
//!
//! Each (SLA, policy) cell replays `requests_per_sla` requests on its own
//! generator, so cells are independent and may run in parallel without
//! changing any sampled value. The generator for a cell is
//! `ChaCha8Rng::seed_from_u64(cell_seed(seed, sla_ms, policy))`, see
//! [`cell_seed`].

mod network;
mod report;

use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::{compute_budget, BudgetRange, RequestContext};
use crate::error::SimError;
use crate::profile::{load_profiles_file, ModelProfile, ProfileStore};
use crate::selector::{fastest_select, greedy_select, select, SelectorConfig};

pub use network::{parse_trace, NetworkModel, TraceRow};
pub use report::{
    compare_pair, compare_policies, percentile, CellReport, Comparison, ComparisonRow, ReportMetadata,
    SimulationReport,
};

use network::NetworkSampler;

/// Usage-histogram key for requests served on the device.
pub const ON_DEVICE: &str = "on-device";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Policy {
    #[serde(rename = "cnnselect")]
    CnnSelect,
    #[serde(rename = "greedy")]
    Greedy,
    #[serde(rename = "fastest")]
    Fastest,
    /// Best model under the realized times; an upper bound, not a deployable policy.
    #[serde(rename = "oracle")]
    Oracle,
    /// CNNSelect that hands infeasible requests to on-device inference.
    #[serde(rename = "cnnselect+device")]
    CnnSelectDevice,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::CnnSelect => "cnnselect",
            Policy::Greedy => "greedy",
            Policy::Fastest => "fastest",
            Policy::Oracle => "oracle",
            Policy::CnnSelectDevice => "cnnselect+device",
        }
    }

    /// Stream id mixed into the cell seed. The device variant shares the
    /// cnnselect stream so the two columns differ only where the device path
    /// is taken.
    pub fn stream_id(self) -> u64 {
        match self {
            Policy::CnnSelect | Policy::CnnSelectDevice => 1,
            Policy::Greedy => 2,
            Policy::Fastest => 3,
            Policy::Oracle => 4,
        }
    }

    fn observes(self) -> bool {
        matches!(self, Policy::CnnSelect | Policy::CnnSelectDevice)
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cnnselect" => Ok(Policy::CnnSelect),
            "greedy" => Ok(Policy::Greedy),
            "fastest" => Ok(Policy::Fastest),
            "oracle" => Ok(Policy::Oracle),
            "cnnselect+device" => Ok(Policy::CnnSelectDevice),
            other => Err(format!(
                "unknown policy `{other}` (expected cnnselect, greedy, fastest, oracle)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ColdStartMode {
    AlwaysHot,
    Lru { capacity: usize },
}

impl FromStr for ColdStartMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "always-hot" | "always_hot" => Ok(ColdStartMode::AlwaysHot),
            _ => s
                .strip_prefix("lru:")
                .and_then(|c| c.parse().ok())
                .map(|capacity| ColdStartMode::Lru { capacity })
                .ok_or_else(|| format!("cold start mode `{s}`: expected always-hot or lru:N")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdPolicy {
    Fixed { ms: f64 },
    DeviceFraction { fraction: f64 },
}

impl ThresholdPolicy {
    pub fn resolve(self, device_time_ms: f64) -> f64 {
        match self {
            ThresholdPolicy::Fixed { ms } => ms,
            ThresholdPolicy::DeviceFraction { fraction } => fraction * device_time_ms,
        }
    }
}

impl FromStr for ThresholdPolicy {
    type Err = String;

    /// `30` for a fixed value, `frac:0.2` for a fraction of the device time.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(f) = s.strip_prefix("frac:") {
            return f
                .parse()
                .map(|fraction| ThresholdPolicy::DeviceFraction { fraction })
                .map_err(|e| format!("threshold `{s}`: {e}"));
        }
        s.parse()
            .map(|ms| ThresholdPolicy::Fixed { ms })
            .map_err(|e| format!("threshold `{s}`: {e}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecDistribution {
    /// Normal(μ, σ) truncated at zero.
    #[default]
    Normal,
    /// Lognormal with the same mean and standard deviation.
    Lognormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileSource {
    Path { path: PathBuf },
    Inline { profiles: Vec<ModelProfile> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub profiles: ProfileSource,
    /// Overrides every profile's observation count when set.
    pub pseudo_count: Option<u64>,
    pub network: NetworkModel,
    /// Download time as a fraction of upload time when the network model
    /// does not supply one.
    pub output_ratio: f64,
    pub sla_sweep: Vec<f64>,
    pub requests_per_sla: usize,
    pub policies: Vec<Policy>,
    pub cold_start_mode: ColdStartMode,
    pub exec_distribution: ExecDistribution,
    pub device_time_ms: f64,
    pub threshold: ThresholdPolicy,
    /// Model whose accuracy is credited to on-device inference; the fastest
    /// model when unset.
    pub device_model: Option<String>,
    pub selector: SelectorConfig,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            profiles: ProfileSource::Inline {
                profiles: crate::fixtures::measured_models(),
            },
            pseudo_count: None,
            network: NetworkModel::default(),
            output_ratio: 0.1,
            sla_sweep: vec![200.0],
            requests_per_sla: 10_000,
            policies: vec![Policy::CnnSelect, Policy::Greedy, Policy::Fastest],
            cold_start_mode: ColdStartMode::AlwaysHot,
            exec_distribution: ExecDistribution::Normal,
            device_time_ms: 150.0,
            threshold: ThresholdPolicy::DeviceFraction { fraction: 0.2 },
            device_model: None,
            selector: SelectorConfig::default(),
            seed: 0,
        }
    }
}

impl SimulationConfig {
    pub fn with_profiles(mut self, profiles: Vec<ModelProfile>) -> Self {
        self.profiles = ProfileSource::Inline { profiles };
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.requests_per_sla == 0 {
            return Err(SimError::Config("requests_per_sla must be positive".into()));
        }
        if self.sla_sweep.is_empty() {
            return Err(SimError::Config("sla sweep is empty".into()));
        }
        if let Some(bad) = self.sla_sweep.iter().find(|s| !(**s > 0.0)) {
            return Err(SimError::Config(format!("sla values must be positive, got {bad}")));
        }
        if self.policies.is_empty() {
            return Err(SimError::Config("no policies selected".into()));
        }
        if !(self.output_ratio >= 0.0) {
            return Err(SimError::Config("output_ratio must be non-negative".into()));
        }
        if !(self.device_time_ms > 0.0) {
            return Err(SimError::Config("device_time_ms must be positive".into()));
        }
        let threshold = self.threshold.resolve(self.device_time_ms);
        if !(threshold.is_finite() && threshold >= 0.0 && threshold <= self.device_time_ms) {
            return Err(SimError::Config(format!(
                "threshold {threshold} ms must be finite and within [0, device_time_ms]"
            )));
        }
        if let ColdStartMode::Lru { capacity: 0 } = self.cold_start_mode {
            return Err(SimError::Config("lru capacity must be positive".into()));
        }
        self.selector.validate()?;
        Ok(())
    }

    fn resolve_profiles(&self) -> Result<Vec<ModelProfile>, SimError> {
        let mut profiles = match &self.profiles {
            ProfileSource::Path { path } => load_profiles_file(path)
                .map_err(|e| SimError::Config(format!("profiles {}: {e}", path.display())))?,
            ProfileSource::Inline { profiles } => profiles.clone(),
        };
        if profiles.is_empty() {
            return Err(SimError::Config("profile set is empty".into()));
        }
        if let Some(n) = self.pseudo_count {
            for p in &mut profiles {
                p.observation_count = n;
                if n < 2 {
                    p.std_ms = 0.0;
                }
            }
        }
        Ok(profiles)
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the generator owned by one (SLA, policy) cell:
/// `mix(mix(mix(seed) ^ sla_ms.to_bits()) ^ policy.stream_id())`.
pub fn cell_seed(seed: u64, sla_ms: f64, policy: Policy) -> u64 {
    mix(mix(mix(seed) ^ sla_ms.to_bits()) ^ policy.stream_id())
}

/// One replayed request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestRecord {
    pub index: usize,
    pub arrival_ms: f64,
    pub t_input_ms: f64,
    pub t_output_ms: f64,
    pub range: BudgetRange,
    /// Model name, or [`ON_DEVICE`].
    pub model: String,
    pub fallback: bool,
    pub cold: bool,
    pub exec_ms: f64,
    pub end_to_end_ms: f64,
    pub accuracy: f64,
    pub missed: bool,
}

/// Residency of models in server memory for the LRU cold-start mode.
#[derive(Debug, Clone)]
struct Residency {
    capacity: Option<usize>,
    order: VecDeque<usize>,
}

impl Residency {
    fn new(mode: ColdStartMode) -> Self {
        Self {
            capacity: match mode {
                ColdStartMode::AlwaysHot => None,
                ColdStartMode::Lru { capacity } => Some(capacity),
            },
            order: VecDeque::new(),
        }
    }

    fn is_hot(&self, model: usize) -> bool {
        self.capacity.is_none() || self.order.contains(&model)
    }

    /// Mark `model` as used; returns the evicted model, if any.
    fn touch(&mut self, model: usize) -> Option<usize> {
        let capacity = self.capacity?;
        if let Some(pos) = self.order.iter().position(|&m| m == model) {
            self.order.remove(pos);
        }
        self.order.push_front(model);
        if self.order.len() > capacity {
            self.order.pop_back()
        } else {
            None
        }
    }
}

/// Draw an execution time; always strictly positive.
fn sample_exec<R: Rng + ?Sized>(mean: f64, std: f64, dist: ExecDistribution, rng: &mut R) -> f64 {
    if std <= 0.0 {
        return mean.max(f64::MIN_POSITIVE);
    }
    match dist {
        ExecDistribution::Normal => {
            let normal = Normal::new(mean, std).expect("finite parameters");
            for _ in 0..64 {
                let x = normal.sample(rng);
                if x > 0.0 {
                    return x;
                }
            }
            mean.max(f64::MIN_POSITIVE)
        }
        ExecDistribution::Lognormal => {
            let sigma2 = (1.0 + (std / mean).powi(2)).ln();
            LogNormal::new(mean.ln() - sigma2 / 2.0, sigma2.sqrt())
                .expect("finite parameters")
                .sample(rng)
        }
    }
}

struct Cell<'a> {
    cfg: &'a SimulationConfig,
    truth: &'a [ModelProfile],
    network: &'a NetworkSampler,
    device_accuracy: f64,
}

impl Cell<'_> {
    fn exec_for<R: Rng + ?Sized>(&self, model: usize, cold: bool, rng: &mut R) -> f64 {
        let p = &self.truth[model];
        let (mean, std) = match (cold, p.cold_start_mean_ms) {
            (true, Some(mean)) => (mean, p.cold_start_std_ms.unwrap_or(0.0)),
            _ => (p.mean_ms, p.std_ms),
        };
        sample_exec(mean, std, self.cfg.exec_distribution, rng)
    }

    fn run(&self, sla_ms: f64, policy: Policy) -> Result<Vec<RequestRecord>, SimError> {
        let cfg = self.cfg;
        let metric = cfg.selector.accuracy_metric;
        let index_of: BTreeMap<&str, usize> =
            self.truth.iter().enumerate().map(|(i, p)| (p.name.as_str(), i)).collect();
        let store = ProfileStore::from_profiles(self.truth.to_vec())?;
        let mut residency = Residency::new(cfg.cold_start_mode);
        let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(cfg.seed, sla_ms, policy));
        let threshold = cfg.threshold.resolve(cfg.device_time_ms);
        let mut clock = 0.0;
        let mut records = Vec::with_capacity(cfg.requests_per_sla);

        for index in 0..cfg.requests_per_sla {
            let (t_input_ms, t_output) = self.network.sample(&mut rng, index);
            let t_output_ms = t_output.unwrap_or(cfg.output_ratio * t_input_ms);
            let ctx = RequestContext::new(sla_ms, clock, t_input_ms, cfg.device_time_ms, threshold)?;
            let range = compute_budget(&ctx);
            let mut fallback = false;

            let chosen: Option<usize> = match policy {
                Policy::CnnSelect | Policy::CnnSelectDevice => {
                    let snapshot = store.snapshot();
                    let decision = select(&snapshot, &range, &cfg.selector, &mut rng)?;
                    fallback = decision.fallback;
                    let picked = &snapshot[snapshot
                        .iter()
                        .position(|p| p.name == decision.chosen)
                        .expect("chosen model is in the snapshot")];
                    let projected = picked.mean_ms + picked.std_ms;
                    let device = policy == Policy::CnnSelectDevice
                        && !(projected < range.upper_ms)
                        && cfg.device_time_ms < 2.0 * t_input_ms + projected;
                    (!device).then(|| index_of[decision.chosen.as_str()])
                }
                Policy::Greedy => {
                    // Greedy budgets against the raw SLA, blind to network time.
                    let m = greedy_select(self.truth, sla_ms, metric)?;
                    Some(index_of[m.name.as_str()])
                }
                Policy::Fastest => Some(index_of[fastest_select(self.truth)?.name.as_str()]),
                Policy::Oracle => None,
            };

            let (model, exec_ms, cold) = match (policy, chosen) {
                (Policy::Oracle, _) => {
                    let realized: Vec<(usize, bool, f64)> = (0..self.truth.len())
                        .map(|m| {
                            let cold = !residency.is_hot(m);
                            (m, cold, self.exec_for(m, cold, &mut rng))
                        })
                        .collect();
                    let fits = |exec: f64| t_input_ms + exec + t_output_ms <= sla_ms;
                    let best = realized
                        .iter()
                        .filter(|(_, _, e)| fits(*e))
                        .max_by(|a, b| {
                            metric
                                .of(&self.truth[a.0])
                                .total_cmp(&metric.of(&self.truth[b.0]))
                                .then_with(|| b.2.total_cmp(&a.2))
                        })
                        .or_else(|| realized.iter().min_by(|a, b| a.2.total_cmp(&b.2)))
                        .copied()
                        .expect("at least one model");
                    (Some(best.0), best.2, best.1)
                }
                (_, Some(m)) => {
                    let cold = !residency.is_hot(m);
                    (Some(m), self.exec_for(m, cold, &mut rng), cold)
                }
                (_, None) => (None, cfg.device_time_ms, false),
            };

            let (name, accuracy, end_to_end_ms) = match model {
                Some(m) => {
                    if let Some(evicted) = residency.touch(m) {
                        store.set_loaded(&self.truth[evicted].name, false)?;
                    }
                    store.set_loaded(&self.truth[m].name, true)?;
                    if policy.observes() && !cold {
                        store.observe(&self.truth[m].name, exec_ms)?;
                    }
                    (
                        self.truth[m].name.clone(),
                        metric.of(&self.truth[m]),
                        t_input_ms + exec_ms + t_output_ms,
                    )
                }
                None => (ON_DEVICE.to_string(), self.device_accuracy, cfg.device_time_ms),
            };

            records.push(RequestRecord {
                index,
                arrival_ms: clock,
                t_input_ms,
                t_output_ms,
                range,
                model: name,
                fallback,
                cold,
                exec_ms,
                end_to_end_ms,
                accuracy,
                missed: end_to_end_ms > sla_ms,
            });
            clock += end_to_end_ms;
        }
        Ok(records)
    }
}

/// Aggregate replayed requests into a report cell.
pub fn summarize(sla_ms: f64, policy: &str, records: &[RequestRecord]) -> CellReport {
    let n = records.len();
    let misses = records.iter().filter(|r| r.missed).count();
    let mut latencies: Vec<f64> = records.iter().map(|r| r.end_to_end_ms).collect();
    latencies.sort_by(f64::total_cmp);
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(r.model.clone()).or_default() += 1;
    }
    CellReport {
        sla_ms,
        policy: policy.to_string(),
        requests: n,
        misses,
        miss_rate: misses as f64 / n as f64,
        accuracy: records.iter().map(|r| r.accuracy).sum::<f64>() / n as f64,
        lat_mean: latencies.iter().sum::<f64>() / n as f64,
        lat_p25: percentile(&latencies, 0.25),
        lat_p50: percentile(&latencies, 0.50),
        lat_p75: percentile(&latencies, 0.75),
        lat_p99: percentile(&latencies, 0.99),
        usage: counts
            .into_iter()
            .map(|(m, c)| (m, c as f64 / n as f64))
            .collect(),
    }
}

struct Prepared {
    truth: Vec<ModelProfile>,
    network: NetworkSampler,
    device_accuracy: f64,
}

fn prepare(cfg: &SimulationConfig) -> Result<Prepared, SimError> {
    cfg.validate()?;
    let truth = cfg.resolve_profiles()?;
    let network = NetworkSampler::resolve(&cfg.network)?;
    let metric = cfg.selector.accuracy_metric;
    let device_accuracy = match &cfg.device_model {
        Some(name) => truth
            .iter()
            .find(|p| &p.name == name)
            .map(|p| metric.of(p))
            .ok_or_else(|| SimError::Config(format!("device model `{name}` not in profiles")))?,
        None => metric.of(fastest_select(&truth)?),
    };
    Ok(Prepared {
        truth,
        network,
        device_accuracy,
    })
}

/// Per-request records of one cell, for inspection and offline checks.
pub fn simulate_cell(cfg: &SimulationConfig, sla_ms: f64, policy: Policy) -> Result<Vec<RequestRecord>, SimError> {
    let prepared = prepare(cfg)?;
    Cell {
        cfg,
        truth: &prepared.truth,
        network: &prepared.network,
        device_accuracy: prepared.device_accuracy,
    }
    .run(sla_ms, policy)
}

fn run_policies(cfg: &SimulationConfig, policies: &[Policy]) -> Result<SimulationReport, SimError> {
    let prepared = prepare(cfg)?;
    let cell = Cell {
        cfg,
        truth: &prepared.truth,
        network: &prepared.network,
        device_accuracy: prepared.device_accuracy,
    };
    let jobs: Vec<(f64, Policy)> = cfg
        .sla_sweep
        .iter()
        .flat_map(|&sla| policies.iter().map(move |&p| (sla, p)))
        .collect();
    let per_sla = jobs
        .par_iter()
        .map(|&(sla, policy)| {
            cell.run(sla, policy)
                .map(|records| summarize(sla, policy.name(), &records))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SimulationReport {
        per_sla,
        metadata: ReportMetadata {
            config: serde_json::to_value(cfg)?,
            seed: cfg.seed,
            version: concat!("cnnselect-", env!("CARGO_PKG_VERSION")).to_string(),
        },
    })
}

/// Replay every configured policy at every SLA point.
pub fn run_simulation(cfg: &SimulationConfig) -> Result<SimulationReport, SimError> {
    run_policies(cfg, &cfg.policies)
}

/// As [`run_simulation`], plus a `cnnselect+device` column in which requests
/// whose chosen model cannot finish inside the soft limit, and for which the
/// device is faster than the projected cloud round trip, run on the device.
pub fn simulate_device_fallback(cfg: &SimulationConfig) -> Result<SimulationReport, SimError> {
    let mut policies = cfg.policies.clone();
    if !policies.contains(&Policy::CnnSelectDevice) {
        policies.push(Policy::CnnSelectDevice);
    }
    run_policies(cfg, &policies)
}

/// `count` SLA points from `min` in steps of `step`, never exceeding `max`
/// (a step wider than the range yields just `min`).
pub fn sla_range(min: f64, max: f64, step: f64) -> Result<Vec<f64>, SimError> {
    if !(min > 0.0 && max >= min && step > 0.0) {
        return Err(SimError::Config(format!(
            "sla range needs 0 < min <= max and step > 0, got {min}..{max} step {step}"
        )));
    }
    let count = ((max - min) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| min + step * i as f64).collect())
}
