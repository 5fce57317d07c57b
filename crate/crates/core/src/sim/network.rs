use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::budget::{JitterModel, NetworkProfile};
use crate::error::SimError;

/// Source of per-request upload (and optionally download) times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetworkModel {
    Fixed { ms: f64 },
    Normal { mean_ms: f64, std_ms: f64 },
    /// Parameterized by its arithmetic mean and coefficient of variation.
    Lognormal { mean_ms: f64, cv: f64 },
    /// CSV `t_input_ms[,t_output_ms]`, replayed cyclically.
    Trace { path: PathBuf },
    /// Network profile file evaluated at a fixed payload size.
    Profile { path: PathBuf, payload_bytes: u64 },
}

impl Default for NetworkModel {
    fn default() -> Self {
        NetworkModel::Lognormal {
            mean_ms: 63.0,
            cv: 0.3,
        }
    }
}

impl FromStr for NetworkModel {
    type Err = String;

    /// `fixed:63`, `normal:63,10`, `lognormal:63,0.3`, `trace:FILE`,
    /// `profile:FILE,BYTES`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| format!("network `{s}`: expected KIND:PARAMS"))?;
        let nums = |n: usize| -> Result<Vec<f64>, String> {
            let v = rest
                .split(',')
                .map(|p| p.trim().parse::<f64>().map_err(|e| format!("network `{s}`: {e}")))
                .collect::<Result<Vec<_>, _>>()?;
            if v.len() != n {
                return Err(format!("network `{s}`: expected {n} numeric parameter(s)"));
            }
            Ok(v)
        };
        match kind {
            "fixed" => Ok(NetworkModel::Fixed { ms: nums(1)?[0] }),
            "normal" => {
                let v = nums(2)?;
                Ok(NetworkModel::Normal {
                    mean_ms: v[0],
                    std_ms: v[1],
                })
            }
            "lognormal" => {
                let v = nums(2)?;
                Ok(NetworkModel::Lognormal {
                    mean_ms: v[0],
                    cv: v[1],
                })
            }
            "trace" => Ok(NetworkModel::Trace { path: rest.into() }),
            "profile" => {
                let (path, bytes) = rest
                    .rsplit_once(',')
                    .ok_or_else(|| format!("network `{s}`: expected profile:FILE,BYTES"))?;
                let payload_bytes = bytes
                    .trim()
                    .parse()
                    .map_err(|e| format!("network `{s}`: {e}"))?;
                Ok(NetworkModel::Profile {
                    path: path.into(),
                    payload_bytes,
                })
            }
            other => Err(format!("unknown network kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t_input_ms: f64,
    pub t_output_ms: Option<f64>,
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRow>, SimError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let first = record.get(0).unwrap_or("");
        let t_input_ms = match first.parse::<f64>() {
            Ok(v) => v,
            Err(_) if i == 0 => continue, // header
            Err(e) => return Err(SimError::Config(format!("trace row {}: {e}", i + 1))),
        };
        let t_output_ms = match record.get(1).filter(|s| !s.is_empty()) {
            Some(s) => Some(
                s.parse::<f64>()
                    .map_err(|e| SimError::Config(format!("trace row {}: {e}", i + 1)))?,
            ),
            None => None,
        };
        if !(t_input_ms >= 0.0) || t_output_ms.is_some_and(|v| !(v >= 0.0)) {
            return Err(SimError::Config(format!("trace row {}: negative time", i + 1)));
        }
        rows.push(TraceRow {
            t_input_ms,
            t_output_ms,
        });
    }
    if rows.is_empty() {
        return Err(SimError::Config("trace has no rows".into()));
    }
    Ok(rows)
}

/// Resolved network model, ready to draw from.
#[derive(Debug, Clone)]
pub(crate) enum NetworkSampler {
    Fixed(f64),
    Normal(Normal<f64>),
    Lognormal(LogNormal<f64>),
    Trace(Vec<TraceRow>),
}

fn lognormal_from_mean_cv(mean: f64, cv: f64) -> Result<LogNormal<f64>, SimError> {
    if !(mean > 0.0 && cv >= 0.0) {
        return Err(SimError::Config(format!(
            "lognormal network needs mean > 0 and cv >= 0, got mean {mean}, cv {cv}"
        )));
    }
    let sigma2 = (1.0 + cv * cv).ln();
    LogNormal::new(mean.ln() - sigma2 / 2.0, sigma2.sqrt())
        .map_err(|e| SimError::Config(format!("lognormal network: {e}")))
}

impl NetworkSampler {
    pub(crate) fn resolve(model: &NetworkModel) -> Result<Self, SimError> {
        match model {
            NetworkModel::Fixed { ms } if *ms >= 0.0 => Ok(Self::Fixed(*ms)),
            NetworkModel::Fixed { ms } => Err(SimError::Config(format!("fixed network time {ms} < 0"))),
            NetworkModel::Normal { mean_ms, std_ms } => Normal::new(*mean_ms, *std_ms)
                .map(Self::Normal)
                .map_err(|e| SimError::Config(format!("normal network: {e}"))),
            NetworkModel::Lognormal { mean_ms, cv } => {
                lognormal_from_mean_cv(*mean_ms, *cv).map(Self::Lognormal)
            }
            NetworkModel::Trace { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| SimError::Config(format!("trace {}: {e}", path.display())))?;
                parse_trace(&text).map(Self::Trace)
            }
            NetworkModel::Profile {
                path,
                payload_bytes,
            } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| SimError::Config(format!("network profile {}: {e}", path.display())))?;
                let profile = NetworkProfile::from_json(&text)?;
                let mean = profile.mean_transfer_ms(*payload_bytes);
                match profile.jitter_model {
                    JitterModel::None => Ok(Self::Fixed(mean)),
                    JitterModel::Normal { std_ms } => Normal::new(mean, std_ms)
                        .map(Self::Normal)
                        .map_err(|e| SimError::Config(format!("normal jitter: {e}"))),
                    JitterModel::Lognormal { cv } => {
                        lognormal_from_mean_cv(mean, cv).map(Self::Lognormal)
                    }
                }
            }
        }
    }

    /// Upload time and, when the source provides one, download time.
    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R, index: usize) -> (f64, Option<f64>) {
        match self {
            Self::Fixed(ms) => (*ms, None),
            Self::Normal(d) => (d.sample(rng).max(0.0), None),
            Self::Lognormal(d) => (d.sample(rng), None),
            Self::Trace(rows) => {
                let row = rows[index % rows.len()];
                (row.t_input_ms, row.t_output_ms)
            }
        }
    }
}
