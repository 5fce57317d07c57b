//! Time budgets for a single request and network transfer estimation.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::BudgetError;

/// Timing inputs of one inference request, all in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestContext {
    pub sla_ms: f64,
    pub arrival_ms: f64,
    pub input_transfer_ms: f64,
    pub device_time_ms: f64,
    pub threshold_ms: f64,
}

impl RequestContext {
    pub fn new(
        sla_ms: f64,
        arrival_ms: f64,
        input_transfer_ms: f64,
        device_time_ms: f64,
        threshold_ms: f64,
    ) -> Result<Self, BudgetError> {
        let ctx = Self {
            sla_ms,
            arrival_ms,
            input_transfer_ms,
            device_time_ms,
            threshold_ms,
        };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn validate(&self) -> Result<(), BudgetError> {
        let bad = |field, message: String| Err(BudgetError::InvalidContext { field, message });
        if !(self.sla_ms > 0.0) {
            return bad("sla_ms", format!("must be positive, got {}", self.sla_ms));
        }
        if !(self.input_transfer_ms >= 0.0) {
            return bad(
                "input_transfer_ms",
                format!("must be non-negative, got {}", self.input_transfer_ms),
            );
        }
        if !(self.device_time_ms > 0.0) {
            return bad(
                "device_time_ms",
                format!("must be positive, got {}", self.device_time_ms),
            );
        }
        if !(self.threshold_ms >= 0.0 && self.threshold_ms <= self.device_time_ms) {
            return bad(
                "threshold_ms",
                format!(
                    "must lie in [0, device_time_ms = {}], got {}",
                    self.device_time_ms, self.threshold_ms
                ),
            );
        }
        Ok(())
    }
}

/// Execution-time window `[lower_ms, upper_ms]` for a request.
///
/// `upper_ms` is the soft limit every candidate's `μ + σ` must stay under;
/// `lower_ms` is the hard limit that anchors exploration. A non-positive
/// budget is legal and means no cloud model can fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetRange {
    pub budget_ms: f64,
    pub upper_ms: f64,
    pub lower_ms: f64,
}

impl BudgetRange {
    pub fn new(budget_ms: f64, threshold_ms: f64) -> Self {
        Self {
            budget_ms,
            upper_ms: budget_ms,
            lower_ms: budget_ms - threshold_ms,
        }
    }

    /// Range given directly by its two limits (`lower_ms <= upper_ms`).
    pub fn from_limits(upper_ms: f64, lower_ms: f64) -> Self {
        debug_assert!(lower_ms <= upper_ms || upper_ms.is_nan());
        Self {
            budget_ms: upper_ms,
            upper_ms,
            lower_ms,
        }
    }

    pub fn unbounded() -> Self {
        Self::from_limits(f64::INFINITY, f64::INFINITY)
    }

    pub fn threshold_ms(&self) -> f64 {
        self.upper_ms - self.lower_ms
    }
}

/// Remaining execution budget once the round trip is charged at twice the
/// upload time.
pub fn compute_budget(ctx: &RequestContext) -> BudgetRange {
    BudgetRange::new(ctx.sla_ms - 2.0 * ctx.input_transfer_ms, ctx.threshold_ms)
}

/// True when resizing before upload finishes no later than uploading the
/// original.
pub fn should_downscale(t_downscale_ms: f64, t_upload_small_ms: f64, t_upload_orig_ms: f64) -> bool {
    t_downscale_ms + t_upload_small_ms <= t_upload_orig_ms
}

/// Transfer-time jitter around a network profile's mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JitterModel {
    None,
    Normal { std_ms: f64 },
    Lognormal { cv: f64 },
}

impl Default for JitterModel {
    fn default() -> Self {
        JitterModel::Lognormal { cv: 0.3 }
    }
}

/// Network profile file: a linear transfer-time model plus jitter.
/// Kilobytes are decimal (1 KB = 1000 bytes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkProfile {
    pub name: String,
    pub fixed_overhead_ms: f64,
    pub per_kb_ms: f64,
    #[serde(default)]
    pub jitter_model: JitterModel,
}

impl NetworkProfile {
    pub fn mean_transfer_ms(&self, payload_bytes: u64) -> f64 {
        self.fixed_overhead_ms + self.per_kb_ms * payload_bytes as f64 / 1000.0
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub const DEFAULT_EWMA_ALPHA: f64 = 0.2;

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: u64,
    x: f64,
    y: f64,
    xx: f64,
    xy: f64,
}

/// Fitted one-way transfer model: `overhead_ms + ms_per_byte * bytes`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferFit {
    pub overhead_ms: f64,
    pub ms_per_byte: f64,
}

impl TransferFit {
    pub fn at(&self, payload_bytes: u64) -> f64 {
        (self.overhead_ms + self.ms_per_byte * payload_bytes as f64).max(0.0)
    }
}

/// Online estimator of one-way upload time from recent transfers.
///
/// Keeps exponentially weighted first and second moments of
/// `(bytes, ms)` pairs and fits a weighted least-squares line, which gives
/// the per-byte rate and the fixed overhead. When every observed payload has
/// the same size the overhead cannot be separated and the whole time is
/// attributed to the rate. Download time is assumed no larger than upload
/// time, so callers charge the round trip as twice this estimate.
#[derive(Debug)]
pub struct NetworkEstimator {
    alpha: f64,
    default: Option<NetworkProfile>,
    moments: Mutex<Moments>,
}

impl NetworkEstimator {
    pub fn new(alpha: f64, default: Option<NetworkProfile>) -> Self {
        assert!(alpha > 0.0 && alpha <= 1.0, "alpha must be in (0, 1]");
        Self {
            alpha,
            default,
            moments: Mutex::new(Moments::default()),
        }
    }

    pub fn with_default(default: NetworkProfile) -> Self {
        Self::new(DEFAULT_EWMA_ALPHA, Some(default))
    }

    pub fn observe(&self, payload_bytes: u64, elapsed_ms: f64) {
        if !(elapsed_ms.is_finite() && elapsed_ms >= 0.0) {
            return;
        }
        let x = payload_bytes as f64;
        let y = elapsed_ms;
        let mut m = self.moments.lock().expect("estimator lock");
        if m.count == 0 {
            *m = Moments {
                count: 1,
                x,
                y,
                xx: x * x,
                xy: x * y,
            };
            return;
        }
        let a = self.alpha;
        m.count += 1;
        m.x += a * (x - m.x);
        m.y += a * (y - m.y);
        m.xx += a * (x * x - m.xx);
        m.xy += a * (x * y - m.xy);
    }

    pub fn observations(&self) -> u64 {
        self.moments.lock().expect("estimator lock").count
    }

    pub fn fit(&self) -> Result<TransferFit, BudgetError> {
        let m = *self.moments.lock().expect("estimator lock");
        if m.count == 0 {
            return self
                .default
                .as_ref()
                .map(|d| TransferFit {
                    overhead_ms: d.fixed_overhead_ms,
                    ms_per_byte: d.per_kb_ms / 1000.0,
                })
                .ok_or(BudgetError::EstimationUnavailable);
        }
        let var = m.xx - m.x * m.x;
        if var > 1e-9 * m.xx.max(1.0) {
            let slope = (m.xy - m.x * m.y) / var;
            Ok(TransferFit {
                overhead_ms: m.y - slope * m.x,
                ms_per_byte: slope,
            })
        } else if m.x > 0.0 {
            Ok(TransferFit {
                overhead_ms: 0.0,
                ms_per_byte: m.y / m.x,
            })
        } else {
            Ok(TransferFit {
                overhead_ms: m.y,
                ms_per_byte: self.default.as_ref().map_or(0.0, |d| d.per_kb_ms / 1000.0),
            })
        }
    }

    pub fn estimate(&self, payload_bytes: u64) -> Result<f64, BudgetError> {
        Ok(self.fit()?.at(payload_bytes))
    }
}
