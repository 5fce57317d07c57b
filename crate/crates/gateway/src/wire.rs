use cnnselect_core::SelectionDecision;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::ApiError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRequest {
    pub sla_ms: f64,
    pub payload_bytes: u64,
    /// Client-measured upload time; replaces the server's estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_input_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_ms: Option<f64>,
}

fn number(obj: &serde_json::Map<String, Value>, field: &str) -> Result<Option<f64>, ApiError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Number(n)) => Ok(n.as_f64()),
        Some(other) => Err(ApiError::validation(field, format!("expected a number, got {other}"))),
    }
}

impl InferenceRequest {
    /// Parse and validate a request body, naming the offending field on error.
    pub fn from_body(body: &[u8]) -> Result<Self, ApiError> {
        let value: Value = serde_json::from_slice(body)
            .map_err(|e| ApiError::validation("body", format!("malformed JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| ApiError::validation("body", "expected a JSON object"))?;

        let sla_ms = number(obj, "sla_ms")?.ok_or_else(|| ApiError::validation("sla_ms", "is required"))?;
        if !(sla_ms > 0.0 && sla_ms.is_finite()) {
            return Err(ApiError::validation("sla_ms", format!("must be positive, got {sla_ms}")));
        }
        let payload_bytes = match obj.get("payload_bytes") {
            Some(Value::Number(n)) => n
                .as_u64()
                .ok_or_else(|| ApiError::validation("payload_bytes", "must be a non-negative integer"))?,
            None | Some(Value::Null) => return Err(ApiError::validation("payload_bytes", "is required")),
            Some(other) => {
                return Err(ApiError::validation(
                    "payload_bytes",
                    format!("expected an integer, got {other}"),
                ))
            }
        };
        let t_input_ms = number(obj, "t_input_ms")?;
        if let Some(t) = t_input_ms {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(ApiError::validation("t_input_ms", format!("must be non-negative, got {t}")));
            }
        }
        let threshold_ms = number(obj, "threshold_ms")?;
        Ok(Self {
            sla_ms,
            payload_bytes,
            t_input_ms,
            threshold_ms,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub t_input_est_ms: f64,
    pub exec_ms: f64,
    pub server_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResponse {
    pub model: String,
    pub label: String,
    pub decision: SelectionDecision,
    pub timings: Timings,
    pub sla_met_server_side: bool,
}
