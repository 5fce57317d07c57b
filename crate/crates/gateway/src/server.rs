use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::header;
use axum::response::IntoResponse;
use axum::routing::{get, post, put};
use axum::{Json, Router};
use cnnselect_core::budget::{compute_budget, NetworkEstimator, NetworkProfile, RequestContext};
use cnnselect_core::profile::{ModelProfile, ProfileRecord, ProfileStore};
use cnnselect_core::selector::{select, SelectorConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokio::net::TcpListener;

use crate::backend::Backend;
use crate::error::ApiError;
use crate::metrics::Metrics;
use crate::wire::{InferenceRequest, InferenceResponse, Timings};

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub seed: u64,
    /// Seed each request's generator from (seed, request counter) instead
    /// of OS entropy.
    pub test_mode: bool,
    /// Skip feeding realized execution times back into the store.
    pub freeze_profiles: bool,
    /// `PUT` of an unknown model creates it; otherwise 409.
    pub allow_create: bool,
    pub device_time_ms: f64,
    pub default_threshold_ms: f64,
    pub selector: SelectorConfig,
    /// Prior used by the network estimator before any client-measured
    /// upload time arrives.
    pub network: NetworkProfile,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            test_mode: false,
            freeze_profiles: false,
            allow_create: true,
            device_time_ms: 150.0,
            default_threshold_ms: 30.0,
            selector: SelectorConfig::default(),
            network: NetworkProfile {
                name: "default".into(),
                fixed_overhead_ms: 0.0,
                per_kb_ms: 63.0 / 330.0,
                jitter_model: Default::default(),
            },
        }
    }
}

/// Shared state behind every route.
pub struct Gateway<B> {
    pub config: GatewayConfig,
    pub store: Arc<ProfileStore>,
    pub estimator: NetworkEstimator,
    pub metrics: Metrics,
    backend: B,
    counter: AtomicU64,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl<B: Backend> Gateway<B> {
    pub fn new(config: GatewayConfig, store: Arc<ProfileStore>, backend: B) -> Self {
        Self {
            estimator: NetworkEstimator::with_default(config.network.clone()),
            config,
            store,
            metrics: Metrics::default(),
            backend,
            counter: AtomicU64::new(0),
        }
    }

    fn request_rng(&self) -> ChaCha8Rng {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        if self.config.test_mode {
            ChaCha8Rng::seed_from_u64(mix(mix(self.config.seed) ^ n))
        } else {
            ChaCha8Rng::from_entropy()
        }
    }

    pub async fn handle_infer(&self, req: InferenceRequest) -> Result<InferenceResponse, ApiError> {
        let started = Instant::now();
        let threshold_ms = req.threshold_ms.unwrap_or(self.config.default_threshold_ms);
        let t_input_ms = match req.t_input_ms {
            Some(t) => {
                self.estimator.observe(req.payload_bytes, t);
                t
            }
            None => self
                .estimator
                .estimate(req.payload_bytes)
                .map_err(|e| ApiError::Internal(e.to_string()))?,
        };
        let ctx = RequestContext::new(req.sla_ms, 0.0, t_input_ms, self.config.device_time_ms, threshold_ms)
            .map_err(|e| match e {
                cnnselect_core::BudgetError::InvalidContext { field, message } => {
                    let field = if field == "input_transfer_ms" { "t_input_ms" } else { field };
                    ApiError::validation(field, message)
                }
                other => ApiError::Internal(other.to_string()),
            })?;
        let range = compute_budget(&ctx);

        let snapshot = self.store.snapshot();
        if snapshot.is_empty() {
            return Err(ApiError::Unavailable);
        }
        let mut rng = self.request_rng();
        let decision = select(&snapshot, &range, &self.config.selector, &mut rng)
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        let profile: &ModelProfile = snapshot
            .iter()
            .find(|p| p.name == decision.chosen)
            .ok_or_else(|| ApiError::Internal(format!("chosen model `{}` vanished", decision.chosen)))?;

        let execution = self.backend.execute(profile, req.payload_bytes, rng.gen()).await;
        if !self.config.freeze_profiles {
            // The model may have been replaced meanwhile; a missing name is not fatal.
            let _ = self.store.observe(&profile.name, execution.exec_ms);
        }

        let server_ms = started.elapsed().as_secs_f64() * 1000.0;
        let sla_met = 2.0 * t_input_ms + execution.exec_ms <= req.sla_ms;
        self.metrics
            .record(&decision.chosen, server_ms, !sla_met, decision.fallback);
        Ok(InferenceResponse {
            model: decision.chosen.clone(),
            label: execution.label,
            timings: Timings {
                t_input_est_ms: t_input_ms,
                exec_ms: execution.exec_ms,
                server_ms,
            },
            sla_met_server_side: sla_met,
            decision,
        })
    }

    pub fn list_models(&self) -> Vec<ProfileRecord> {
        self.store.snapshot().iter().map(ProfileRecord::from).collect()
    }

    pub fn put_profile(&self, name: &str, record: ProfileRecord) -> Result<ProfileRecord, ApiError> {
        if record.name != name {
            return Err(ApiError::validation(
                "name",
                format!("body names `{}` but path names `{name}`", record.name),
            ));
        }
        if !self.store.contains(name) && !self.config.allow_create {
            return Err(ApiError::Conflict(name.to_string()));
        }
        let profile = ModelProfile::from(record);
        if let Some((field, message)) = profile.violations().into_iter().next() {
            return Err(ApiError::validation(field, message));
        }
        self.store
            .upsert(profile)
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        self.store
            .get(name)
            .map(|p| ProfileRecord::from(&p))
            .ok_or_else(|| ApiError::Internal("profile vanished after upsert".into()))
    }
}

type Shared<B> = Arc<Gateway<B>>;

async fn infer<B: Backend>(State(gw): State<Shared<B>>, body: Bytes) -> Result<Json<InferenceResponse>, ApiError> {
    let result = match InferenceRequest::from_body(&body) {
        Ok(req) => gw.handle_infer(req).await,
        Err(e) => Err(e),
    };
    if let Err(e) = &result {
        gw.metrics.record_error(e.status().as_u16());
    }
    result.map(Json)
}

async fn models<B: Backend>(State(gw): State<Shared<B>>) -> Json<Vec<ProfileRecord>> {
    Json(gw.list_models())
}

async fn upsert_model<B: Backend>(
    State(gw): State<Shared<B>>,
    Path(name): Path<String>,
    body: Bytes,
) -> Result<Json<ProfileRecord>, ApiError> {
    let record: ProfileRecord = serde_json::from_slice(&body).map_err(|e| {
        let msg = e.to_string();
        let field = msg.split('`').nth(1).unwrap_or("body").to_string();
        ApiError::validation(field, msg)
    })?;
    gw.put_profile(&name, record).map(Json)
}

async fn metrics<B: Backend>(State(gw): State<Shared<B>>) -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], gw.metrics.render())
}

pub fn router<B: Backend>(gateway: Shared<B>) -> Router {
    Router::new()
        .route("/v1/infer", post(infer::<B>))
        .route("/v1/models", get(models::<B>))
        .route("/v1/models/:name", put(upsert_model::<B>))
        .route("/v1/metrics", get(metrics::<B>))
        .with_state(gateway)
}

/// Serve until `shutdown` resolves.
pub async fn serve<B: Backend>(
    listener: TcpListener,
    gateway: Shared<B>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "gateway listening");
    axum::serve(listener, router(gateway))
        .with_graceful_shutdown(shutdown)
        .await
}
