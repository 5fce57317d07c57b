//! Mock inference gateway.
//!
//! Accepts inference requests carrying an SLA and payload size, selects a
//! model with the three-stage selector against the live profile store,
//! dispatches to an in-process mock backend, feeds the realized execution
//! time back into the store and returns the full decision trace.
//!
//! Routes:
//!
//! | method | path                 | body                         |
//! |--------|----------------------|------------------------------|
//! | POST   | `/v1/infer`          | [`InferenceRequest`] JSON    |
//! | GET    | `/v1/models`         | profile file schema array    |
//! | PUT    | `/v1/models/{name}`  | one profile record           |
//! | GET    | `/v1/metrics`        | plaintext `name value` lines |

mod backend;
mod error;
mod metrics;
mod server;
mod wire;

pub use backend::{Backend, Execution, MockBackend};
pub use error::ApiError;
pub use metrics::Metrics;
pub use server::{router, serve, Gateway, GatewayConfig};
pub use wire::{InferenceRequest, InferenceResponse, Timings};
