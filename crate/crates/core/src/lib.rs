//! SLA-aware selection of CNN models for cloud-side mobile inference.
//!
//! The crate is split into the profile store ([`profile`]), per-request time
//! budgets and network estimation ([`budget`]), the three-stage selector and
//! its baselines ([`selector`]), and a seeded request-replay simulator
//! ([`sim`]).

pub mod budget;
pub mod error;
pub mod fixtures;
pub mod profile;
pub mod selector;
pub mod sim;

pub use budget::{compute_budget, should_downscale, BudgetRange, NetworkEstimator, NetworkProfile, RequestContext};
pub use error::{BudgetError, ProfileError, SelectError, SimError};
pub use profile::{load_profiles, save_profiles, ModelProfile, ProfileStore};
pub use selector::{select, AccuracyMetric, SelectionDecision, Selector, SelectorConfig};
