//! Measured profiles of eleven ImageNet classifiers served from a GPU host,
//! shipped as `fixtures/measured_models.json`.

use crate::profile::{load_profiles, ModelProfile};

pub const MEASURED_MODELS_JSON: &str = include_str!("../../../fixtures/measured_models.json");

pub fn measured_models() -> Vec<ModelProfile> {
    load_profiles(MEASURED_MODELS_JSON).expect("bundled fixture is valid")
}
