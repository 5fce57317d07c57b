use std::future::Future;
use std::time::Duration;

use cnnselect_core::ModelProfile;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub exec_ms: f64,
    pub label: String,
}

/// Executes an inference on a named model.
///
/// `seed` is derived from the request's generator so mock executors stay
/// reproducible in test mode; real executors may ignore it.
pub trait Backend: Send + Sync + 'static {
    fn execute(
        &self,
        model: &ModelProfile,
        payload_bytes: u64,
        seed: u64,
    ) -> impl Future<Output = Execution> + Send;
}

const LABELS: &[&str] = &[
    "tabby cat",
    "golden retriever",
    "espresso",
    "mountain bike",
    "lighthouse",
    "red fox",
    "acoustic guitar",
    "sea turtle",
    "pizza",
    "school bus",
];

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    bytes.into_iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Deterministic stand-in label for a (model, payload) pair.
pub fn mock_label(model: &str, payload_bytes: u64) -> &'static str {
    let h = fnv1a(model.bytes().chain(payload_bytes.to_le_bytes()));
    LABELS[(h % LABELS.len() as u64) as usize]
}

/// Sleeps for an execution time drawn from Normal(μ, σ) truncated at zero.
#[derive(Debug, Clone)]
pub struct MockBackend {
    /// Wall-clock seconds slept per simulated second; 0 disables sleeping.
    pub time_scale: f64,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self { time_scale: 1.0 }
    }
}

impl MockBackend {
    pub fn sample_exec(model: &ModelProfile, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if model.std_ms <= 0.0 {
            return model.mean_ms;
        }
        // Box-Muller keeps this independent of distribution crates.
        for _ in 0..64 {
            let u1: f64 = 1.0 - rng.gen::<f64>();
            let u2: f64 = rng.gen();
            let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            let x = model.mean_ms + model.std_ms * z;
            if x > 0.0 {
                return x;
            }
        }
        model.mean_ms
    }
}

impl Backend for MockBackend {
    async fn execute(&self, model: &ModelProfile, payload_bytes: u64, seed: u64) -> Execution {
        let exec_ms = Self::sample_exec(model, seed);
        if self.time_scale > 0.0 {
            tokio::time::sleep(Duration::from_secs_f64(exec_ms * self.time_scale / 1000.0)).await;
        }
        Execution {
            exec_ms,
            label: mock_label(&model.name, payload_bytes).to_string(),
        }
    }
}
