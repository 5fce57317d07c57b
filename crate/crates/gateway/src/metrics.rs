use std::collections::BTreeMap;
use std::fmt::Write;
use std::sync::Mutex;

use cnnselect_core::sim::percentile;

#[derive(Debug, Default, Clone)]
struct ModelCounters {
    requests: u64,
    misses: u64,
    fallbacks: u64,
    server_ms: Vec<f64>,
}

/// Request counters exposed at `/v1/metrics`.
#[derive(Debug, Default)]
pub struct Metrics {
    models: Mutex<BTreeMap<String, ModelCounters>>,
    errors: Mutex<BTreeMap<u16, u64>>,
}

impl Metrics {
    pub fn record(&self, model: &str, server_ms: f64, missed: bool, fallback: bool) {
        let mut models = self.models.lock().expect("metrics lock");
        let c = models.entry(model.to_string()).or_default();
        c.requests += 1;
        c.misses += missed as u64;
        c.fallbacks += fallback as u64;
        c.server_ms.push(server_ms);
    }

    pub fn record_error(&self, status: u16) {
        *self.errors.lock().expect("metrics lock").entry(status).or_default() += 1;
    }

    pub fn total_requests(&self) -> u64 {
        self.models.lock().expect("metrics lock").values().map(|c| c.requests).sum()
    }

    /// One `name value` pair per line; labels in braces.
    pub fn render(&self) -> String {
        let models = self.models.lock().expect("metrics lock").clone();
        let errors = self.errors.lock().expect("metrics lock").clone();
        let mut out = String::new();
        let sum = |f: fn(&ModelCounters) -> u64| models.values().map(f).sum::<u64>();
        let _ = writeln!(out, "cnnselect_requests_total {}", sum(|c| c.requests));
        let _ = writeln!(out, "cnnselect_sla_misses_total {}", sum(|c| c.misses));
        let _ = writeln!(out, "cnnselect_fallbacks_total {}", sum(|c| c.fallbacks));
        for (status, count) in &errors {
            let _ = writeln!(out, "cnnselect_errors_total{{status=\"{status}\"}} {count}");
        }
        for (model, c) in &models {
            let mut times = c.server_ms.clone();
            times.sort_by(f64::total_cmp);
            let _ = writeln!(out, "cnnselect_model_requests_total{{model=\"{model}\"}} {}", c.requests);
            let _ = writeln!(out, "cnnselect_model_sla_misses_total{{model=\"{model}\"}} {}", c.misses);
            let _ = writeln!(out, "cnnselect_model_server_ms_p50{{model=\"{model}\"}} {:.3}", percentile(&times, 0.50));
            let _ = writeln!(out, "cnnselect_model_server_ms_p99{{model=\"{model}\"}} {:.3}", percentile(&times, 0.99));
        }
        out
    }
}
