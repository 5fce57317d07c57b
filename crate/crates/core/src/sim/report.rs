use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::SimError;

/// Aggregates for one (SLA, policy) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub sla_ms: f64,
    pub policy: String,
    pub requests: usize,
    pub misses: usize,
    pub miss_rate: f64,
    pub accuracy: f64,
    pub lat_mean: f64,
    pub lat_p25: f64,
    pub lat_p50: f64,
    pub lat_p75: f64,
    pub lat_p99: f64,
    pub usage: BTreeMap<String, f64>,
}

impl CellReport {
    /// Most frequently used model; ties go to the first name.
    pub fn modal_model(&self) -> Option<&str> {
        self.usage
            .iter()
            .fold(None::<(&String, f64)>, |best, (name, &f)| match best {
                Some((_, bf)) if bf >= f => best,
                _ => Some((name, f)),
            })
            .map(|(name, _)| name.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub per_sla: Vec<CellReport>,
    pub metadata: ReportMetadata,
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

const FLOAT_DECIMALS: usize = 6;

fn fmt(v: f64) -> String {
    format!("{v:.FLOAT_DECIMALS$}")
}

impl SimulationReport {
    pub fn policies(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for cell in &self.per_sla {
            if !out.contains(&cell.policy.as_str()) {
                out.push(&cell.policy);
            }
        }
        out
    }

    pub fn sla_values(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for cell in &self.per_sla {
            if !out.contains(&cell.sla_ms) {
                out.push(cell.sla_ms);
            }
        }
        out
    }

    pub fn cell(&self, sla_ms: f64, policy: &str) -> Option<&CellReport> {
        self.per_sla
            .iter()
            .find(|c| c.sla_ms == sla_ms && c.policy == policy)
    }

    pub fn cells_for<'a>(&'a self, policy: &'a str) -> impl Iterator<Item = &'a CellReport> + 'a {
        self.per_sla.iter().filter(move |c| c.policy == policy)
    }

    /// `sla_ms,policy,miss_rate,accuracy,lat_mean,lat_p25,lat_p50,lat_p75,lat_p99`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "sla_ms", "policy", "miss_rate", "accuracy", "lat_mean", "lat_p25", "lat_p50", "lat_p75",
            "lat_p99",
        ])?;
        for c in &self.per_sla {
            w.write_record([
                c.sla_ms.to_string(),
                c.policy.clone(),
                fmt(c.miss_rate),
                fmt(c.accuracy),
                fmt(c.lat_mean),
                fmt(c.lat_p25),
                fmt(c.lat_p50),
                fmt(c.lat_p75),
                fmt(c.lat_p99),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `sla_ms,policy,model,fraction`
    pub fn write_usage_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sla_ms", "policy", "model", "fraction"])?;
        for c in &self.per_sla {
            for (model, fraction) in &c.usage {
                w.write_record([c.sla_ms.to_string(), c.policy.clone(), model.clone(), fmt(*fraction)])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8")
    }

    pub fn to_usage_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_usage_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8")
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str) -> Result<Self, SimError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub sla_ms: f64,
    /// Mean-latency reduction of the candidate relative to the baseline, percent.
    pub latency_reduction_pct: f64,
    /// Candidate accuracy minus baseline accuracy.
    pub accuracy_delta: f64,
    /// Candidate miss rate minus baseline miss rate.
    pub miss_rate_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub candidate: String,
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
    /// Column-wise maximum over all SLA points.
    pub max: ComparisonRow,
}

impl Comparison {
    /// `sla_ms,candidate,baseline,latency_reduction_pct,accuracy_delta,miss_rate_delta`,
    /// with a closing `max` row.
    pub fn write_csv<W: Write>(&self, out: W, header: bool) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        if header {
            w.write_record([
                "sla_ms",
                "candidate",
                "baseline",
                "latency_reduction_pct",
                "accuracy_delta",
                "miss_rate_delta",
            ])?;
        }
        let rows = self
            .rows
            .iter()
            .map(|r| (r.sla_ms.to_string(), r))
            .chain(std::iter::once(("max".to_string(), &self.max)));
        for (sla, r) in rows {
            w.write_record([
                sla,
                self.candidate.clone(),
                self.baseline.clone(),
                fmt(r.latency_reduction_pct),
                fmt(r.accuracy_delta),
                fmt(r.miss_rate_delta),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-SLA deltas of `candidate` against `baseline`.
pub fn compare_pair(report: &SimulationReport, candidate: &str, baseline: &str) -> Result<Comparison, SimError> {
    for p in [candidate, baseline] {
        if report.cells_for(p).next().is_none() {
            return Err(SimError::MissingPolicy(p.to_string()));
        }
    }
    let rows: Vec<ComparisonRow> = report
        .sla_values()
        .into_iter()
        .filter_map(|sla| {
            let c = report.cell(sla, candidate)?;
            let b = report.cell(sla, baseline)?;
            let latency_reduction_pct = if b.lat_mean > 0.0 {
                (b.lat_mean - c.lat_mean) / b.lat_mean * 100.0
            } else {
                0.0
            };
            Some(ComparisonRow {
                sla_ms: sla,
                latency_reduction_pct,
                accuracy_delta: c.accuracy - b.accuracy,
                miss_rate_delta: c.miss_rate - b.miss_rate,
            })
        })
        .collect();
    let max_of = |f: fn(&ComparisonRow) -> f64| rows.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let max = ComparisonRow {
        sla_ms: rows.iter().map(|r| r.sla_ms).fold(f64::NEG_INFINITY, f64::max),
        latency_reduction_pct: max_of(|r| r.latency_reduction_pct),
        accuracy_delta: max_of(|r| r.accuracy_delta),
        miss_rate_delta: max_of(|r| r.miss_rate_delta),
    };
    Ok(Comparison {
        candidate: candidate.to_string(),
        baseline: baseline.to_string(),
        rows,
        max,
    })
}

/// Compare the report's first policy against every other policy.
pub fn compare_policies(report: &SimulationReport) -> Result<Vec<Comparison>, SimError> {
    let policies = report.policies();
    if policies.len() < 2 {
        return Err(SimError::InsufficientPolicies(policies.len()));
    }
    policies[1..]
        .iter()
        .map(|b| compare_pair(report, policies[0], b))
        .collect()
}
