//! Model performance profiles and the shared profile store.
//!
//! A profile carries a model's accuracy and running hot-start execution time
//! statistics. The store keeps one profile per model name, accepts online
//! observations of realized execution times, and hands out immutable
//! snapshots to the selector.
//!
//! Profile files are JSON arrays of records with accuracies written as
//! percentages (`74.1`) and held in memory as fractions (`0.741`).
//! Percentages are written rounded to [`PERCENT_DECIMALS`] decimal places;
//! all millisecond fields use shortest round-trip float formatting, so a
//! save/load cycle reproduces every field exactly at that precision.

use std::collections::BTreeMap;
use std::io::Read;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::error::ProfileError;

/// Decimal places kept for accuracy percentages in profile files.
pub const PERCENT_DECIMALS: i32 = 6;

/// Observation count given to seed profiles when none is configured.
pub const DEFAULT_PSEUDO_COUNT: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub name: String,
    pub accuracy_top1: f64,
    pub accuracy_top5: f64,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub cold_start_mean_ms: Option<f64>,
    pub cold_start_std_ms: Option<f64>,
    pub observation_count: u64,
    pub loaded: bool,
}

impl ModelProfile {
    /// Hot-start only profile with no observations behind it.
    pub fn new(name: impl Into<String>, top1: f64, top5: f64, mean_ms: f64, std_ms: f64) -> Self {
        Self {
            name: name.into(),
            accuracy_top1: top1,
            accuracy_top5: top5,
            mean_ms,
            std_ms,
            cold_start_mean_ms: None,
            cold_start_std_ms: None,
            observation_count: 0,
            loaded: true,
        }
    }

    pub fn with_cold_start(mut self, mean_ms: f64, std_ms: f64) -> Self {
        self.cold_start_mean_ms = Some(mean_ms);
        self.cold_start_std_ms = Some(std_ms);
        self
    }

    pub fn with_observations(mut self, count: u64) -> Self {
        self.observation_count = count;
        self
    }

    /// Upper edge of the one-sigma band, `μ + σ`.
    pub fn upper_ms(&self) -> f64 {
        self.mean_ms + self.std_ms
    }

    /// Every invariant violation, as `(field, message)` pairs.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if self.name.trim().is_empty() {
            out.push(("name", "must be a non-empty string".to_string()));
        }
        for (field, v) in [
            ("accuracy_top1", self.accuracy_top1),
            ("accuracy_top5", self.accuracy_top5),
        ] {
            if !(0.0..=1.0).contains(&v) {
                out.push((field, format!("must be within [0, 100] percent, got {}", v * 100.0)));
            }
        }
        if self.accuracy_top1 > self.accuracy_top5 {
            out.push(("accuracy_top1", "must not exceed accuracy_top5".to_string()));
        }
        if !(self.mean_ms.is_finite() && self.mean_ms > 0.0) {
            out.push(("mean_ms", format!("must be positive, got {}", self.mean_ms)));
        }
        if !(self.std_ms.is_finite() && self.std_ms >= 0.0) {
            out.push(("std_ms", format!("must be non-negative, got {}", self.std_ms)));
        }
        if self.observation_count < 2 && self.std_ms != 0.0 {
            out.push((
                "std_ms",
                format!(
                    "must be 0 when observation_count < 2 (count {})",
                    self.observation_count
                ),
            ));
        }
        match (self.cold_start_mean_ms, self.cold_start_std_ms) {
            (Some(mean), std) => {
                if !(mean.is_finite() && mean >= self.mean_ms) {
                    out.push(("cold_start_mean_ms", format!("must be >= mean_ms, got {mean}")));
                }
                if let Some(std) = std {
                    if !(std.is_finite() && std >= 0.0) {
                        out.push(("cold_start_std_ms", format!("must be non-negative, got {std}")));
                    }
                }
            }
            (None, Some(_)) => {
                out.push(("cold_start_std_ms", "set without cold_start_mean_ms".to_string()));
            }
            (None, None) => {}
        }
        out
    }
}

/// On-disk record: the profile file schema, key for key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileRecord {
    pub name: String,
    pub accuracy_top1: f64,
    pub accuracy_top5: f64,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub cold_start_mean_ms: Option<f64>,
    pub cold_start_std_ms: Option<f64>,
    pub observation_count: u64,
}

fn round_percent(fraction: f64) -> f64 {
    let scale = 10f64.powi(PERCENT_DECIMALS);
    (fraction * 100.0 * scale).round() / scale
}

impl From<&ModelProfile> for ProfileRecord {
    fn from(p: &ModelProfile) -> Self {
        Self {
            name: p.name.clone(),
            accuracy_top1: round_percent(p.accuracy_top1),
            accuracy_top5: round_percent(p.accuracy_top5),
            mean_ms: p.mean_ms,
            std_ms: p.std_ms,
            cold_start_mean_ms: p.cold_start_mean_ms,
            cold_start_std_ms: p.cold_start_std_ms,
            observation_count: p.observation_count,
        }
    }
}

impl From<ProfileRecord> for ModelProfile {
    fn from(r: ProfileRecord) -> Self {
        Self {
            name: r.name,
            accuracy_top1: r.accuracy_top1 / 100.0,
            accuracy_top5: r.accuracy_top5 / 100.0,
            mean_ms: r.mean_ms,
            std_ms: r.std_ms,
            cold_start_mean_ms: r.cold_start_mean_ms,
            cold_start_std_ms: r.cold_start_std_ms,
            observation_count: r.observation_count,
            loaded: true,
        }
    }
}

/// A single schema violation found while validating a profile file.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// 1-based line of the record's opening brace, when known.
    pub line: Option<usize>,
    pub index: usize,
    pub name: String,
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        write!(
            f,
            "record {} ({}): field `{}` {}",
            self.index, self.name, self.field, self.message
        )
    }
}

/// Lines (1-based) where each top-level array element starts.
fn element_lines(text: &str) -> Vec<usize> {
    let mut lines = Vec::new();
    let mut line = 1;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for ch in text.chars() {
        if ch == '\n' {
            line += 1;
        }
        if in_string {
            match (escaped, ch) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_string = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' => in_string = true,
            '[' | '{' => {
                if depth == 1 && ch == '{' {
                    lines.push(line);
                }
                depth += 1;
            }
            ']' | '}' => depth = depth.saturating_sub(1),
            _ => {}
        }
    }
    lines
}

/// Validate profile file content, collecting every violation rather than
/// stopping at the first. A syntax error is returned as `Err`.
pub fn validate_profiles(text: &str) -> Result<Vec<Violation>, ProfileError> {
    let values: Vec<serde_json::Value> = if text.trim().is_empty() {
        Vec::new()
    } else {
        serde_json::from_str(text)?
    };
    let lines = element_lines(text);
    let mut out = Vec::new();
    let mut seen = BTreeMap::new();
    for (index, value) in values.into_iter().enumerate() {
        let line = lines.get(index).copied();
        let name = value
            .get("name")
            .and_then(|v| v.as_str())
            .unwrap_or("<unnamed>")
            .to_string();
        let record: ProfileRecord = match serde_json::from_value(value) {
            Ok(r) => r,
            Err(e) => {
                out.push(Violation {
                    line,
                    index,
                    name,
                    field: field_of(&e.to_string()),
                    message: e.to_string(),
                });
                continue;
            }
        };
        let profile = ModelProfile::from(record);
        for (field, message) in profile.violations() {
            out.push(Violation {
                line,
                index,
                name: name.clone(),
                field: field.to_string(),
                message,
            });
        }
        if let Some(first) = seen.insert(name.clone(), index) {
            out.push(Violation {
                line,
                index,
                name: name.clone(),
                field: "name".to_string(),
                message: format!("duplicates record {first}"),
            });
        }
    }
    Ok(out)
}

fn field_of(serde_message: &str) -> String {
    serde_message
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<record>".to_string())
}

/// Parse profile file content into profiles, failing on the first bad record.
pub fn load_profiles(text: &str) -> Result<Vec<ModelProfile>, ProfileError> {
    let values: Vec<serde_json::Value> = if text.trim().is_empty() {
        Vec::new()
    } else {
        serde_json::from_str(text)?
    };
    let mut profiles: Vec<ModelProfile> = Vec::with_capacity(values.len());
    for (index, value) in values.into_iter().enumerate() {
        let name = value
            .get("name")
            .and_then(|v| v.as_str())
            .unwrap_or("<unnamed>")
            .to_string();
        let record: ProfileRecord =
            serde_json::from_value(value).map_err(|e| ProfileError::Malformed {
                index,
                name: name.clone(),
                message: e.to_string(),
            })?;
        let profile = ModelProfile::from(record);
        if let Some((field, message)) = profile.violations().into_iter().next() {
            return Err(ProfileError::Malformed {
                index,
                name,
                message: format!("field `{field}` {message}"),
            });
        }
        if profiles.iter().any(|p| p.name == profile.name) {
            return Err(ProfileError::DuplicateName(profile.name));
        }
        profiles.push(profile);
    }
    Ok(profiles)
}

pub fn load_profiles_from<R: Read>(mut reader: R) -> Result<Vec<ModelProfile>, ProfileError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    load_profiles(&text)
}

pub fn load_profiles_file(path: impl AsRef<std::path::Path>) -> Result<Vec<ModelProfile>, ProfileError> {
    load_profiles(&std::fs::read_to_string(path)?)
}

/// Canonical profile file text: pretty JSON, schema key order, trailing newline.
pub fn save_profiles(profiles: &[ModelProfile]) -> String {
    let records: Vec<ProfileRecord> = profiles.iter().map(ProfileRecord::from).collect();
    let mut text = serde_json::to_string_pretty(&records).expect("records serialize");
    text.push('\n');
    text
}

/// CSV form of the profile file, same columns, empty cells for nulls.
pub fn profiles_to_csv(profiles: &[ModelProfile]) -> Result<String, ProfileError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for p in profiles {
        writer.serialize(ProfileRecord::from(p))?;
    }
    let bytes = writer.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn profiles_from_csv(text: &str) -> Result<Vec<ModelProfile>, ProfileError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut profiles: Vec<ModelProfile> = Vec::new();
    for (index, row) in reader.deserialize::<ProfileRecord>().enumerate() {
        let profile = ModelProfile::from(row?);
        if let Some((field, message)) = profile.violations().into_iter().next() {
            return Err(ProfileError::Malformed {
                index,
                name: profile.name,
                message: format!("field `{field}` {message}"),
            });
        }
        if profiles.iter().any(|p| p.name == profile.name) {
            return Err(ProfileError::DuplicateName(profile.name));
        }
        profiles.push(profile);
    }
    Ok(profiles)
}

/// Welford accumulator state backing one profile's running statistics.
#[derive(Debug, Clone)]
struct Tracked {
    profile: ModelProfile,
    /// Sum of squared deviations from the running mean.
    m2: f64,
}

impl Tracked {
    fn new(profile: ModelProfile) -> Self {
        let n = profile.observation_count;
        let m2 = if n >= 2 {
            profile.std_ms * profile.std_ms * (n - 1) as f64
        } else {
            0.0
        };
        Self { profile, m2 }
    }

    fn push(&mut self, x: f64) {
        let p = &mut self.profile;
        p.observation_count += 1;
        let n = p.observation_count as f64;
        let delta = x - p.mean_ms;
        p.mean_ms += delta / n;
        self.m2 += delta * (x - p.mean_ms);
        p.std_ms = if p.observation_count >= 2 {
            (self.m2 / (n - 1.0)).max(0.0).sqrt()
        } else {
            0.0
        };
    }
}

/// Thread-safe set of model profiles keyed by unique name.
///
/// Readers never block each other; `observe` and `upsert` take the write
/// lock for the duration of a single profile update.
#[derive(Debug, Default)]
pub struct ProfileStore {
    inner: RwLock<BTreeMap<String, Tracked>>,
}

impl ProfileStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_profiles(profiles: Vec<ModelProfile>) -> Result<Self, ProfileError> {
        let mut map = BTreeMap::new();
        for p in profiles {
            let name = p.name.clone();
            if map.insert(name.clone(), Tracked::new(p)).is_some() {
                return Err(ProfileError::DuplicateName(name));
            }
        }
        Ok(Self {
            inner: RwLock::new(map),
        })
    }

    /// Seed store whose profiles all carry `pseudo_count` observations.
    pub fn seeded(profiles: Vec<ModelProfile>, pseudo_count: u64) -> Result<Self, ProfileError> {
        Self::from_profiles(
            profiles
                .into_iter()
                .map(|p| {
                    let p = p.with_observations(pseudo_count);
                    if pseudo_count < 2 {
                        ModelProfile { std_ms: 0.0, ..p }
                    } else {
                        p
                    }
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("profile lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, name: &str) -> bool {
        self.inner.read().expect("profile lock").contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<ModelProfile> {
        self.inner
            .read()
            .expect("profile lock")
            .get(name)
            .map(|t| t.profile.clone())
    }

    /// Record one realized hot-start execution time for `name`.
    pub fn observe(&self, name: &str, elapsed_ms: f64) -> Result<ModelProfile, ProfileError> {
        if !(elapsed_ms.is_finite() && elapsed_ms > 0.0) {
            return Err(ProfileError::InvalidDuration(elapsed_ms));
        }
        let mut map = self.inner.write().expect("profile lock");
        let tracked = map
            .get_mut(name)
            .ok_or_else(|| ProfileError::NotFound(name.to_string()))?;
        tracked.push(elapsed_ms);
        Ok(tracked.profile.clone())
    }

    /// Mark a model resident or evicted.
    pub fn set_loaded(&self, name: &str, loaded: bool) -> Result<(), ProfileError> {
        let mut map = self.inner.write().expect("profile lock");
        let tracked = map
            .get_mut(name)
            .ok_or_else(|| ProfileError::NotFound(name.to_string()))?;
        tracked.profile.loaded = loaded;
        Ok(())
    }

    /// Insert or replace a profile. Returns true when the name was new.
    pub fn upsert(&self, profile: ModelProfile) -> Result<bool, ProfileError> {
        if let Some((field, message)) = profile.violations().into_iter().next() {
            return Err(ProfileError::Malformed {
                index: 0,
                name: profile.name,
                message: format!("field `{field}` {message}"),
            });
        }
        let mut map = self.inner.write().expect("profile lock");
        Ok(map
            .insert(profile.name.clone(), Tracked::new(profile))
            .is_none())
    }

    /// Point-in-time copy of every profile, ordered by name.
    pub fn snapshot(&self) -> Vec<ModelProfile> {
        self.inner
            .read()
            .expect("profile lock")
            .values()
            .map(|t| t.profile.clone())
            .collect()
    }

    pub fn total_observations(&self) -> u64 {
        self.inner
            .read()
            .expect("profile lock")
            .values()
            .map(|t| t.profile.observation_count)
            .sum()
    }
}

impl Clone for ProfileStore {
    fn clone(&self) -> Self {
        Self {
            inner: RwLock::new(self.inner.read().expect("profile lock").clone()),
        }
    }
}
