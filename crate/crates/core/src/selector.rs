//! Three-stage SLA-aware model selection and the baseline policies.
//!
//! 1. Pick the most accurate base model whose `μ + σ` fits under the soft
//!    limit and whose `μ − σ` fits under the hard limit, or fall back to the
//!    fastest model when none qualifies.
//! 2. Mirror the base model's distance from the hard limit to get an
//!    exploration window of mean execution times, and collect the models
//!    inside it that still respect the soft limit.
//! 3. Score each eligible model by accuracy times slack-under-soft-limit over
//!    distance-from-hard-limit and sample one in proportion to its score.
//!
//! Every function here is pure given the profile slice and the generator.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::budget::BudgetRange;
use crate::error::SelectError;
use crate::profile::ModelProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccuracyMetric {
    #[default]
    Top1,
    Top5,
}

impl AccuracyMetric {
    pub fn of(self, p: &ModelProfile) -> f64 {
        match self {
            AccuracyMetric::Top1 => p.accuracy_top1,
            AccuracyMetric::Top5 => p.accuracy_top5,
        }
    }
}

impl std::str::FromStr for AccuracyMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "top1" => Ok(Self::Top1),
            "top5" => Ok(Self::Top5),
            other => Err(format!("unknown accuracy metric `{other}` (expected top1 or top5)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectorConfig {
    pub accuracy_metric: AccuracyMetric,
    /// Keep the base model in the eligible set even when its own mean falls
    /// outside the exploration window.
    pub include_base_in_exploration: bool,
    /// Floor on `|T_L − μ|` in the utility denominator.
    pub denominator_epsilon_ms: f64,
    pub rng_seed: u64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            accuracy_metric: AccuracyMetric::Top1,
            include_base_in_exploration: true,
            denominator_epsilon_ms: 0.1,
            rng_seed: 0,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<(), SelectError> {
        if !(self.denominator_epsilon_ms > 0.0 && self.denominator_epsilon_ms.is_finite()) {
            return Err(SelectError::InvalidConfig(format!(
                "denominator_epsilon_ms must be positive, got {}",
                self.denominator_epsilon_ms
            )));
        }
        Ok(())
    }
}

/// Outcome of the first stage.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseChoice<'a> {
    Base(&'a ModelProfile),
    /// No model met both constraints; carries the fastest model.
    Fallback(&'a ModelProfile),
}

impl<'a> BaseChoice<'a> {
    pub fn model(&self) -> &'a ModelProfile {
        match self {
            BaseChoice::Base(m) | BaseChoice::Fallback(m) => m,
        }
    }

    pub fn is_fallback(&self) -> bool {
        matches!(self, BaseChoice::Fallback(_))
    }
}

/// Closed interval of mean execution times worth exploring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationRange {
    pub low_ms: f64,
    pub high_ms: f64,
}

impl ExplorationRange {
    pub fn contains(&self, mean_ms: f64) -> bool {
        self.low_ms <= mean_ms && mean_ms <= self.high_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionDecision {
    pub chosen: String,
    pub base_model: Option<String>,
    pub eligible_set: Vec<String>,
    pub exploration_range: Option<ExplorationRange>,
    pub utilities: BTreeMap<String, f64>,
    pub probabilities: BTreeMap<String, f64>,
    pub fallback: bool,
}

impl SelectionDecision {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("decision serializes")
    }
}

fn lookup<'a>(profiles: &'a [ModelProfile], name: &str) -> Result<&'a ModelProfile, SelectError> {
    profiles
        .iter()
        .find(|p| p.name == name)
        .ok_or_else(|| SelectError::UnknownModel(name.to_string()))
}

/// Smallest mean first, then name.
fn faster(a: &ModelProfile, b: &ModelProfile) -> Ordering {
    a.mean_ms
        .total_cmp(&b.mean_ms)
        .then_with(|| a.name.cmp(&b.name))
}

/// Model with the lowest mean execution time.
pub fn fastest_select(profiles: &[ModelProfile]) -> Result<&ModelProfile, SelectError> {
    profiles.iter().min_by(|a, b| faster(a, b)).ok_or(SelectError::NoModels)
}

/// Most accurate model; equal accuracy resolved toward the faster model.
fn most_accurate<'a, I>(candidates: I, metric: AccuracyMetric) -> Option<&'a ModelProfile>
where
    I: IntoIterator<Item = &'a ModelProfile>,
{
    candidates.into_iter().max_by(|a, b| {
        metric
            .of(a)
            .total_cmp(&metric.of(b))
            .then_with(|| faster(b, a))
    })
}

pub fn stage1_base<'a>(
    profiles: &'a [ModelProfile],
    range: &BudgetRange,
    cfg: &SelectorConfig,
) -> Result<BaseChoice<'a>, SelectError> {
    let fastest = fastest_select(profiles)?;
    let feasible = profiles.iter().filter(|m| {
        m.mean_ms + m.std_ms < range.upper_ms && m.mean_ms - m.std_ms < range.lower_ms
    });
    Ok(match most_accurate(feasible, cfg.accuracy_metric) {
        Some(base) => BaseChoice::Base(base),
        None => BaseChoice::Fallback(fastest),
    })
}

/// Exploration window mirrored around the hard limit from the base model.
pub fn exploration_range(base: &ModelProfile, range: &BudgetRange) -> ExplorationRange {
    let (mu, sigma, hard) = (base.mean_ms, base.std_ms, range.lower_ms);
    let mirrored = 2.0 * hard - mu + sigma;
    if hard > mu {
        ExplorationRange {
            low_ms: mu + sigma,
            high_ms: mirrored,
        }
    } else {
        ExplorationRange {
            low_ms: mirrored,
            high_ms: mu + sigma,
        }
    }
}

/// Exploration window and eligible set, in profile order.
pub fn stage2_explore(
    profiles: &[ModelProfile],
    base: &ModelProfile,
    range: &BudgetRange,
    cfg: &SelectorConfig,
) -> (ExplorationRange, Vec<String>) {
    let window = exploration_range(base, range);
    let eligible = profiles
        .iter()
        .filter(|m| {
            let inside = window.contains(m.mean_ms) && m.mean_ms + m.std_ms < range.upper_ms;
            inside || (cfg.include_base_in_exploration && m.name == base.name)
        })
        .map(|m| m.name.clone())
        .collect();
    (window, eligible)
}

/// Utility of one model: accuracy × slack under the soft limit ÷ distance
/// from the hard limit (floored at `denominator_epsilon_ms`).
///
/// With an unbounded range the slack/distance ratio tends to 1, so the
/// utility is the accuracy itself.
pub fn utility(m: &ModelProfile, range: &BudgetRange, cfg: &SelectorConfig) -> f64 {
    let accuracy = cfg.accuracy_metric.of(m);
    if !range.upper_ms.is_finite() || !range.lower_ms.is_finite() {
        return accuracy;
    }
    let slack = range.upper_ms - m.upper_ms();
    let distance = (range.lower_ms - m.mean_ms)
        .abs()
        .max(cfg.denominator_epsilon_ms);
    (accuracy * slack / distance).max(0.0)
}

/// Normalize utilities into probabilities, uniform when they are all zero.
pub fn normalize(utilities: &[f64]) -> Vec<f64> {
    let total: f64 = utilities.iter().sum();
    if total > 0.0 && total.is_finite() {
        utilities.iter().map(|u| u / total).collect()
    } else {
        vec![1.0 / utilities.len() as f64; utilities.len()]
    }
}

pub fn stage3_select<R: Rng + ?Sized>(
    eligible: &[String],
    profiles: &[ModelProfile],
    range: &BudgetRange,
    cfg: &SelectorConfig,
    rng: &mut R,
) -> Result<SelectionDecision, SelectError> {
    if eligible.is_empty() {
        return Err(SelectError::EmptyEligibleSet);
    }
    let members = eligible
        .iter()
        .map(|name| lookup(profiles, name))
        .collect::<Result<Vec<_>, _>>()?;
    let utilities: Vec<f64> = members.iter().map(|m| utility(m, range, cfg)).collect();
    let probabilities = normalize(&utilities);
    let index = if members.len() == 1 {
        0
    } else {
        WeightedIndex::new(&probabilities)
            .expect("normalized weights are valid")
            .sample(rng)
    };
    Ok(SelectionDecision {
        chosen: members[index].name.clone(),
        base_model: None,
        eligible_set: eligible.to_vec(),
        exploration_range: None,
        utilities: eligible.iter().cloned().zip(utilities).collect(),
        probabilities: eligible.iter().cloned().zip(probabilities).collect(),
        fallback: false,
    })
}

/// Run all three stages for one request.
pub fn select<R: Rng + ?Sized>(
    profiles: &[ModelProfile],
    range: &BudgetRange,
    cfg: &SelectorConfig,
    rng: &mut R,
) -> Result<SelectionDecision, SelectError> {
    cfg.validate()?;
    match stage1_base(profiles, range, cfg)? {
        BaseChoice::Fallback(fastest) => Ok(SelectionDecision {
            chosen: fastest.name.clone(),
            base_model: None,
            eligible_set: vec![fastest.name.clone()],
            exploration_range: None,
            utilities: BTreeMap::new(),
            probabilities: BTreeMap::from([(fastest.name.clone(), 1.0)]),
            fallback: true,
        }),
        BaseChoice::Base(base) => {
            let (window, eligible) = stage2_explore(profiles, base, range, cfg);
            let mut decision = stage3_select(&eligible, profiles, range, cfg, rng)?;
            decision.base_model = Some(base.name.clone());
            decision.exploration_range = Some(window);
            Ok(decision)
        }
    }
}

/// Most accurate model whose mean fits in `budget_ms`, else the fastest.
pub fn greedy_select<'a>(
    profiles: &'a [ModelProfile],
    budget_ms: f64,
    metric: AccuracyMetric,
) -> Result<&'a ModelProfile, SelectError> {
    let fastest = fastest_select(profiles)?;
    Ok(most_accurate(profiles.iter().filter(|m| m.mean_ms <= budget_ms), metric).unwrap_or(fastest))
}

/// Selector bundled with its own seeded generator.
#[derive(Debug, Clone)]
pub struct Selector {
    cfg: SelectorConfig,
    rng: ChaCha8Rng,
}

impl Selector {
    pub fn new(cfg: SelectorConfig) -> Result<Self, SelectError> {
        cfg.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            cfg,
        })
    }

    pub fn config(&self) -> &SelectorConfig {
        &self.cfg
    }

    pub fn select(
        &mut self,
        profiles: &[ModelProfile],
        range: &BudgetRange,
    ) -> Result<SelectionDecision, SelectError> {
        select(profiles, range, &self.cfg, &mut self.rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> Vec<ModelProfile> {
        crate::fixtures::measured_models()
    }

    fn named<'a>(profiles: &'a [ModelProfile], name: &str) -> &'a ModelProfile {
        profiles.iter().find(|p| p.name == name).unwrap()
    }

    #[test]
    fn stage1_worked_example() {
        let profiles = table();
        let range = BudgetRange::from_limits(60.0, 50.0);
        let base = stage1_base(&profiles, &range, &SelectorConfig::default()).unwrap();
        assert_eq!(base, BaseChoice::Base(named(&profiles, "MobileNetV1 1.0")));
    }

    #[test]
    fn stage1_unbounded_picks_most_accurate() {
        let profiles = table();
        let base = stage1_base(&profiles, &BudgetRange::unbounded(), &SelectorConfig::default()).unwrap();
        assert_eq!(base.model().name, "NasNet Large");
        assert!(!base.is_fallback());
    }

    #[test]
    fn stage1_fallback_to_fastest() {
        let profiles = table();
        let base = stage1_base(&profiles, &BudgetRange::from_limits(1.0, 0.0), &SelectorConfig::default()).unwrap();
        assert!(base.is_fallback());
        assert_eq!(base.model().name, "MobileNetV1 0.25");
    }

    #[test]
    fn stage1_empty_profiles() {
        let err = stage1_base(&[], &BudgetRange::unbounded(), &SelectorConfig::default()).unwrap_err();
        assert_eq!(err, SelectError::NoModels);
    }

    #[test]
    fn stage1_boundary_equality_is_infeasible() {
        let profiles = vec![
            ModelProfile::new("exact", 0.9, 0.95, 50.0, 10.0).with_observations(10),
            ModelProfile::new("slow", 0.1, 0.2, 200.0, 0.0),
        ];
        let base = stage1_base(&profiles, &BudgetRange::from_limits(60.0, 55.0), &SelectorConfig::default()).unwrap();
        assert!(base.is_fallback());
        assert_eq!(base.model().name, "exact");
    }

    #[test]
    fn stage1_ties_prefer_faster_then_name() {
        let profiles = vec![
            ModelProfile::new("b", 0.7, 0.9, 20.0, 0.0),
            ModelProfile::new("a", 0.7, 0.9, 20.0, 0.0),
            ModelProfile::new("c", 0.7, 0.9, 30.0, 0.0),
        ];
        let base = stage1_base(&profiles, &BudgetRange::unbounded(), &SelectorConfig::default()).unwrap();
        assert_eq!(base.model().name, "a");
    }

    #[test]
    fn stage2_worked_example() {
        let profiles = table();
        let range = BudgetRange::from_limits(60.0, 50.0);
        let cfg = SelectorConfig::default();
        let (window, eligible) = stage2_explore(&profiles, named(&profiles, "MobileNetV1 1.0"), &range, &cfg);
        assert!((window.low_ms - 29.37).abs() < 1e-9);
        assert!((window.high_ms - 73.07).abs() < 1e-9);
        let mut got = eligible.clone();
        got.sort();
        assert_eq!(got, ["DenseNet", "InceptionV3", "MobileNetV1 1.0", "NasNet Mobile"]);
    }

    #[test]
    fn stage2_degenerate_window() {
        let profiles = table();
        let base = named(&profiles, "DenseNet");
        let range = BudgetRange::from_limits(60.0, base.mean_ms);
        let (window, eligible) = stage2_explore(&profiles, base, &range, &SelectorConfig::default());
        assert_eq!(window.low_ms, window.high_ms);
        assert_eq!(window.low_ms, base.mean_ms + base.std_ms);
        assert!(eligible.contains(&base.name));
    }

    #[test]
    fn stage2_literal_reading_can_drop_base() {
        let profiles = table();
        let cfg = SelectorConfig {
            include_base_in_exploration: false,
            ..Default::default()
        };
        let (_, eligible) = stage2_explore(
            &profiles,
            named(&profiles, "MobileNetV1 1.0"),
            &BudgetRange::from_limits(60.0, 50.0),
            &cfg,
        );
        assert!(!eligible.iter().any(|n| n == "MobileNetV1 1.0"));
        assert_eq!(eligible.len(), 3);
    }

    #[test]
    fn stage2_single_model() {
        let profiles = vec![ModelProfile::new("only", 0.5, 0.6, 10.0, 0.0)];
        let (_, eligible) = stage2_explore(
            &profiles,
            &profiles[0],
            &BudgetRange::from_limits(40.0, 30.0),
            &SelectorConfig::default(),
        );
        assert_eq!(eligible, ["only"]);
    }

    #[test]
    fn stage3_worked_example() {
        let profiles = table();
        let range = BudgetRange::from_limits(60.0, 50.0);
        let eligible: Vec<String> = ["MobileNetV1 1.0", "DenseNet", "NasNet Mobile", "InceptionV3"]
            .map(String::from)
            .to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = stage3_select(&eligible, &profiles, &range, &SelectorConfig::default(), &mut rng).unwrap();
        // Hand-evaluated: 0.718*30.63/21.85, 0.642*7.24/0.45, 0.739*0.60/5.31, 0.779*3.05/5.75.
        let expected = [
            ("MobileNetV1 1.0", 1.006_514),
            ("DenseNet", 10.329_067),
            ("NasNet Mobile", 0.083_503),
            ("InceptionV3", 0.413_209),
        ];
        for (name, u) in expected {
            assert!((d.utilities[name] - u).abs() < 1e-3, "{name}: {}", d.utilities[name]);
        }
        assert!((d.probabilities["DenseNet"] - 0.873).abs() < 1e-3);
        let total: f64 = d.probabilities.values().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stage3_singleton_and_scaling() {
        let profiles = table();
        let range = BudgetRange::from_limits(60.0, 50.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let one = vec!["DenseNet".to_string()];
        let d = stage3_select(&one, &profiles, &range, &SelectorConfig::default(), &mut rng).unwrap();
        assert_eq!(d.probabilities["DenseNet"], 1.0);
        assert_eq!(d.chosen, "DenseNet");

        let eligible: Vec<String> = ["MobileNetV1 1.0", "DenseNet", "InceptionV3"].map(String::from).to_vec();
        let scaled: Vec<ModelProfile> = profiles
            .iter()
            .map(|p| ModelProfile {
                accuracy_top1: p.accuracy_top1 * 0.37,
                ..p.clone()
            })
            .collect();
        let a = stage3_select(&eligible, &profiles, &range, &SelectorConfig::default(), &mut rng).unwrap();
        let b = stage3_select(&eligible, &scaled, &range, &SelectorConfig::default(), &mut rng).unwrap();
        for name in &eligible {
            assert!((a.probabilities[name] - b.probabilities[name]).abs() < 1e-12);
        }
    }

    #[test]
    fn stage3_zero_utilities_become_uniform() {
        let profiles = vec![
            ModelProfile::new("a", 0.0, 0.0, 10.0, 0.0),
            ModelProfile::new("b", 0.0, 0.0, 12.0, 0.0),
        ];
        let names = vec!["a".to_string(), "b".to_string()];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = stage3_select(&names, &profiles, &BudgetRange::from_limits(40.0, 30.0), &SelectorConfig::default(), &mut rng)
            .unwrap();
        assert_eq!(d.probabilities["a"], 0.5);
        assert_eq!(d.probabilities["b"], 0.5);
    }

    #[test]
    fn negative_budget_falls_back() {
        let profiles = table();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = select(&profiles, &BudgetRange::new(-26.0, 30.0), &SelectorConfig::default(), &mut rng).unwrap();
        assert!(d.fallback);
        assert_eq!(d.chosen, "MobileNetV1 0.25");
        assert_eq!(d.probabilities.len(), 1);
        assert_eq!(d.base_model, None);
    }

    #[test]
    fn walkthrough_shape() {
        // m3 most accurate and feasible, m1 outside the window, m2 inside.
        let profiles = vec![
            ModelProfile::new("m1", 0.70, 0.9, 10.0, 1.0).with_observations(10),
            ModelProfile::new("m2", 0.60, 0.8, 44.0, 2.0).with_observations(10),
            ModelProfile::new("m3", 0.80, 0.9, 35.0, 2.0).with_observations(10),
        ];
        let range = BudgetRange::from_limits(50.0, 40.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = select(&profiles, &range, &SelectorConfig::default(), &mut rng).unwrap();
        assert_eq!(d.base_model.as_deref(), Some("m3"));
        assert!(d.eligible_set.iter().all(|n| n == "m2" || n == "m3"));
        assert!(d.eligible_set.contains(&"m2".to_string()));
    }

    #[test]
    fn unbounded_range_has_finite_utilities() {
        let profiles = table();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = select(&profiles, &BudgetRange::unbounded(), &SelectorConfig::default(), &mut rng).unwrap();
        assert_eq!(d.chosen, "NasNet Large");
        assert!(d.utilities.values().all(|u| u.is_finite()));
    }

    #[test]
    fn greedy_and_fastest_baselines() {
        let profiles = table();
        let metric = AccuracyMetric::Top1;
        assert_eq!(greedy_select(&profiles, 60.0, metric).unwrap().name, "InceptionV3");
        assert_eq!(greedy_select(&profiles, f64::INFINITY, metric).unwrap().name, "NasNet Large");
        assert_eq!(greedy_select(&profiles, 10.0, metric).unwrap().name, "MobileNetV1 0.25");
        assert_eq!(fastest_select(&profiles).unwrap().name, "MobileNetV1 0.25");
        assert_eq!(greedy_select(&[], 10.0, metric).unwrap_err(), SelectError::NoModels);
    }

    #[test]
    fn top5_metric_changes_base() {
        let profiles = table();
        let cfg = SelectorConfig {
            accuracy_metric: AccuracyMetric::Top5,
            ..Default::default()
        };
        // Under top-5 InceptionResNetV2 (94.0) outranks InceptionV3 (93.8).
        let base = stage1_base(&profiles, &BudgetRange::from_limits(90.0, 80.0), &cfg).unwrap();
        assert_eq!(base.model().name, "InceptionResNetV2");
        let base = stage1_base(&profiles, &BudgetRange::from_limits(90.0, 80.0), &SelectorConfig::default()).unwrap();
        assert_eq!(base.model().name, "InceptionV3");
    }

    #[test]
    fn config_rejects_non_positive_epsilon() {
        let cfg = SelectorConfig {
            denominator_epsilon_ms: 0.0,
            ..Default::default()
        };
        assert!(Selector::new(cfg).is_err());
    }

    #[test]
    fn decision_serializes_all_fields() {
        let profiles = table();
        let mut sel = Selector::new(SelectorConfig::default()).unwrap();
        let d = sel.select(&profiles, &BudgetRange::from_limits(60.0, 50.0)).unwrap();
        let v = d.to_json();
        for key in ["chosen", "base_model", "eligible_set", "exploration_range", "utilities", "probabilities", "fallback"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: SelectionDecision = serde_json::from_value(v).unwrap();
        assert_eq!(back, d);
    }
}
