//! Brute-force reference for the three-stage selector, written from the
//! definitions with plain loops and no shared code.

use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone)]
pub struct Model {
    pub name: String,
    pub accuracy: f64,
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug)]
pub struct Expected {
    pub base: Option<String>,
    pub window: Option<(f64, f64)>,
    pub eligible: BTreeSet<String>,
    pub utilities: BTreeMap<String, f64>,
    pub probabilities: BTreeMap<String, f64>,
}

fn better(a: &Model, b: &Model) -> bool {
    if a.accuracy != b.accuracy {
        return a.accuracy > b.accuracy;
    }
    if a.mu != b.mu {
        return a.mu < b.mu;
    }
    a.name < b.name
}

pub fn select(models: &[Model], t_u: f64, t_l: f64, eps: f64) -> Expected {
    let mut base: Option<&Model> = None;
    for m in models {
        let feasible = m.mu + m.sigma < t_u && m.mu - m.sigma < t_l;
        if feasible && base.map_or(true, |b| better(m, b)) {
            base = Some(m);
        }
    }

    let Some(base) = base else {
        let mut fastest = &models[0];
        for m in models {
            if m.mu < fastest.mu || (m.mu == fastest.mu && m.name < fastest.name) {
                fastest = m;
            }
        }
        return Expected {
            base: None,
            window: None,
            eligible: BTreeSet::from([fastest.name.clone()]),
            utilities: BTreeMap::new(),
            probabilities: BTreeMap::from([(fastest.name.clone(), 1.0)]),
        };
    };

    let a = base.mu + base.sigma;
    let b = 2.0 * t_l - base.mu + base.sigma;
    let (lo, hi) = (a.min(b), a.max(b));

    let mut eligible = BTreeSet::new();
    for m in models {
        if (lo <= m.mu && m.mu <= hi && m.mu + m.sigma < t_u) || m.name == base.name {
            eligible.insert(m.name.clone());
        }
    }

    let mut utilities = BTreeMap::new();
    let mut total = 0.0;
    for m in models.iter().filter(|m| eligible.contains(&m.name)) {
        let mut distance = (t_l - m.mu).abs();
        if distance < eps {
            distance = eps;
        }
        let u = m.accuracy * (t_u - (m.mu + m.sigma)) / distance;
        total += u;
        utilities.insert(m.name.clone(), u);
    }
    let probabilities = utilities
        .iter()
        .map(|(k, u)| (k.clone(), if total > 0.0 { u / total } else { 1.0 / eligible.len() as f64 }))
        .collect();

    Expected {
        base: Some(base.name.clone()),
        window: Some((lo, hi)),
        eligible,
        utilities,
        probabilities,
    }
}
