mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use cnnselect_core::fixtures::measured_models;
use cnnselect_core::sim::{compare_pair, run_simulation, sla_range, NetworkModel, Policy, SimulationConfig};
use cnnselect_core::{select, BudgetRange, ModelProfile, ProfileStore, Selector, SelectorConfig};
use cnnselect_gateway::{serve, Gateway, GatewayConfig, InferenceResponse, MockBackend};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracle;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn random_store(rng: &mut ChaCha8Rng) -> Vec<ModelProfile> {
    let k = rng.gen_range(2..=8);
    (0..k)
        .map(|i| {
            let top1 = rng.gen_range(0.3..0.9);
            let top5 = rng.gen_range(top1..=1.0);
            ModelProfile::new(format!("m{i}"), top1, top5, rng.gen_range(10.0..=200.0), rng.gen_range(0.0..=20.0))
        })
        .collect()
}

fn oracle_equivalence() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = SelectorConfig::default();
    let mut fallbacks = 0;
    for case in 0..1000 {
        let store = random_store(&mut rng);
        let upper = rng.gen_range(-20.0..260.0);
        let threshold = rng.gen_range(0.0..60.0);
        let range = BudgetRange::new(upper, threshold);
        let got = select(&store, &range, &cfg, &mut rng).map_err(|e| format!("case {case}: {e}"))?;
        let models: Vec<oracle::Model> = store
            .iter()
            .map(|p| oracle::Model {
                name: p.name.clone(),
                accuracy: p.accuracy_top1,
                mu: p.mean_ms,
                sigma: p.std_ms,
            })
            .collect();
        let want = oracle::select(&models, range.upper_ms, range.lower_ms, cfg.denominator_epsilon_ms);
        fallbacks += usize::from(want.base.is_none());

        ensure(got.base_model == want.base, || format!("case {case}: base {:?} vs {:?}", got.base_model, want.base))?;
        ensure(got.fallback == want.base.is_none(), || format!("case {case}: fallback flag"))?;
        match (&got.exploration_range, want.window) {
            (None, None) => {}
            (Some(w), Some((lo, hi))) => ensure(close(w.low_ms, lo, 1e-9) && close(w.high_ms, hi, 1e-9), || {
                format!("case {case}: window [{}, {}] vs [{lo}, {hi}]", w.low_ms, w.high_ms)
            })?,
            (a, b) => return Err(format!("case {case}: window {a:?} vs {b:?}")),
        }
        let eligible: BTreeSet<String> = got.eligible_set.iter().cloned().collect();
        ensure(eligible == want.eligible, || format!("case {case}: eligible {eligible:?} vs {:?}", want.eligible))?;
        ensure(eligible.contains(&got.chosen), || format!("case {case}: chosen outside eligible set"))?;
        for (name, u) in &want.utilities {
            let g = got.utilities.get(name).copied().unwrap_or(f64::NAN);
            ensure(close(g, *u, 1e-9), || format!("case {case}: U({name}) {g} vs {u}"))?;
        }
        ensure(got.utilities.len() == want.utilities.len(), || format!("case {case}: utility keys"))?;
        for (name, p) in &want.probabilities {
            let g = got.probabilities.get(name).copied().unwrap_or(f64::NAN);
            ensure(close(g, *p, 1e-9), || format!("case {case}: Pr({name}) {g} vs {p}"))?;
        }
        ensure(got.probabilities.len() == want.probabilities.len(), || format!("case {case}: probability keys"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("1000 stores ({fallbacks} fallbacks) match within 1e-9 in {elapsed:.2?}"))
}

fn worked_example() -> Result<String, String> {
    let profiles = measured_models();
    let range = BudgetRange::from_limits(60.0, 50.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let d = select(&profiles, &range, &SelectorConfig::default(), &mut rng).map_err(|e| e.to_string())?;
    ensure(d.base_model.as_deref() == Some("MobileNetV1 1.0"), || format!("base {:?}", d.base_model))?;
    let eligible: BTreeSet<&str> = d.eligible_set.iter().map(String::as_str).collect();
    let expected = BTreeSet::from(["MobileNetV1 1.0", "DenseNet", "NasNet Mobile", "InceptionV3"]);
    ensure(eligible == expected, || format!("eligible {eligible:?}"))?;
    let pr = d.probabilities["DenseNet"];
    ensure(close(pr, 0.873, 0.001), || format!("Pr(DenseNet) = {pr}"))?;
    Ok(format!("base MobileNetV1 1.0, 4 eligible, Pr(DenseNet) = {pr:.4}"))
}

fn sweep_config(seed: u64, policies: Vec<Policy>) -> SimulationConfig {
    SimulationConfig {
        network: NetworkModel::Fixed { ms: 63.0 },
        sla_sweep: sla_range(25.0, 800.0, 25.0).expect("valid range"),
        requests_per_sla: 10_000,
        policies,
        seed,
        ..Default::default()
    }
}

fn convergence() -> Result<String, String> {
    let start = Instant::now();
    let report = run_simulation(&sweep_config(42, vec![Policy::CnnSelect])).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let accuracy: BTreeMap<String, f64> = measured_models().into_iter().map(|p| (p.name, p.accuracy_top1)).collect();
    let modal: Vec<&str> = report
        .per_sla
        .iter()
        .map(|c| c.modal_model().unwrap_or("-"))
        .collect();
    let last = *modal.last().unwrap();
    ensure(last == "NasNet Large", || format!("modal model at 800 ms is {last}"))?;
    let acc: Vec<f64> = modal.iter().map(|m| accuracy[*m]).collect();
    let inversions = acc.windows(2).filter(|w| w[1] < w[0]).count();
    ensure(inversions <= 1, || format!("{inversions} inversions: {modal:?}"))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("modal model at 800 ms is NasNet Large, {inversions} inversion(s), {elapsed:.2?}"))
}

fn greedy_direction() -> Result<String, String> {
    let mut best = Vec::new();
    for seed in 1..=5 {
        let report = run_simulation(&sweep_config(seed, vec![Policy::CnnSelect, Policy::Greedy]))
            .map_err(|e| e.to_string())?;
        let cmp = compare_pair(&report, "cnnselect", "greedy").map_err(|e| e.to_string())?;
        for row in &cmp.rows {
            ensure(row.miss_rate_delta <= 0.0, || {
                format!("seed {seed} sla {}: miss rate delta {}", row.sla_ms, row.miss_rate_delta)
            })?;
        }
        let top = cmp.rows.iter().map(|r| r.latency_reduction_pct).fold(f64::MIN, f64::max);
        ensure(top >= 25.0, || format!("seed {seed}: best latency reduction {top:.1}%"))?;
        best.push(format!("{top:.1}%"));
    }
    Ok(format!("miss rate never above greedy; best latency reduction per seed {}", best.join(", ")))
}

fn low_sla() -> Result<String, String> {
    let t_input = 63.0;
    let sla = 115.0 + 2.0 * t_input;
    let cfg = SimulationConfig {
        network: NetworkModel::Fixed { ms: t_input },
        sla_sweep: vec![sla],
        requests_per_sla: 10_000,
        policies: vec![Policy::CnnSelect],
        seed: 42,
        ..Default::default()
    };
    let report = run_simulation(&cfg).map_err(|e| e.to_string())?;
    let miss = report.cell(sla, "cnnselect").ok_or("missing cell")?.miss_rate;
    ensure(miss < 0.20, || format!("miss rate {miss} at {sla} ms"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = SelectorConfig::default();
    for _ in 0..1000 {
        let store = random_store(&mut rng);
        let budget = rng.gen_range(-500.0..=0.0);
        let range = BudgetRange::new(budget, rng.gen_range(0.0..60.0));
        let d = select(&store, &range, &cfg, &mut rng).map_err(|e| e.to_string())?;
        let fastest = store.iter().min_by(|a, b| a.mean_ms.total_cmp(&b.mean_ms)).unwrap();
        ensure(d.fallback && d.chosen == fastest.name && d.probabilities[&fastest.name] == 1.0, || {
            format!("budget {budget}: no fallback ({})", d.chosen)
        })?;
    }
    Ok(format!("miss rate {:.2}% at {sla} ms; fallback in 1000/1000 draws with budget <= 0", miss * 100.0))
}

fn sampling() -> Result<String, String> {
    let profiles = measured_models();
    let range = BudgetRange::from_limits(60.0, 50.0);
    let mut selector = Selector::new(SelectorConfig { rng_seed: 11, ..Default::default() }).map_err(|e| e.to_string())?;
    let n = 10_000;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut probabilities = BTreeMap::new();
    for _ in 0..n {
        let d = selector.select(&profiles, &range).map_err(|e| e.to_string())?;
        *counts.entry(d.chosen).or_default() += 1;
        probabilities = d.probabilities;
    }
    let mut worst: f64 = 0.0;
    for (name, p) in &probabilities {
        let freq = counts.get(name).copied().unwrap_or(0) as f64 / n as f64;
        worst = worst.max((freq - p).abs());
        ensure((freq - p).abs() <= 0.02, || format!("{name}: frequency {freq} vs {p}"))?;
    }
    ensure(counts.keys().all(|k| probabilities.contains_key(k)), || "draw outside eligible set".into())?;
    Ok(format!("largest frequency deviation {worst:.4} over {n} draws"))
}

fn welford() -> Result<String, String> {
    let store = ProfileStore::from_profiles(vec![ModelProfile::new("m", 0.5, 0.8, 1.0, 0.0)]).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let xs: Vec<f64> = (0..100_000).map(|_| rng.gen_range(5.0..500.0)).collect();
    let mut last = None;
    for &x in &xs {
        last = Some(store.observe("m", x).map_err(|e| e.to_string())?);
    }
    let p = last.unwrap();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let rel_mean = ((p.mean_ms - mean) / mean).abs();
    let rel_std = ((p.std_ms - std) / std).abs();
    ensure(rel_mean <= 1e-9 && rel_std <= 1e-9, || format!("relative errors {rel_mean:e}, {rel_std:e}"))?;
    ensure(p.observation_count == 100_000, || format!("count {}", p.observation_count))?;
    Ok(format!("relative error mean {rel_mean:.1e}, std {rel_std:.1e}"))
}

fn determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let commands: [&[&str]; 2] = [
        &["simulate", "--sla", "150", "--sla", "241", "--sla", "400", "--seed", "42", "--policies", "cnnselect,greedy,fastest,oracle"],
        &[
            "sweep", "--sla-min", "25", "--sla-max", "800", "--sla-step", "25", "--requests", "2000", "--seed", "42",
            "--network", "lognormal:63,0.3", "--cold-start", "lru:4", "--device-fallback",
        ],
    ];
    for (i, args) in commands.iter().enumerate() {
        let mut outputs = Vec::new();
        for run in 0..2 {
            let out = dir.path().join(format!("c{i}r{run}.csv"));
            let usage = dir.path().join(format!("c{i}r{run}_usage.csv"));
            let mut argv = vec!["cnnselect", args[0], "--quiet"];
            argv.extend_from_slice(&args[1..]);
            let (out_s, usage_s) = (out.to_string_lossy().into_owned(), usage.to_string_lossy().into_owned());
            argv.extend(["--out", &out_s, "--usage-out", &usage_s]);
            let code = cnnselect_cli::run(argv);
            ensure(code == 0, || format!("{} exited {code}", args[0]))?;
            outputs.push((std::fs::read(&out).unwrap(), std::fs::read(&usage).unwrap()));
        }
        ensure(outputs[0] == outputs[1], || format!("{} output differs between runs", args[0]))?;
    }
    Ok("simulate and sweep CSVs byte-identical across runs".into())
}

fn gateway() -> Result<String, String> {
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime.block_on(async {
        let store = Arc::new(ProfileStore::from_profiles(measured_models()).map_err(|e| e.to_string())?);
        let cfg = GatewayConfig { test_mode: true, seed: 42, ..Default::default() };
        let gw = Arc::new(Gateway::new(cfg, store, MockBackend { time_scale: 0.02 }));
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
        let base = format!("http://{}", listener.local_addr().unwrap());
        tokio::spawn(serve(listener, gw, std::future::pending()));

        let client = reqwest::Client::new();
        let tasks: Vec<_> = (0..100)
            .map(|i| {
                let client = client.clone();
                let url = format!("{base}/v1/infer");
                tokio::spawn(async move {
                    let body = serde_json::json!({"sla_ms": 120.0 + 4.0 * i as f64, "payload_bytes": 330_000});
                    let resp = client.post(url).json(&body).send().await.map_err(|e| e.to_string())?;
                    if resp.status() != 200 {
                        return Err(format!("status {}", resp.status()));
                    }
                    resp.json::<InferenceResponse>().await.map_err(|e| e.to_string())
                })
            })
            .collect();
        let names: BTreeSet<String> = measured_models().into_iter().map(|p| p.name).collect();
        for task in tasks {
            let r = task.await.map_err(|e| e.to_string())??;
            let total: f64 = r.decision.probabilities.values().sum();
            ensure(close(total, 1.0, 1e-9), || format!("probabilities sum to {total}"))?;
            ensure(names.contains(&r.model) && r.decision.probabilities.contains_key(&r.model), || {
                format!("invalid model {}", r.model)
            })?;
        }
        let text = client
            .get(format!("{base}/v1/metrics"))
            .send()
            .await
            .map_err(|e| e.to_string())?
            .text()
            .await
            .map_err(|e| e.to_string())?;
        let sum: u64 = text
            .lines()
            .filter(|l| l.starts_with("cnnselect_model_requests_total{"))
            .filter_map(|l| l.rsplit_once(' ')?.1.parse::<u64>().ok())
            .sum();
        ensure(sum == 100, || format!("per-model counters sum to {sum}"))?;
        Ok("100 concurrent requests valid, per-model counters sum to 100".to_string())
    })
}

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("algorithm oracle equivalence", oracle_equivalence),
        ("worked example", worked_example),
        ("convergence trend", convergence),
        ("greedy comparison direction", greedy_direction),
        ("low-SLA behavior", low_sla),
        ("statistical sampling", sampling),
        ("profile-store numerics", welford),
        ("determinism", determinism),
        ("gateway integration", gateway),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS criterion {}: {name} ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name} ({detail})", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
