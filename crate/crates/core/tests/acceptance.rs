//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.
//!
//! The sweep-based criteria share one in-memory run at default desk scale.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use dci_core::actors::{generate_actor, test_plan, ActorRecord, GroundTruth};
use dci_core::dci::{estimated_accuracy, table_lookup, ImageClassifier, ImageLabel, Observed, QuadOutcome};
use dci_core::experiment::{actor_features, audit_directionality, run_in_memory, ExperimentConfig, ExperimentRun};
use dci_core::features::extract;
use dci_core::learner::{SortedColumns, GAIN_TIE_TOLERANCE, LEAF_REG};
use dci_core::seed;
use dci_core::stego::{solve_for_costs, StegoSystem};
use dci_core::store::Store;
use dci_core::verdict::write_verdict_csv;
use dci_core::workflow;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Table 1 transcribed as (cb_a, ca_b, ca_a, cb_b) → expected verdict.
#[derive(Debug, PartialEq)]
enum Expected {
    Cover,
    Stego,
    Type1,
    Type2,
}

fn table_one(o: QuadOutcome) -> Expected {
    match (o.cb_a, o.ca_b, o.ca_a, o.cb_b) {
        (0, 1, 0, 0) => Expected::Cover,
        (0, 1, 1, 1) => Expected::Stego,
        (0, 1, 0, 1) | (0, 1, 1, 0) => Expected::Type1,
        (1, _, _, _) | (_, 0, _, _) => Expected::Type2,
        _ => unreachable!("outcomes are binary"),
    }
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut mismatches = Vec::new();
    let mut seen = 0;
    for cb_a in 0..2 {
        for ca_b in 0..2 {
            for ca_a in 0..2 {
                for cb_b in 0..2 {
                    let o = QuadOutcome::new(cb_a, ca_b, ca_a, cb_b);
                    let (label, t1, t2) = table_lookup(o);
                    let got = match (label, t1, t2) {
                        (ImageLabel::Cover, false, false) => Some(Expected::Cover),
                        (ImageLabel::Stego, false, false) => Some(Expected::Stego),
                        (ImageLabel::NotClassified, true, false) => Some(Expected::Type1),
                        (ImageLabel::NotClassified, false, true) => Some(Expected::Type2),
                        _ => None,
                    };
                    if got.as_ref() != Some(&table_one(o)) {
                        mismatches.push(format!("{:?}", (cb_a, ca_b, ca_a, cb_b)));
                    }
                    seen += 1;
                }
            }
        }
    }
    let elapsed = t.elapsed();
    outcome(
        seen == 16 && mismatches.is_empty() && elapsed < Duration::from_secs(1),
        format!("16 outcomes, {} mismatches {:?}, {:?}", mismatches.len(), mismatches, elapsed),
    )
}

fn criterion_2() -> Outcome {
    let mut runner = TestRunner::new(PropConfig {
        cases: 2000,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let strategy = (10usize..=50).prop_flat_map(|n| (Just(n), 0..=2 * n));
    let result = runner.run(&strategy, |(n, inc)| {
        let acc = estimated_accuracy(inc, n);
        let oracle = 1.0 - inc as f64 / (2.0 * n as f64);
        prop_assert!((acc - oracle).abs() <= 1e-12, "n={n} inc={inc}: {acc} vs {oracle}");
        prop_assert!((0.0..=1.0).contains(&acc));
        Ok(())
    });
    match result {
        Ok(()) => outcome(true, "2000 random (INC, n) cases within 1e-12 and in [0, 1]"),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn entropy_bits(beta: f64) -> f64 {
    let term = |q: f64| if q > 0.0 { -q * q.log2() } else { 0.0 };
    2.0 * term(beta) + term(1.0 - 2.0 * beta)
}

fn criterion_3() -> Outcome {
    let mut rng = seed::rng(0xC3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(16..2048);
        let spread = rng.gen_range(0.0..8.0);
        let costs: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.gen_range(-spread / 2.0..=spread / 2.0))).collect();
        let payload = rng.gen_range(0.001..1.5);
        let rates = solve_for_costs(&costs, payload);
        let h = rates.plus.iter().map(|&b| entropy_bits(b)).sum::<f64>() / n as f64;
        worst = worst.max((h - payload).abs());
    }
    let uniform = solve_for_costs(&[1.0; 64], 3f64.log2());
    let beta_err = uniform.plus.iter().map(|b| (b - 1.0 / 3.0).abs()).fold(0.0, f64::max);
    outcome(
        worst <= 1e-6 && beta_err <= 1e-6,
        format!("max |H - payload| = {worst:.2e} over 1000 pairs; uniform log2(3) beta error {beta_err:.2e}"),
    )
}

fn criterion_4(config: &ExperimentConfig) -> Outcome {
    let t = Instant::now();
    let audit = audit_directionality(config, StegoSystem::LsbMatching, 0.4, 200);
    let elapsed = t.elapsed();
    match audit {
        Ok(a) => outcome(
            a.overall_fraction > 0.5 && elapsed < Duration::from_secs(120),
            format!(
                "overall_fraction {:.4} on 200 {} covers, {} of {} features directional, {:?}",
                a.overall_fraction, a.source_id, a.directional_features, a.feature_dim, elapsed
            ),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

/// Fraction of the actor's images the primary classifier labels correctly.
fn measured_primary_accuracy(
    config: &ExperimentConfig,
    actor: &ActorRecord,
    model: &impl ImageClassifier,
) -> f64 {
    let correct = actor
        .images
        .iter()
        .zip(&actor.entries)
        .filter(|(img, entry)| {
            let f = extract(img, config.feature_order).unwrap();
            let truth = u8::from(entry.embedding.embed_count > 0);
            model.classify(&Observed { image: img, features: &f.values }).unwrap() == truth
        })
        .count();
    correct as f64 / actor.images.len() as f64
}

fn criterion_5(config: &ExperimentConfig, run: &ExperimentRun) -> Outcome {
    let plans = test_plan(50, 0.0, seed::derive(config.seed, "calibration", 0)).unwrap();
    let mut errors = Vec::new();
    let (mut innocent, mut guilty) = (0, 0);
    for plan in &plans {
        let actor = generate_actor(&config.test_population(), &config.sources(), plan).unwrap();
        let features = actor_features(config, &actor, &run.models.pairs).unwrap();
        let systems: Vec<usize> = match actor.ground_truth {
            GroundTruth::Innocent => {
                innocent += 1;
                (0..config.systems.len()).collect()
            }
            GroundTruth::Guilty(s) => {
                guilty += 1;
                vec![config.systems.iter().position(|&x| x == s).unwrap()]
            }
        };
        for k in systems {
            let measured = measured_primary_accuracy(config, &actor, &run.models.pairs[k].primary);
            errors.push((features.acc_estimates[k] - measured).abs());
        }
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    outcome(
        mean <= 0.15,
        format!("mean |Acc_hat - measured| = {mean:.4} over {} pairs ({innocent} innocent, {guilty} guilty actors)", errors.len()),
    )
}

fn criterion_6(run: &ExperimentRun, elapsed: Duration) -> Outcome {
    let rows = run.report.rows();
    let first = &rows[0];
    let last = rows.last().unwrap();
    let nan = f64::NAN;
    let (b0, p0) = (first.baseline_accuracy.unwrap_or(nan), first.proposed_accuracy.unwrap_or(nan));
    let (b1, p1) = (last.baseline_accuracy.unwrap_or(nan), last.proposed_accuracy.unwrap_or(nan));
    let matched = first.csm_percent == 0.0 && (b0 - p0).abs() <= 0.05 && b0 >= 0.85 && p0 >= 0.85;
    let mismatched = last.csm_percent == 100.0 && b1 <= 0.65 && p1 >= b1 + 0.15 && last.nc_fraction >= 0.4;
    let monotone = rows.windows(2).all(|w| w[1].nc_fraction >= w[0].nc_fraction);
    let table: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{}%: base {:.3} prop {:.3} nc {:.3}",
                r.csm_percent,
                r.baseline_accuracy.unwrap_or(nan),
                r.proposed_accuracy.unwrap_or(nan),
                r.nc_fraction
            )
        })
        .collect();
    outcome(
        matched && mismatched && monotone && elapsed < Duration::from_secs(15 * 60),
        format!(
            "[{}]; 0% ok={matched} 100% ok={mismatched} nc non-decreasing={monotone}; run {:?}",
            table.join("; "),
            elapsed
        ),
    )
}

fn criterion_7(config: &ExperimentConfig, run: &ExperimentRun) -> Outcome {
    let at_70 = run.report.point(100.0).expect("100% point in sweep");
    let at_65 = run.rejudge(config, 100.0, 0.65).unwrap();
    let nc_lower = at_65.proposed.nc_fraction < at_70.proposed.nc_fraction;
    let acc_not_higher = match (at_65.proposed.accuracy, at_70.proposed.accuracy) {
        (Some(a65), Some(a70)) => a65 <= a70,
        _ => false,
    };
    outcome(
        nc_lower && acc_not_higher,
        format!(
            "threshold 0.70: nc {:.3} acc {:?}; 0.65: nc {:.3} acc {:?}",
            at_70.proposed.nc_fraction, at_70.proposed.accuracy, at_65.proposed.nc_fraction, at_65.proposed.accuracy
        ),
    )
}

/// Exhaustive split search: every feature, every midpoint between distinct
/// values, left side is `x < threshold`.
fn brute_force_split(rows: &[Vec<f64>], grad: &[f64], hess: &[f64]) -> Option<(usize, f64, f64)> {
    let gain_of = |left: &[bool]| {
        let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..left.len() {
            if left[i] {
                gl += grad[i];
                hl += hess[i];
            } else {
                gr += grad[i];
                hr += hess[i];
            }
        }
        let (g, h) = (gl + gr, hl + hr);
        gl * gl / (hl + LEAF_REG) + gr * gr / (hr + LEAF_REG) - g * g / (h + LEAF_REG)
    };
    let mut candidates = Vec::new();
    for j in 0..rows[0].len() {
        let mut values: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let mut t = w[0] + (w[1] - w[0]) / 2.0;
            if t <= w[0] {
                t = w[1];
            }
            let left: Vec<bool> = rows.iter().map(|r| r[j] < t).collect();
            candidates.push((j, t, gain_of(&left)));
        }
    }
    let best = candidates.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    let tol = GAIN_TIE_TOLERANCE * best.abs().max(1.0);
    candidates
        .into_iter()
        .filter(|c| c.2 >= best - tol)
        .min_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)))
}

fn criterion_8() -> Outcome {
    let mut rng = seed::rng(0xC8);
    let mut failures = Vec::new();
    for trial in 0..100 {
        let n = rng.gen_range(2..=8);
        let d = rng.gen_range(1..=5);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        if rng.gen_bool(0.5) {
                            rng.gen_range(0..4) as f64
                        } else {
                            rng.gen_range(-1.0..1.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let grad: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let hess: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.25)).collect();
        let greedy = SortedColumns::new(&rows).best_split(&grad, &hess);
        let oracle = brute_force_split(&rows, &grad, &hess);
        let same = match (greedy, oracle) {
            (None, None) => true,
            (Some(s), Some((j, t, _))) => s.feature == j && s.threshold == t,
            _ => false,
        };
        if !same {
            failures.push(format!("trial {trial}: {greedy:?} vs {oracle:?}"));
        }
    }
    outcome(failures.is_empty(), format!("100 trials, {} mismatches {:?}", failures.len(), failures))
}

fn read_tree(root: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn verdict_bytes(run: &ExperimentRun) -> Vec<u8> {
    let mut buf = Vec::new();
    for p in &run.report.points {
        write_verdict_csv(&mut buf, &p.proposed_verdicts).unwrap();
        write_verdict_csv(&mut buf, &p.baseline_verdicts).unwrap();
    }
    buf
}

fn criterion_9(config: &ExperimentConfig, run: &ExperimentRun) -> Outcome {
    // Second full in-memory run at desk scale.
    let again = run_in_memory(config).unwrap();
    let memory_equal = again.report.summary_csv() == run.report.summary_csv()
        && again.report.summary_json() == run.report.summary_json()
        && verdict_bytes(&again) == verdict_bytes(run);
    // Two disk runs through gen/train/eval, compared file by file.
    let small = config.scaled(0.05).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        let store = Store::new(dir.path());
        workflow::generate(&small, &store).unwrap();
        workflow::train_models(&small, &store).unwrap();
        workflow::evaluate(&small, &store, small.threshold).unwrap();
    }
    let (a, b) = (read_tree(dirs[0].path()), read_tree(dirs[1].path()));
    let disk_equal = a == b;
    outcome(
        memory_equal && disk_equal,
        format!(
            "desk-scale reports identical={memory_equal}; disk runs at scale 0.05 identical={disk_equal} ({} files)",
            a.len()
        ),
    )
}

fn main() {
    let config = ExperimentConfig::default();
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "table-1 fidelity", criterion_1()),
        (2, "accuracy-estimate algebra", criterion_2()),
        (3, "payload solver", criterion_3()),
        (4, "directionality", criterion_4(&config)),
        (8, "learner oracle", criterion_8()),
    ];
    let t = Instant::now();
    let run = run_in_memory(&config).expect("desk-scale run");
    let elapsed = t.elapsed();
    results.push((5, "accuracy-estimate calibration", criterion_5(&config, &run)));
    results.push((6, "csm sweep trend", criterion_6(&run, elapsed)));
    results.push((7, "threshold sensitivity", criterion_7(&config, &run)));
    results.push((9, "reproducibility", criterion_9(&config, &run)));
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (n, name, o) in &results {
        println!("criterion {n} ({name}): {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
