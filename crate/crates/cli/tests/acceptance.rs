//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N ... PASS|FAIL` line. Tests share a mutex so that runtime
//! measurements are not distorted by concurrent training.
//!
//! Run with `cargo test --release -p unifier-cli --test acceptance -- --nocapture`
//! to see the lines; the model-training criteria take a while on one core.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unifier_cli::pipeline::{self, EvalOutcome, Variant};
use unifier_cli::RunConfig;
use unifier_core::datagen::{
    build_splits, generate_theory, read_jsonl, split_path, verify_record, GenConfig, Split, BALANCE_TOLERANCE,
};
use unifier_core::eval::{accuracy_by_depth, hash_file, predicted_label, randomization_test, Filter, Prediction};
use unifier_core::prover::{forward_closure, prove, Query, DEFAULT_MAX_DEPTH};
use unifier_core::ruleworld::{Lexicon, Literal, Polarity};
use unifier_neural::gradcheck::grad_check;
use unifier_neural::{tokenize, EncoderConfig, EncoderParams, Vocab};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    // written to the raw handle so the line shows without --nocapture
    let line = format!("criterion {id} {name}: {verdict} ({detail})\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_1_prover_matches_forward_closure() {
    let _g = serial();
    let start = Instant::now();
    let (mut checked, mut mismatches) = (0usize, Vec::new());
    for i in 0..1000u64 {
        let config = GenConfig {
            facts_max: 8,
            rules_max: 6,
            depth_cap: 5,
            planted_chain: (i % 6) as usize,
            ..GenConfig::default()
        };
        let theory = generate_theory(&config, 10_000 + i).unwrap();
        let closure = forward_closure(&theory, DEFAULT_MAX_DEPTH).unwrap();
        for e in theory.entities() {
            for a in theory.attributes() {
                for polarity in [Polarity::Positive, Polarity::Negative] {
                    let literal = Literal::ground(e, a, polarity);
                    let query = Query::new(literal, theory.lexicon()).unwrap();
                    let got = prove(&query, &theory, DEFAULT_MAX_DEPTH).unwrap();
                    let atom = literal.atom().unwrap();
                    // closed-world label and shallowest depth from the model
                    let (label, depth) = if polarity.is_positive() {
                        (closure.model.contains(&atom), closure.depth_of(&atom))
                    } else if closure.negative_facts.contains(&atom) {
                        (true, Some(0))
                    } else {
                        (!closure.model.contains(&atom), closure.depth_of(&atom))
                    };
                    let depth_ok = !got.provable || depth == Some(got.depth);
                    let provable_ok = got.provable == depth.is_some();
                    if got.label != label || !depth_ok || !provable_ok {
                        mismatches.push(format!("{}: {}", theory.id, query.text));
                    }
                    checked += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatches.is_empty() && elapsed < Duration::from_secs(120);
    report(
        1,
        "prover-oracle equivalence",
        pass,
        &format!("{checked} queries over 1000 theories, {} mismatches, {:.1}s", mismatches.len(), elapsed.as_secs_f64()),
    );
    assert!(pass, "first mismatches: {:?}", &mismatches[..mismatches.len().min(5)]);
}

// ---------------------------------------------------------------- 2

fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_2_dataset_fidelity() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let config = GenConfig {
        records_per_depth: 2000,
        master_seed: 2024,
        ..GenConfig::default()
    };
    let manifest = build_splits(&config, &dir.path().join("a")).unwrap();
    let mut all = Vec::new();
    let mut worst_balance: f64 = 0.0;
    for folder in &manifest.folders {
        let mut folder_records = Vec::new();
        for split in Split::ALL {
            folder_records.extend(read_jsonl(&split_path(&dir.path().join("a"), folder.depth, split)).unwrap());
        }
        let trues = folder_records.iter().filter(|r| r.label).count() as f64;
        worst_balance = worst_balance.max((trues / folder_records.len() as f64 - config.label_balance).abs());
        all.extend(folder_records);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    all.shuffle(&mut rng);
    let sample = &all[..10_000];
    let failures = sample
        .iter()
        .filter(|r| !verify_record(r, &config.lexicon, DEFAULT_MAX_DEPTH).unwrap())
        .count();
    build_splits(&config, &dir.path().join("b")).unwrap();
    let identical = tree_bytes(&dir.path().join("a")) == tree_bytes(&dir.path().join("b"));
    let pass = failures == 0 && worst_balance <= BALANCE_TOLERANCE && identical;
    report(
        2,
        "dataset fidelity",
        pass,
        &format!(
            "{} of 10000 sampled records re-verified, worst folder balance deviation {worst_balance:.4}, byte-identical regeneration: {identical}",
            10_000 - failures
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_3_gradient_check() {
    let _g = serial();
    let vocab = Vocab::from_lexicon(&Lexicon::default());
    let config = EncoderConfig {
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        ffn_mult: 2,
        max_len: 48,
        vocab_size: vocab.len(),
        init_std: 0.5,
        seed: 11,
        ..EncoderConfig::default()
    };
    let params = EncoderParams::<f64>::init(&config).unwrap();
    let a = tokenize(
        "Bob is big. Gary is not cold. If someone is big then they are red.",
        "Bob is red?",
        &vocab,
        48,
    )
    .unwrap();
    let b = tokenize("Anne is kind. All kind things are nice.", "Anne is not nice?", &vocab, 48).unwrap();
    let result = grad_check(&params, &[&a, &b], &[true, false], 1e-5, None).unwrap();
    let pass = result.max_relative_error < 1e-4 && result.checked == params.len();
    report(
        3,
        "gradient correctness",
        pass,
        &format!(
            "max relative error {:.2e} over {} parameters ({} numerically zero)",
            result.max_relative_error, result.checked, result.numerically_zero
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_8_randomization_test_calibration() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let labels: Vec<bool> = (0..500).map(|_| rng.random()).collect();
    let perfect = labels.clone();
    let coin: Vec<bool> = labels.iter().map(|y| if rng.random_bool(0.5) { *y } else { !*y }).collect();
    let p_diff = randomization_test(&perfect, &coin, &labels, 10_000, 1).unwrap();
    let p_same = randomization_test(&coin, &coin, &labels, 10_000, 2).unwrap();
    let elapsed = start.elapsed();
    let pass = p_diff < 0.01 && p_same >= 0.99 && elapsed < Duration::from_secs(10);
    report(
        8,
        "randomization test calibration",
        pass,
        &format!("perfect vs coin p={p_diff:.5}, identical p={p_same:.4}, {:.2}s", elapsed.as_secs_f64()),
    );
    assert!(pass);
}

// ------------------------------------------------- trained-model criteria

/// Held-out depth-0 accuracy of a fact checker trained with the default
/// toy encoder on at least 20k depth-0 training queries.
#[test]
fn criterion_4_fact_checker_fidelity() {
    let _g = serial();
    let root = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        depths: vec![0],
        records_per_depth: FU_RECORDS,
        surface_variants: false,
        ..dirs(root.path(), RunConfig::default())
    };
    let start = Instant::now();
    pipeline::gen_data(&cfg).unwrap();
    let train_size = read_jsonl(&split_path(&cfg.data_dir, 0, Split::Train)).unwrap().len();
    let trained = pipeline::train(&cfg, Variant::Fu).unwrap();
    let outcome = pipeline::eval(&cfg, Variant::Fu).unwrap();
    let elapsed = start.elapsed();
    let accuracy = outcome.reports[0].accuracy(Filter::All, 0).unwrap();
    let epochs = trained.log.epochs_run();
    let pass = train_size >= 20_000
        && accuracy >= 0.98
        && epochs <= 20
        && trained.params.frozen
        && elapsed <= Duration::from_secs(3600);
    report(
        4,
        "fact checker fidelity",
        pass,
        &format!(
            "{train_size} training queries, held-out depth-0 accuracy {accuracy:.4}, best epoch {} of {epochs}, {:.0}s",
            trained.log.best_epoch,
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

const FU_RECORDS: usize = 32_000;
const SEEDS: [u64; 3] = [1, 2, 3];

fn dirs(root: &Path, base: RunConfig) -> RunConfig {
    RunConfig {
        data_dir: root.join("data"),
        checkpoint_dir: root.join("checkpoints"),
        report_dir: root.join("reports"),
        ..base
    }
}

/// Shared configuration of the unifier/baseline comparison; only the
/// seed differs between runs.
fn comparison_config(root: &Path, seed: u64) -> RunConfig {
    dirs(
        root,
        RunConfig {
            seed,
            records_per_depth: COMPARISON_RECORDS,
            ..RunConfig::default()
        },
    )
}

const COMPARISON_RECORDS: usize = 8000;

struct SeedRun {
    seed: u64,
    fu_before: String,
    fu_after: String,
    nu: EvalOutcome,
    rt: EvalOutcome,
    ensemble: pipeline::EnsembleOutcome,
}

struct Comparison {
    runs: Vec<SeedRun>,
    _root: tempfile::TempDir,
}

fn comparison() -> &'static Comparison {
    static RUNS: OnceLock<Comparison> = OnceLock::new();
    RUNS.get_or_init(|| {
        let root = tempfile::tempdir().unwrap();
        let runs = SEEDS
            .iter()
            .map(|&seed| {
                let cfg = comparison_config(&root.path().join(format!("seed-{seed}")), seed);
                pipeline::gen_data(&cfg).unwrap();
                pipeline::train(&cfg, Variant::Fu).unwrap();
                let fu_path = pipeline::checkpoint_path(&cfg, Variant::Fu);
                let fu_before = hash_file(&fu_path).unwrap();
                pipeline::train(&cfg, Variant::NuD2).unwrap();
                let fu_after = hash_file(&fu_path).unwrap();
                pipeline::train(&cfg, Variant::RtD2).unwrap();
                let nu = pipeline::eval(&cfg, Variant::NuD2).unwrap();
                let rt = pipeline::eval(&cfg, Variant::RtD2).unwrap();
                let ensemble = pipeline::tune_ensemble(&cfg, Variant::NuD2, Variant::RtD2).unwrap();
                SeedRun {
                    seed,
                    fu_before,
                    fu_after,
                    nu,
                    rt,
                    ensemble,
                }
            })
            .collect();
        Comparison { runs, _root: root }
    })
}

fn cell_accuracy(preds: &[Prediction], filter: Filter, depth: usize) -> Option<(f64, usize)> {
    let cell = *accuracy_by_depth(preds, filter).get(&depth)?;
    Some((cell.accuracy()?, cell.total))
}

fn pooled_accuracy(preds: &[Prediction], filter: Filter) -> f64 {
    let kept: Vec<&Prediction> = preds.iter().filter(|p| filter.keeps(p.provable)).collect();
    kept.iter().filter(|p| predicted_label(p.prob) == p.label).count() as f64 / kept.len() as f64
}

#[test]
fn criterion_5_frozen_fact_checker() {
    let _g = serial();
    let runs = &comparison().runs;
    let pass = runs.iter().all(|r| r.fu_before == r.fu_after);
    let detail: Vec<String> = runs
        .iter()
        .map(|r| format!("seed {}: {} -> {}", r.seed, &r.fu_before[..12], &r.fu_after[..12]))
        .collect();
    report(5, "frozen fact checker", pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_6_depth_generalization() {
    let _g = serial();
    let runs = &comparison().runs;
    let mut ordering_ok = true;
    let mut chance_ok = true;
    let mut detail = Vec::new();
    for depth in [1usize, 3, 4, 5] {
        let mut nu = Vec::new();
        let mut rt = Vec::new();
        let mut bucket = usize::MAX;
        for r in runs {
            let (a, n) = cell_accuracy(&r.nu.test, Filter::Provable, depth).expect("provable test queries");
            let (b, _) = cell_accuracy(&r.rt.test, Filter::Provable, depth).expect("provable test queries");
            nu.push(a);
            rt.push(b);
            bucket = bucket.min(n);
        }
        let nu_mean = nu.iter().sum::<f64>() / nu.len() as f64;
        let rt_mean = rt.iter().sum::<f64>() / rt.len() as f64;
        let band = 0.5 + 3.0 * (0.25 / bucket as f64).sqrt();
        chance_ok &= nu_mean > band;
        if depth >= 3 {
            ordering_ok &= nu_mean > rt_mean;
        }
        detail.push(format!("d{depth}: NU {nu_mean:.4} RT {rt_mean:.4} chance+3σ {band:.4} (n={bucket})"));
    }
    let pass = ordering_ok && chance_ok;
    report(6, "depth generalization trend", pass, &detail.join("; "));
    assert!(pass, "ordering {ordering_ok}, above chance {chance_ok}");
}

#[test]
fn criterion_7_ensemble_dominance() {
    let _g = serial();
    let runs = &comparison().runs;
    let mut val_ok = true;
    let mut tightest = f64::INFINITY;
    for r in runs {
        for (depth, w) in &r.ensemble.weights.depths {
            let Some((nu, _)) = cell_accuracy(&r.nu.val, Filter::All, *depth) else {
                continue;
            };
            let (rt, _) = cell_accuracy(&r.rt.val, Filter::All, *depth).unwrap();
            let (ens, _) = cell_accuracy(&r.ensemble.val, Filter::All, *depth).unwrap();
            val_ok &= w.val_accuracy >= nu.max(rt) && ens >= nu.max(rt);
            tightest = tightest.min(ens - nu.max(rt));
        }
    }
    let ens_test: Vec<Prediction> = runs.iter().flat_map(|r| r.ensemble.test.clone()).collect();
    let rt_test: Vec<Prediction> = runs.iter().flat_map(|r| r.rt.test.clone()).collect();
    let (ens, rt) = (pooled_accuracy(&ens_test, Filter::All), pooled_accuracy(&rt_test, Filter::All));
    let pass = val_ok && ens >= rt;
    report(
        7,
        "ensemble dominance",
        pass,
        &format!("smallest per-depth validation margin {tightest:.4}; test accuracy ensemble {ens:.4} vs RT {rt:.4}"),
    );
    assert!(pass);
}

#[test]
fn criterion_9_surface_variation() {
    let _g = serial();
    let runs = &comparison().runs;
    let mut canonical = Vec::new();
    let mut varied = Vec::new();
    for r in runs {
        canonical.push(pooled_accuracy(&r.nu.test, Filter::Provable));
        varied.push(pooled_accuracy(r.nu.surface.as_ref().expect("surface copies"), Filter::Provable));
    }
    let c = canonical.iter().sum::<f64>() / canonical.len() as f64;
    let v = varied.iter().sum::<f64>() / varied.len() as f64;
    let pass = v >= 0.8 * c;
    report(
        9,
        "zero-shot surface variation",
        pass,
        &format!("NU(D=2) provable accuracy canonical {c:.4}, unseen templates {v:.4}, retained {:.3}", v / c),
    );
    assert!(pass);
}
