//! The commands behind the `unifier` binary, callable as library functions.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use unifier_core::datagen::{
    build_splits, folder_name, read_jsonl, read_manifest, split_path, DatasetRecord, Manifest, Split, MANIFEST_FILE,
    SURFACE_FILE,
};
use unifier_core::ensemble::{ensemble_predict, tune_weights, write_weights, EnsembleWeights};
use unifier_core::eval::{
    emit_report, hash_file, predicted_label, randomization_test, read_dump, write_dump, EvalReport, Filter, Prediction,
};
use unifier_neural::checkpoint;
use unifier_neural::trainer::{prepare, train_fu, train_rt, train_uu, Model, TrainLog};
use unifier_neural::{EncoderParams, Vocab};

use crate::config::RunConfig;
use crate::lock::DirLock;

pub const CONFIG_ECHO: &str = "run_config.toml";
pub const WEIGHTS_FILE: &str = "ensemble.weights.tsv";
pub const ENSEMBLE_NAME: &str = "ensemble";

/// Initialization/shuffle stream of the fact checker; every other variant
/// uses stream 1, so a unifier and a baseline trained under one seed start
/// from the same parameters and see batches in the same order.
const FACT_CHECKER_STREAM: u64 = 0;
const SHARED_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "fu")]
    Fu,
    #[serde(rename = "nu-d1")]
    NuD1,
    #[serde(rename = "nu-d2")]
    NuD2,
    #[serde(rename = "rt-d1")]
    RtD1,
    #[serde(rename = "rt-d2")]
    RtD2,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Fu, Variant::NuD1, Variant::NuD2, Variant::RtD1, Variant::RtD2];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Fu => "fu",
            Variant::NuD1 => "nu-d1",
            Variant::NuD2 => "nu-d2",
            Variant::RtD1 => "rt-d1",
            Variant::RtD2 => "rt-d2",
        }
    }

    /// Deepest folder the variant trains on.
    pub fn depth(self) -> usize {
        match self {
            Variant::Fu => 0,
            Variant::NuD1 | Variant::RtD1 => 1,
            Variant::NuD2 | Variant::RtD2 => 2,
        }
    }

    pub fn is_unified(self) -> bool {
        matches!(self, Variant::NuD1 | Variant::NuD2)
    }

    /// Depth folders whose records the variant trains on. A unified model
    /// trains its unifier on one folder; the fact checker already covered
    /// depth 0.
    pub fn training_depths(self) -> Vec<usize> {
        match self {
            Variant::Fu => vec![0],
            Variant::NuD1 | Variant::NuD2 => vec![self.depth()],
            Variant::RtD1 | Variant::RtD2 => (0..=self.depth()).collect(),
        }
    }

    fn stream(self) -> u64 {
        if self == Variant::Fu {
            FACT_CHECKER_STREAM
        } else {
            SHARED_STREAM
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant `{s}` (fu | nu-d1 | nu-d2 | rt-d1 | rt-d2)"))
    }
}

pub fn checkpoint_path(cfg: &RunConfig, variant: Variant) -> PathBuf {
    cfg.checkpoint_dir.join(format!("{variant}.ckpt"))
}

pub fn dump_path(cfg: &RunConfig, name: &str, split: &str) -> PathBuf {
    cfg.report_dir.join(format!("{name}.{split}.tsv"))
}

pub fn report_file_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.report_dir.join(format!("{name}.report.json"))
}

fn write_echo(path: &Path, cfg: &RunConfig) -> Result<()> {
    fs::write(path, cfg.to_toml()).with_context(|| format!("writing {}", path.display()))
}

pub fn load_manifest(cfg: &RunConfig) -> Result<Manifest> {
    if !cfg.data_dir.join(MANIFEST_FILE).exists() {
        bail!("no dataset in {}: run `unifier gen-data` first", cfg.data_dir.display());
    }
    Ok(read_manifest(&cfg.data_dir)?)
}

fn manifest_hash(cfg: &RunConfig) -> Result<String> {
    Ok(hash_file(&cfg.data_dir.join(MANIFEST_FILE))?)
}

pub fn vocab(manifest: &Manifest) -> Vocab {
    Vocab::from_lexicon(&manifest.config.lexicon)
}

pub fn records(cfg: &RunConfig, manifest: &Manifest, depth: usize, split: Split) -> Result<Vec<DatasetRecord>> {
    if !manifest.folders.iter().any(|f| f.depth == depth) {
        bail!(
            "{} has no {} folder: add {depth} to `depths` and run `unifier gen-data` first",
            cfg.data_dir.display(),
            folder_name(depth)
        );
    }
    Ok(read_jsonl(&split_path(&cfg.data_dir, depth, split))?)
}

#[derive(Debug)]
pub struct GenOutcome {
    pub manifest: Manifest,
    /// The directory already held a dataset for this exact configuration.
    pub reused: bool,
}

/// Generate every depth folder, or keep the existing dataset when it was
/// produced by an identical generator configuration.
pub fn gen_data(cfg: &RunConfig) -> Result<GenOutcome> {
    let _lock = DirLock::acquire_beside(&cfg.data_dir)?;
    let gen = cfg.gen_config()?;
    if cfg.data_dir.join(MANIFEST_FILE).exists() {
        let existing = read_manifest(&cfg.data_dir)?;
        if serde_json::to_value(&existing.config)? == serde_json::to_value(&gen)? {
            return Ok(GenOutcome {
                manifest: existing,
                reused: true,
            });
        }
        log::info!("{} holds a dataset for another configuration; regenerating", cfg.data_dir.display());
    }
    let manifest = build_splits(&gen, &cfg.data_dir)?;
    write_echo(&cfg.data_dir.join(CONFIG_ECHO), cfg)?;
    Ok(GenOutcome {
        manifest,
        reused: false,
    })
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: TrainLog,
    pub params: EncoderParams<f32>,
}

fn load_checkpoint(cfg: &RunConfig, variant: Variant) -> Result<(EncoderParams<f32>, checkpoint::Header)> {
    let path = checkpoint_path(cfg, variant);
    if !path.exists() {
        bail!("no checkpoint at {}: run `unifier train --variant {variant}` first", path.display());
    }
    Ok(checkpoint::load(&path)?)
}

pub fn train(cfg: &RunConfig, variant: Variant) -> Result<TrainOutcome> {
    let manifest = load_manifest(cfg)?;
    let vocab = vocab(&manifest);
    let mut train_records = Vec::new();
    let mut val_records = Vec::new();
    for depth in variant.training_depths() {
        train_records.extend(records(cfg, &manifest, depth, Split::Train)?);
        val_records.extend(records(cfg, &manifest, depth, Split::Val)?);
    }
    let fact_checker = if variant.is_unified() {
        let (fu, _) = load_checkpoint(cfg, Variant::Fu)?;
        if !fu.frozen {
            bail!("{} is not frozen: retrain it with `unifier train --variant fu`", checkpoint_path(cfg, Variant::Fu).display());
        }
        Some(fu)
    } else {
        None
    };
    let _lock = DirLock::acquire(&cfg.checkpoint_dir)?;
    let train_set = prepare(&train_records, &vocab, cfg.max_len)?;
    let val_set = prepare(&val_records, &vocab, cfg.max_len)?;
    let encoder = cfg.encoder_config(vocab.len(), variant.stream());
    let train_cfg = cfg.train_config(variant.stream());
    log::info!(
        "training {variant} on {} examples from depths {:?} ({} validation)",
        train_set.len(),
        variant.training_depths(),
        val_set.len()
    );
    let (params, log) = match (&fact_checker, variant) {
        (_, Variant::Fu) => train_fu(&train_set, &val_set, &encoder, &train_cfg)?,
        (Some(fu), _) => train_uu(&train_set, &val_set, fu, &encoder, &train_cfg)?,
        (None, _) => train_rt(&train_set, &val_set, &encoder, &train_cfg)?,
    };
    let meta = serde_json::json!({
        "variant": variant.name(),
        "config": cfg,
        "manifest_hash": manifest_hash(cfg)?,
        "fact_checker_checksum": fact_checker.as_ref().map(|f| f.checksum()),
        "best_epoch": log.best_epoch,
        "epochs_run": log.epochs_run(),
        "best_val_accuracy": log.best_val_accuracy,
    });
    let path = checkpoint_path(cfg, variant);
    checkpoint::save(&path, &params, meta)?;
    let log_path = cfg.checkpoint_dir.join(format!("{variant}.log.tsv"));
    fs::write(&log_path, log.to_tsv()).with_context(|| format!("writing {}", log_path.display()))?;
    write_echo(&cfg.checkpoint_dir.join(format!("{variant}.config.toml")), cfg)?;
    vocab.save(&cfg.checkpoint_dir.join("vocab.txt"))?;
    Ok(TrainOutcome {
        checkpoint: path,
        log,
        params,
    })
}

/// Load a trained predictor. A unified model is refused if its fact
/// checker changed after the unifier was trained against it.
pub fn load_model(cfg: &RunConfig, variant: Variant) -> Result<Model> {
    let (params, header) = load_checkpoint(cfg, variant)?;
    if !variant.is_unified() {
        return Ok(Model::Single(params));
    }
    let (fu, _) = load_checkpoint(cfg, Variant::Fu)?;
    let expected = header.meta["fact_checker_checksum"].as_str().unwrap_or_default();
    if fu.checksum() != expected {
        bail!(
            "{} changed after {variant} was trained: run `unifier train --variant {variant}` again",
            checkpoint_path(cfg, Variant::Fu).display()
        );
    }
    Ok(Model::Unified {
        fact_checker: fu,
        unifier: params,
    })
}

fn record_id(record: &DatasetRecord, line: usize) -> String {
    format!("{}#{line}", record.theory_id)
}

pub fn predict_records(model: &Model, vocab: &Vocab, records: &[DatasetRecord], max_len: usize) -> Result<Vec<Prediction>> {
    let examples = prepare(records, vocab, max_len)?;
    let probs = model.predict(&examples)?;
    Ok(records
        .iter()
        .zip(probs)
        .enumerate()
        .map(|(i, (r, p))| Prediction::from_record(record_id(r, i), f64::from(p), r))
        .collect())
}

/// What `report` combines: the reports plus the configuration behind them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportFile {
    pub config: RunConfig,
    pub reports: Vec<EvalReport>,
}

fn save_reports(cfg: &RunConfig, name: &str, reports: Vec<EvalReport>) -> Result<()> {
    let path = report_file_path(cfg, name);
    let file = ReportFile {
        config: cfg.clone(),
        reports,
    };
    fs::write(&path, serde_json::to_string_pretty(&file)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    emit_report(&file.reports, &cfg.report_dir.join(name))?;
    Ok(())
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub val: Vec<Prediction>,
    pub test: Vec<Prediction>,
    /// Test copies rendered with templates never used in training.
    pub surface: Option<Vec<Prediction>>,
    pub reports: Vec<EvalReport>,
}

/// Predict the validation and test split of every depth folder; writes
/// prediction dumps and accuracy tables.
pub fn eval(cfg: &RunConfig, variant: Variant) -> Result<EvalOutcome> {
    let manifest = load_manifest(cfg)?;
    let hash = manifest_hash(cfg)?;
    let vocab = vocab(&manifest);
    let model = load_model(cfg, variant)?;
    let _lock = DirLock::acquire(&cfg.report_dir)?;
    let (mut val, mut test, mut surface) = (Vec::new(), Vec::new(), Vec::new());
    let mut has_surface = false;
    for folder in &manifest.folders {
        val.extend(predict_records(&model, &vocab, &records(cfg, &manifest, folder.depth, Split::Val)?, cfg.max_len)?);
        test.extend(predict_records(&model, &vocab, &records(cfg, &manifest, folder.depth, Split::Test)?, cfg.max_len)?);
        let varied = cfg.data_dir.join(folder_name(folder.depth)).join(SURFACE_FILE);
        if varied.exists() {
            has_surface = true;
            surface.extend(predict_records(&model, &vocab, &read_jsonl(&varied)?, cfg.max_len)?);
        }
    }
    let name = variant.name();
    write_dump(&dump_path(cfg, name, "val"), &val)?;
    write_dump(&dump_path(cfg, name, "test"), &test)?;
    let mut reports = vec![EvalReport::new(name, &hash, &test)];
    let surface = if has_surface {
        write_dump(&dump_path(cfg, name, "surface"), &surface)?;
        reports.push(EvalReport::new(format!("{name}/surface"), &hash, &surface));
        Some(surface)
    } else {
        None
    };
    save_reports(cfg, name, reports.clone())?;
    write_echo(&cfg.report_dir.join(format!("{name}.config.toml")), cfg)?;
    Ok(EvalOutcome {
        val,
        test,
        surface,
        reports,
    })
}

/// Pair predictions of two models by record id; both must cover the same
/// records.
pub fn align<'a>(a: &'a [Prediction], b: &'a [Prediction]) -> Result<Vec<(&'a Prediction, &'a Prediction)>> {
    if a.len() != b.len() {
        bail!("prediction dumps differ in size ({} vs {})", a.len(), b.len());
    }
    let index: HashMap<&str, &Prediction> = b.iter().map(|p| (p.id.as_str(), p)).collect();
    a.iter()
        .map(|p| {
            let q = index.get(p.id.as_str()).ok_or_else(|| anyhow!("record {} missing from the second dump", p.id))?;
            if q.label != p.label || q.depth != p.depth {
                bail!("record {} has different gold data in the two dumps", p.id);
            }
            Ok((p, *q))
        })
        .collect()
}

fn read_required_dump(cfg: &RunConfig, name: &str, split: &str, producer: &str) -> Result<Vec<Prediction>> {
    let path = dump_path(cfg, name, split);
    if !path.exists() {
        bail!("no predictions at {}: run `{producer}` first", path.display());
    }
    Ok(read_dump(&path)?)
}

fn combine(pairs: &[(&Prediction, &Prediction)], weights: &EnsembleWeights) -> Vec<Prediction> {
    pairs
        .iter()
        .map(|(a, b)| Prediction {
            prob: ensemble_predict(a.prob, b.prob, weights.weight(a.depth)),
            ..(*a).clone()
        })
        .collect()
}

#[derive(Debug)]
pub struct EnsembleOutcome {
    pub weights: EnsembleWeights,
    pub val: Vec<Prediction>,
    pub test: Vec<Prediction>,
    pub reports: Vec<EvalReport>,
}

/// Tune per-depth weights on validation predictions of a unified model
/// and a baseline, then apply them to both models' test predictions.
pub fn tune_ensemble(cfg: &RunConfig, unified: Variant, baseline: Variant) -> Result<EnsembleOutcome> {
    let manifest = load_manifest(cfg)?;
    let hash = manifest_hash(cfg)?;
    let read = |v: Variant, split: &str| read_required_dump(cfg, v.name(), split, &format!("unifier eval --variant {v}"));
    let (nu_val, rt_val) = (read(unified, "val")?, read(baseline, "val")?);
    let pairs = align(&nu_val, &rt_val)?;
    let first: Vec<f64> = pairs.iter().map(|(a, _)| a.prob).collect();
    let second: Vec<f64> = pairs.iter().map(|(_, b)| b.prob).collect();
    let labels: Vec<bool> = pairs.iter().map(|(a, _)| a.label).collect();
    let depths: Vec<usize> = pairs.iter().map(|(a, _)| a.depth).collect();
    let weights = tune_weights(&first, &second, &labels, &depths, &manifest.config.depth_targets)?;
    let _lock = DirLock::acquire(&cfg.report_dir)?;
    write_weights(&cfg.report_dir.join(WEIGHTS_FILE), &weights)?;
    let val = combine(&pairs, &weights);
    let (nu_test, rt_test) = (read(unified, "test")?, read(baseline, "test")?);
    let test = combine(&align(&nu_test, &rt_test)?, &weights);
    write_dump(&dump_path(cfg, ENSEMBLE_NAME, "val"), &val)?;
    write_dump(&dump_path(cfg, ENSEMBLE_NAME, "test"), &test)?;
    let mut reports = vec![EvalReport::new(ENSEMBLE_NAME, &hash, &test)];
    let surface = (dump_path(cfg, unified.name(), "surface"), dump_path(cfg, baseline.name(), "surface"));
    if surface.0.exists() && surface.1.exists() {
        let (a, b) = (read_dump(&surface.0)?, read_dump(&surface.1)?);
        let varied = combine(&align(&a, &b)?, &weights);
        write_dump(&dump_path(cfg, ENSEMBLE_NAME, "surface"), &varied)?;
        reports.push(EvalReport::new(format!("{ENSEMBLE_NAME}/surface"), &hash, &varied));
    }
    save_reports(cfg, ENSEMBLE_NAME, reports.clone())?;
    Ok(EnsembleOutcome {
        weights,
        val,
        test,
        reports,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigTest {
    pub p_value: f64,
    pub examples: usize,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
}

/// Paired randomization test between two prediction dumps, optionally
/// restricted by provability and depth.
pub fn sig_test(
    a: &[Prediction],
    b: &[Prediction],
    resamples: usize,
    seed: u64,
    filter: Filter,
    depth: Option<usize>,
) -> Result<SigTest> {
    let pairs: Vec<_> = align(a, b)?
        .into_iter()
        .filter(|(p, _)| filter.keeps(p.provable) && depth.is_none_or(|d| d == p.depth))
        .collect();
    if pairs.is_empty() {
        bail!("no records left after filtering");
    }
    let preds_a: Vec<bool> = pairs.iter().map(|(p, _)| predicted_label(p.prob)).collect();
    let preds_b: Vec<bool> = pairs.iter().map(|(_, q)| predicted_label(q.prob)).collect();
    let labels: Vec<bool> = pairs.iter().map(|(p, _)| p.label).collect();
    let acc = |preds: &[bool]| preds.iter().zip(&labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64;
    Ok(SigTest {
        p_value: randomization_test(&preds_a, &preds_b, &labels, resamples, seed)?,
        examples: labels.len(),
        accuracy_a: acc(&preds_a),
        accuracy_b: acc(&preds_b),
    })
}

/// Combine saved reports into one table pair under `out`.
pub fn report(cfg: &RunConfig, files: &[PathBuf], out: &Path) -> Result<(PathBuf, PathBuf)> {
    let files = if files.is_empty() {
        let mut found: Vec<PathBuf> = fs::read_dir(&cfg.report_dir)
            .with_context(|| format!("reading {}: run `unifier eval` first", cfg.report_dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(".report.json"))
            .collect();
        found.sort();
        if found.is_empty() {
            bail!("no reports in {}: run `unifier eval` first", cfg.report_dir.display());
        }
        found
    } else {
        files.to_vec()
    };
    let mut reports = Vec::new();
    for path in &files {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: ReportFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        reports.extend(file.reports);
    }
    let _lock = DirLock::acquire(out)?;
    Ok(emit_report(&reports, out)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(id: &str, prob: f64, label: bool) -> Prediction {
        Prediction {
            id: id.into(),
            prob,
            label,
            depth: 1,
            provable: true,
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("nu-d3".parse::<Variant>().is_err());
        assert_eq!(Variant::RtD2.training_depths(), vec![0, 1, 2]);
        assert_eq!(Variant::NuD2.training_depths(), vec![2]);
    }

    #[test]
    fn align_pairs_by_id_regardless_of_order() {
        let a = vec![pred("x", 0.9, true), pred("y", 0.1, false)];
        let b = vec![pred("y", 0.6, false), pred("x", 0.2, true)];
        let pairs = align(&a, &b).unwrap();
        assert_eq!(pairs[0].1.prob, 0.2);
        assert_eq!(pairs[1].1.prob, 0.6);
        assert!(align(&a, &[pred("x", 0.5, true), pred("z", 0.5, false)]).is_err());
        assert!(align(&a, &[pred("x", 0.5, false), pred("y", 0.5, false)]).is_err());
    }

    #[test]
    fn sig_test_on_identical_dumps_is_one() {
        let a: Vec<Prediction> = (0..50).map(|i| pred(&i.to_string(), 0.7, i % 3 == 0)).collect();
        let t = sig_test(&a, &a, 1000, 1, Filter::All, None).unwrap();
        assert_eq!(t.p_value, 1.0);
        assert_eq!(t.accuracy_a, t.accuracy_b);
    }
}
