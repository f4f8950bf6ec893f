//! Accuracy by depth, paired significance tests and report tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::datagen::DatasetRecord;
use crate::seeds::derive_seed;

pub const THRESHOLD: f64 = 0.5;
pub const MIN_RESAMPLES: usize = 1000;
pub const DEFAULT_RESAMPLES: usize = 10_000;
pub const ABSENT: &str = "—";
pub const REPORT_TSV: &str = "report.tsv";
pub const REPORT_TXT: &str = "report.txt";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("at least {MIN_RESAMPLES} resamples are required, got {0}")]
    TooFewResamples(usize),
    #[error("{path}:{line}: {reason}")]
    Dump {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn predicted_label(prob: f64) -> bool {
    prob >= THRESHOLD
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Filter {
    All,
    Provable,
    Cwa,
}

impl Filter {
    pub const ALL: [Filter; 3] = [Filter::All, Filter::Provable, Filter::Cwa];

    pub fn name(self) -> &'static str {
        match self {
            Filter::All => "all",
            Filter::Provable => "provable",
            Filter::Cwa => "cwa",
        }
    }

    pub fn keeps(self, provable: bool) -> bool {
        match self {
            Filter::All => true,
            Filter::Provable => provable,
            Filter::Cwa => !provable,
        }
    }
}

impl std::str::FromStr for Filter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(Filter::All),
            "provable" => Ok(Filter::Provable),
            "cwa" => Ok(Filter::Cwa),
            other => Err(format!("unknown filter `{other}` (all | provable | cwa)")),
        }
    }
}

/// One line of a prediction dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub prob: f64,
    pub label: bool,
    pub depth: usize,
    pub provable: bool,
}

impl Prediction {
    pub fn from_record(id: impl Into<String>, prob: f64, record: &DatasetRecord) -> Self {
        Self {
            id: id.into(),
            prob,
            label: record.label,
            depth: record.depth,
            provable: record.provable,
        }
    }

    pub fn correct(&self) -> bool {
        predicted_label(self.prob) == self.label
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub correct: usize,
    pub total: usize,
}

impl Cell {
    /// `None` for an empty bucket.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

/// Per-depth thresholded accuracy of `predictions` under `filter`. Depths
/// with no surviving example are present with an empty cell.
pub fn accuracy_by_depth(predictions: &[Prediction], filter: Filter) -> BTreeMap<usize, Cell> {
    let mut cells: BTreeMap<usize, Cell> = BTreeMap::new();
    for p in predictions {
        let cell = cells.entry(p.depth).or_default();
        if filter.keeps(p.provable) {
            cell.total += 1;
            cell.correct += usize::from(p.correct());
        }
    }
    cells
}

/// Accuracy of probabilities aligned with dataset records.
pub fn record_accuracy_by_depth(
    probs: &[f64],
    records: &[DatasetRecord],
    filter: Filter,
) -> Result<BTreeMap<usize, Cell>, EvalError> {
    if probs.len() != records.len() {
        return Err(EvalError::Length(probs.len(), records.len()));
    }
    let preds: Vec<Prediction> = probs
        .iter()
        .zip(records)
        .map(|(p, r)| Prediction::from_record("", *p, r))
        .collect();
    Ok(accuracy_by_depth(&preds, filter))
}

pub fn overall(cells: &BTreeMap<usize, Cell>) -> Cell {
    cells.values().fold(Cell::default(), |acc, c| Cell {
        correct: acc.correct + c.correct,
        total: acc.total + c.total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub manifest_hash: String,
    pub cells: BTreeMap<Filter, BTreeMap<usize, Cell>>,
}

impl EvalReport {
    pub fn new(model: impl Into<String>, manifest_hash: impl Into<String>, predictions: &[Prediction]) -> Self {
        Self {
            model: model.into(),
            manifest_hash: manifest_hash.into(),
            cells: Filter::ALL
                .iter()
                .map(|f| (*f, accuracy_by_depth(predictions, *f)))
                .collect(),
        }
    }

    pub fn accuracy(&self, filter: Filter, depth: usize) -> Option<f64> {
        self.cells.get(&filter)?.get(&depth)?.accuracy()
    }

    pub fn depths(&self) -> BTreeSet<usize> {
        self.cells.values().flat_map(|c| c.keys().copied()).collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String, EvalError> {
    Ok(sha256_hex(&fs::read(path).map_err(io_err(path))?))
}

/// Paired sign-flip randomization test on the accuracy difference of two
/// classifiers. Each resample swaps an example's pair of correctness
/// indicators with probability one half; the two-sided p-value is
/// `(#{|Δ*| ≥ |Δ|} + 1) / (n_resamples + 1)`. Resample `r` draws from a
/// stream seeded by `(seed, r)`, so the result is independent of threading.
pub fn randomization_test(
    preds_a: &[bool],
    preds_b: &[bool],
    labels: &[bool],
    n_resamples: usize,
    seed: u64,
) -> Result<f64, EvalError> {
    if preds_a.len() != labels.len() {
        return Err(EvalError::Length(preds_a.len(), labels.len()));
    }
    if preds_b.len() != labels.len() {
        return Err(EvalError::Length(preds_b.len(), labels.len()));
    }
    if n_resamples < MIN_RESAMPLES {
        return Err(EvalError::TooFewResamples(n_resamples));
    }
    // only discordant pairs change under a swap
    let diffs: Vec<i64> = preds_a
        .iter()
        .zip(preds_b)
        .zip(labels)
        .map(|((a, b), y)| i64::from(a == y) - i64::from(b == y))
        .filter(|d| *d != 0)
        .collect();
    let observed: i64 = diffs.iter().sum::<i64>().abs();
    let extreme: usize = (0..n_resamples as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[r]));
            let total: i64 = diffs
                .iter()
                .map(|d| if rng.random_bool(0.5) { -d } else { *d })
                .sum();
            usize::from(total.abs() >= observed)
        })
        .sum();
    Ok((extreme + 1) as f64 / (n_resamples + 1) as f64)
}

pub fn dump_header() -> &'static str {
    "id\tprob\tlabel\tdepth\tprovable"
}

pub fn format_dump(predictions: &[Prediction]) -> String {
    let mut out = String::from(dump_header());
    out.push('\n');
    for p in predictions {
        let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", p.id, p.prob, p.label, p.depth, p.provable);
    }
    out
}

pub fn write_dump(path: &Path, predictions: &[Prediction]) -> Result<(), EvalError> {
    fs::write(path, format_dump(predictions)).map_err(io_err(path))
}

pub fn read_dump(path: &Path) -> Result<Vec<Prediction>, EvalError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |line: usize, reason: String| EvalError::Dump {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 && line == dump_header() || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(bad(i + 1, format!("expected 5 fields, found {}", fields.len())));
        }
        let parse_bool = |s: &str| s.parse::<bool>().map_err(|e| bad(i + 1, e.to_string()));
        out.push(Prediction {
            id: fields[0].to_string(),
            prob: fields[1].parse().map_err(|e| bad(i + 1, format!("{e}")))?,
            label: parse_bool(fields[2])?,
            depth: fields[3].parse().map_err(|e| bad(i + 1, format!("{e}")))?,
            provable: parse_bool(fields[4])?,
        });
    }
    Ok(out)
}

fn cell_text(cell: Option<&Cell>) -> String {
    match cell.and_then(|c| c.accuracy()) {
        Some(a) => format!("{a:.4}"),
        None => ABSENT.to_string(),
    }
}

/// Tab-separated tables: one block per filter, a row per model and a
/// column per depth, accuracies followed by example counts.
pub fn render_tsv(reports: &[EvalReport]) -> String {
    let depths: BTreeSet<usize> = reports.iter().flat_map(|r| r.depths()).collect();
    let mut out = String::new();
    for filter in Filter::ALL {
        out.push_str("filter\tmodel");
        for d in &depths {
            let _ = write!(out, "\tdepth-{d}");
        }
        for d in &depths {
            let _ = write!(out, "\tn-{d}");
        }
        out.push('\n');
        for r in reports {
            let row = r.cells.get(&filter);
            let _ = write!(out, "{}\t{}", filter.name(), r.model);
            for d in &depths {
                let _ = write!(out, "\t{}", cell_text(row.and_then(|c| c.get(d))));
            }
            for d in &depths {
                let n = row.and_then(|c| c.get(d)).map_or(0, |c| c.total);
                let _ = write!(out, "\t{n}");
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Aligned plain-text version of [`render_tsv`], accuracies only.
pub fn render_text(reports: &[EvalReport]) -> String {
    let depths: BTreeSet<usize> = reports.iter().flat_map(|r| r.depths()).collect();
    let name_width = reports
        .iter()
        .map(|r| r.model.chars().count())
        .chain(std::iter::once(5))
        .max()
        .unwrap_or(5);
    let mut out = String::new();
    for filter in Filter::ALL {
        let _ = writeln!(out, "[{}]", filter.name());
        let _ = write!(out, "{:<name_width$}", "model");
        for d in &depths {
            let _ = write!(out, "  {:>8}", format!("depth-{d}"));
        }
        out.push('\n');
        for r in reports {
            let row = r.cells.get(&filter);
            let _ = write!(out, "{:<name_width$}", r.model);
            for d in &depths {
                let _ = write!(out, "  {:>8}", cell_text(row.and_then(|c| c.get(d))));
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Write `report.tsv` and `report.txt` into `dir`.
pub fn emit_report(reports: &[EvalReport], dir: &Path) -> Result<(PathBuf, PathBuf), EvalError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tsv = dir.join(REPORT_TSV);
    let txt = dir.join(REPORT_TXT);
    fs::write(&tsv, render_tsv(reports)).map_err(io_err(&tsv))?;
    fs::write(&txt, render_text(reports)).map_err(io_err(&txt))?;
    Ok((tsv, txt))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(prob: f64, label: bool, depth: usize, provable: bool) -> Prediction {
        Prediction {
            id: format!("x{depth}"),
            prob,
            label,
            depth,
            provable,
        }
    }

    #[test]
    fn all_correct_is_one_everywhere() {
        let preds: Vec<_> = (0..6)
            .flat_map(|d| [pred(0.9, true, d, true), pred(0.1, false, d, false)])
            .collect();
        let report = EvalReport::new("m", "h", &preds);
        for d in 0..6 {
            for f in Filter::ALL {
                assert_eq!(report.accuracy(f, d), Some(1.0));
            }
        }
    }

    #[test]
    fn constant_true_on_balanced_bucket() {
        let preds: Vec<_> = (0..100).map(|i| pred(1.0, i % 2 == 0, 0, true)).collect();
        let acc = accuracy_by_depth(&preds, Filter::All)[&0].accuracy().unwrap();
        assert!((acc - 0.5).abs() <= 0.05);
    }

    #[test]
    fn filters_partition_and_absent_cells() {
        let preds = vec![
            pred(0.9, true, 1, true),
            pred(0.9, false, 1, false),
            pred(0.2, false, 2, true),
        ];
        let all = accuracy_by_depth(&preds, Filter::All);
        let prov = accuracy_by_depth(&preds, Filter::Provable);
        let cwa = accuracy_by_depth(&preds, Filter::Cwa);
        for d in [1, 2] {
            assert_eq!(prov[&d].total + cwa[&d].total, all[&d].total);
        }
        assert_eq!(cwa[&2].accuracy(), None);
        let text = render_text(&[EvalReport::new("m", "h", &preds)]);
        assert!(text.contains(ABSENT));
    }

    #[test]
    fn order_invariance() {
        let mut preds: Vec<_> = (0..30).map(|i| pred((i % 7) as f64 / 7.0, i % 3 == 0, i % 4, i % 5 == 0)).collect();
        let before = EvalReport::new("m", "h", &preds);
        preds.reverse();
        assert_eq!(before, EvalReport::new("m", "h", &preds));
    }

    #[test]
    fn identical_predictions_give_p_one() {
        let labels: Vec<bool> = (0..200).map(|i| i % 3 == 0).collect();
        let preds: Vec<bool> = (0..200).map(|i| i % 2 == 0).collect();
        let p = randomization_test(&preds, &preds, &labels, 1000, 1).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn symmetric_and_bounded() {
        let labels: Vec<bool> = (0..300).map(|i| i % 2 == 0).collect();
        let a: Vec<bool> = (0..300).map(|i| i % 2 == 0 || i % 7 == 0).collect();
        let b: Vec<bool> = (0..300).map(|i| i % 3 == 0).collect();
        let p_ab = randomization_test(&a, &b, &labels, 2000, 9).unwrap();
        let p_ba = randomization_test(&b, &a, &labels, 2000, 9).unwrap();
        assert_eq!(p_ab, p_ba);
        assert!(p_ab > 0.0 && p_ab <= 1.0);
        assert!(randomization_test(&a, &b[..10], &labels, 2000, 9).is_err());
        assert!(randomization_test(&a, &b, &labels, 10, 9).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let preds = vec![pred(0.123456789, true, 3, false), pred(1.0 / 3.0, false, 0, true)];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tsv");
        write_dump(&path, &preds).unwrap();
        assert_eq!(read_dump(&path).unwrap(), preds);
    }

    #[test]
    fn tables_are_grids() {
        let p1: Vec<_> = (0..6).map(|d| pred(0.9, true, d, true)).collect();
        let p2: Vec<_> = (0..6).map(|d| pred(0.1, true, d, true)).collect();
        let reports = [EvalReport::new("a", "h", &p1), EvalReport::new("b", "h", &p2)];
        let tsv = render_tsv(&reports);
        let block: Vec<&str> = tsv.split("\n\n").next().unwrap().lines().collect();
        assert_eq!(block.len(), 3);
        assert_eq!(block[1].split('\t').count(), 2 + 12);
        let dir = tempfile::tempdir().unwrap();
        let (a, _) = emit_report(&reports, dir.path()).unwrap();
        let first = fs::read(&a).unwrap();
        emit_report(&reports, dir.path()).unwrap();
        assert_eq!(first, fs::read(&a).unwrap());
    }
}
