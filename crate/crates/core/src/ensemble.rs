//! Per-depth convex combination of two models' probabilities.
//!
//! For each depth the weight `w` on the first model (the second gets
//! `1 - w`) is picked from the grid 0.00, 0.01, …, 1.00 by validation
//! accuracy. Ties go to the smallest weight.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::predicted_label;

pub const GRID_STEPS: usize = 100;
pub const DEFAULT_WEIGHT: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("{path}:{line}: {reason}")]
    Parse {
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthWeight {
    pub weight: f64,
    pub val_accuracy: f64,
    pub examples: usize,
    /// No validation data reached this depth; the weight is the default.
    pub defaulted: bool,
    /// Validation accuracy at each grid point, empty when defaulted.
    #[serde(skip)]
    pub curve: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub depths: BTreeMap<usize, DepthWeight>,
}

impl EnsembleWeights {
    /// Weight for `depth`, falling back to [`DEFAULT_WEIGHT`].
    pub fn weight(&self, depth: usize) -> f64 {
        self.depths.get(&depth).map_or(DEFAULT_WEIGHT, |d| d.weight)
    }
}

pub fn grid_weight(step: usize) -> f64 {
    step as f64 / GRID_STEPS as f64
}

pub fn ensemble_predict(p_first: f64, p_second: f64, weight: f64) -> f64 {
    weight * p_first + (1.0 - weight) * p_second
}

fn accuracy(first: &[f64], second: &[f64], labels: &[bool], weight: f64) -> f64 {
    let correct = first
        .iter()
        .zip(second)
        .zip(labels)
        .filter(|((a, b), y)| predicted_label(ensemble_predict(**a, **b, weight)) == **y)
        .count();
    correct as f64 / labels.len() as f64
}

/// Tune a weight for every depth in `depths` plus every depth in `expected`;
/// depths of `expected` without validation examples get the default weight
/// and are flagged.
pub fn tune_weights(
    first: &[f64],
    second: &[f64],
    labels: &[bool],
    depths: &[usize],
    expected: &[usize],
) -> Result<EnsembleWeights, EnsembleError> {
    for len in [second.len(), labels.len(), depths.len()] {
        if len != first.len() {
            return Err(EnsembleError::Length(first.len(), len));
        }
    }
    type Bucket = (Vec<f64>, Vec<f64>, Vec<bool>);
    let mut buckets: BTreeMap<usize, Bucket> = BTreeMap::new();
    for i in 0..first.len() {
        let b = buckets.entry(depths[i]).or_default();
        b.0.push(first[i]);
        b.1.push(second[i]);
        b.2.push(labels[i]);
    }
    let mut out = EnsembleWeights::default();
    for (depth, (a, b, y)) in &buckets {
        let curve: Vec<f64> = (0..=GRID_STEPS).map(|k| accuracy(a, b, y, grid_weight(k))).collect();
        let mut best = 0;
        for (k, acc) in curve.iter().enumerate() {
            if *acc > curve[best] {
                best = k;
            }
        }
        out.depths.insert(
            *depth,
            DepthWeight {
                weight: grid_weight(best),
                val_accuracy: curve[best],
                examples: y.len(),
                defaulted: false,
                curve,
            },
        );
    }
    for depth in expected {
        out.depths.entry(*depth).or_insert(DepthWeight {
            weight: DEFAULT_WEIGHT,
            val_accuracy: f64::NAN,
            examples: 0,
            defaulted: true,
            curve: Vec::new(),
        });
    }
    Ok(out)
}

pub fn format_weights(weights: &EnsembleWeights) -> String {
    let mut out = String::from("depth\tw\tval_accuracy\texamples\tdefaulted\n");
    for (depth, d) in &weights.depths {
        let _ = writeln!(
            out,
            "{depth}\t{:.2}\t{}\t{}\t{}",
            d.weight, d.val_accuracy, d.examples, d.defaulted
        );
    }
    out
}

pub fn write_weights(path: &Path, weights: &EnsembleWeights) -> Result<(), EnsembleError> {
    fs::write(path, format_weights(weights)).map_err(|source| EnsembleError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_weights(path: &Path) -> Result<EnsembleWeights, EnsembleError> {
    let text = fs::read_to_string(path).map_err(|source| EnsembleError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |line: usize, reason: String| EnsembleError::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut out = EnsembleWeights::default();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad(i + 1, format!("expected 5 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(i + 1, e.to_string()));
        let int = |s: &str| s.parse::<usize>().map_err(|e| bad(i + 1, e.to_string()));
        let weight = num(f[1])?;
        if !(0.0..=1.0).contains(&weight) {
            return Err(bad(i + 1, format!("weight {weight} outside [0, 1]")));
        }
        out.depths.insert(
            int(f[0])?,
            DepthWeight {
                weight,
                val_accuracy: num(f[2])?,
                examples: int(f[3])?,
                defaulted: f[4].parse().map_err(|e: std::str::ParseBoolError| bad(i + 1, e.to_string()))?,
                curve: Vec::new(),
            },
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_arithmetic() {
        assert_eq!(ensemble_predict(0.83, 0.2, 1.0), 0.83);
        assert_eq!(ensemble_predict(0.83, 0.2, 0.0), 0.2);
        assert!((ensemble_predict(0.8, 0.4, 0.5) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn perfect_first_model_gets_full_weight() {
        let labels: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        // barely right against a confident coin: only the endpoint is perfect
        let first: Vec<f64> = labels.iter().map(|y| if *y { 0.501 } else { 0.499 }).collect();
        let second: Vec<f64> = (0..40).map(|i| if i % 4 < 2 { 1.0 } else { 0.0 }).collect();
        let w = tune_weights(&first, &second, &labels, &vec![3; 40], &[]).unwrap();
        assert_eq!(w.weight(3), 1.0);
        assert_eq!(w.depths[&3].val_accuracy, 1.0);
    }

    #[test]
    fn identical_predictors_tie_to_zero() {
        let labels = vec![true, false, true, true];
        let p = vec![0.7, 0.6, 0.2, 0.9];
        let w = tune_weights(&p, &p, &labels, &[0; 4], &[0, 1]).unwrap();
        assert_eq!(w.weight(0), 0.0);
        assert!(w.depths[&1].defaulted);
        assert_eq!(w.weight(1), DEFAULT_WEIGHT);
    }

    #[test]
    fn disjoint_errors_prefer_an_interior_weight() {
        // each model is confidently right where the other is mildly wrong
        let labels = vec![true, true, false, false];
        let first = vec![0.95, 0.45, 0.05, 0.55];
        let second = vec![0.45, 0.95, 0.55, 0.05];
        let w = tune_weights(&first, &second, &labels, &[2; 4], &[]).unwrap();
        let d = &w.depths[&2];
        assert_eq!(d.val_accuracy, 1.0);
        assert!(d.curve[0] < 1.0 && d.curve[GRID_STEPS] < 1.0);
        assert!(d.weight > 0.0 && d.weight < 1.0);
    }

    #[test]
    fn weights_round_trip() {
        let labels = vec![true, false, true];
        let w = tune_weights(&[0.9, 0.2, 0.6], &[0.4, 0.3, 0.7], &labels, &[0, 0, 1], &[5]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.tsv");
        write_weights(&path, &w).unwrap();
        let back = read_weights(&path).unwrap();
        for (depth, d) in &w.depths {
            assert_eq!(back.weight(*depth), d.weight);
            assert_eq!(back.depths[depth].defaulted, d.defaulted);
        }
    }
}
