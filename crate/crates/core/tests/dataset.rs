use std::fs;
use std::path::Path;

use unifier_core::datagen::{
    build_splits, read_jsonl, read_manifest, split_path, verify_record, GenConfig, Split, BALANCE_TOLERANCE,
    SURFACE_FILE,
};
use unifier_core::prover::DEFAULT_MAX_DEPTH;

fn config() -> GenConfig {
    GenConfig {
        records_per_depth: 400,
        master_seed: 7,
        ..GenConfig::default()
    }
}

fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn records_verify_and_balance() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let c = config();
    let manifest = build_splits(&c, &root).unwrap();
    for folder in &manifest.folders {
        let total: usize = folder.splits.values().map(|s| s.records).sum();
        assert_eq!(total, c.records_per_depth);
        for s in Split::ALL {
            let records = read_jsonl(&split_path(&root, folder.depth, s)).unwrap();
            let trues = records.iter().filter(|r| r.label).count();
            let fraction = trues as f64 / records.len() as f64;
            assert!(
                (fraction - c.label_balance).abs() <= BALANCE_TOLERANCE,
                "depth {} {s}: {fraction}",
                folder.depth
            );
            for r in &records {
                assert!(verify_record(r, &c.lexicon, DEFAULT_MAX_DEPTH).unwrap(), "{r:?}");
            }
        }
        let varied = read_jsonl(&root.join(format!("depth-{}", folder.depth)).join(SURFACE_FILE)).unwrap();
        for r in &varied {
            assert!(r.surface_variant >= 1);
            assert!(verify_record(r, &c.lexicon, DEFAULT_MAX_DEPTH).unwrap());
        }
    }
    let echoed = read_manifest(&root).unwrap();
    assert_eq!(echoed.config.master_seed, c.master_seed);
    assert_eq!(echoed.folders, manifest.folders);
}

#[test]
fn regeneration_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let c = GenConfig {
        records_per_depth: 120,
        ..config()
    };
    build_splits(&c, &dir.path().join("a")).unwrap();
    build_splits(&c, &dir.path().join("b")).unwrap();
    assert_eq!(snapshot(&dir.path().join("a")), snapshot(&dir.path().join("b")));
    let other = GenConfig {
        master_seed: 8,
        ..c
    };
    build_splits(&other, &dir.path().join("c")).unwrap();
    assert_ne!(snapshot(&dir.path().join("a")), snapshot(&dir.path().join("c")));
}
