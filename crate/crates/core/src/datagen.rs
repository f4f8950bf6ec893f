//! Synthetic theories and depth-labelled query sets.
//!
//! Datasets are laid out as one folder per query depth (`depth-0` …
//! `depth-5`), each holding `train.jsonl`, `val.jsonl` and `test.jsonl`.
//! Every record carries its own serialized context, and every label, depth
//! and provable flag comes from the prover. Theories never cross splits.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prover::{forward_closure, prove, stratify, ProverError, Query, DEFAULT_MAX_DEPTH};
use crate::ruleworld::{
    lexicalize_query, parse_any_statement, parse_theory_any, serialize_theory,
    serialize_theory_with, Atom, AttributeId, EntityId, Fact, Lexicon, Literal, Polarity, Rule,
    RuleWorldError, Theory,
};
use crate::seeds::derive_seed;

/// Attempts per theory before generation gives up.
pub const MAX_RETRIES: usize = 1000;
pub const BALANCE_TOLERANCE: f64 = 0.05;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SURFACE_FILE: &str = "test_surface.jsonl";

const THEORY_CHUNK: usize = 32;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error("no valid theory after {MAX_RETRIES} attempts (seed {seed})")]
    Exhausted { seed: u64 },
    #[error("folder depth-{depth}/{split} stalled at {produced} of {target} records")]
    Stalled {
        depth: usize,
        split: Split,
        produced: usize,
        target: usize,
    },
    #[error(transparent)]
    RuleWorld(#[from] RuleWorldError),
    #[error(transparent)]
    Prover(#[from] ProverError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad record: {0}")]
    Record(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GenError + '_ {
    move |source| GenError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

mod lexicon_serde {
    use std::sync::Arc;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::ruleworld::{Lexicon, LexiconSpec};

    pub fn serialize<S: Serializer>(lex: &Arc<Lexicon>, s: S) -> Result<S::Ok, S::Error> {
        lex.spec().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Arc<Lexicon>, D::Error> {
        let spec = LexiconSpec::deserialize(d)?;
        Lexicon::new(spec)
            .map(Arc::new)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenConfig {
    #[serde(with = "lexicon_serde")]
    pub lexicon: Arc<Lexicon>,
    pub entities: usize,
    pub attributes: usize,
    pub facts_min: usize,
    pub facts_max: usize,
    pub rules_min: usize,
    pub rules_max: usize,
    pub max_antecedents: usize,
    pub negative_fact_fraction: f64,
    pub negated_antecedent_fraction: f64,
    pub ground_rule_fraction: f64,
    /// Length of a rule chain planted in every theory (0 disables).
    pub planted_chain: usize,
    /// Deepest derivation a generated theory may contain.
    pub depth_cap: usize,
    pub max_depth: usize,
    pub depth_targets: Vec<usize>,
    pub queries_per_theory: usize,
    pub label_balance: f64,
    pub negative_query_fraction: f64,
    pub split_fractions: [f64; 3],
    pub records_per_depth: usize,
    pub surface_variants: bool,
    pub master_seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            lexicon: Arc::new(Lexicon::default()),
            entities: 3,
            attributes: 7,
            facts_min: 3,
            facts_max: 5,
            rules_min: 2,
            rules_max: 5,
            max_antecedents: 2,
            negative_fact_fraction: 0.2,
            negated_antecedent_fraction: 0.1,
            ground_rule_fraction: 0.1,
            planted_chain: 0,
            depth_cap: 5,
            max_depth: DEFAULT_MAX_DEPTH,
            depth_targets: (0..=5).collect(),
            queries_per_theory: 4,
            label_balance: 0.5,
            negative_query_fraction: 0.5,
            split_fractions: [0.625, 0.25, 0.125],
            records_per_depth: 8000,
            surface_variants: true,
            master_seed: 42,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::Config(m.to_string()));
        let sum: f64 = self.split_fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.split_fractions.iter().any(|f| *f < 0.0) {
            return bad("split fractions must be non-negative and sum to 1");
        }
        if self.depth_targets.iter().any(|d| *d > self.max_depth) {
            return bad("depth targets must not exceed max_depth");
        }
        if self.depth_cap > self.max_depth {
            return bad("depth_cap must not exceed max_depth");
        }
        if self.entities == 0 || self.entities > self.lexicon.entity_count() {
            return bad("entity count must be between 1 and the lexicon size");
        }
        if self.attributes < 2 || self.attributes > self.lexicon.attribute_count() {
            return bad("attribute count must be between 2 and the lexicon size");
        }
        if self.planted_chain + 1 > self.lexicon.attribute_count() {
            return bad("planted chain needs more attributes than the lexicon has");
        }
        if self.facts_min > self.facts_max || self.rules_min > self.rules_max {
            return bad("count ranges must have min <= max");
        }
        if self.facts_max > self.entities * self.attributes.max(self.planted_chain + 1) {
            return bad("more facts requested than distinct atoms");
        }
        if !(1..=crate::ruleworld::MAX_ANTECEDENTS).contains(&self.max_antecedents)
            || self.max_antecedents >= self.attributes
        {
            return bad("max_antecedents must be 1..=3 and below the attribute count");
        }
        for p in [
            self.negative_fact_fraction,
            self.negated_antecedent_fraction,
            self.ground_rule_fraction,
            self.label_balance,
            self.negative_query_fraction,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad("fractions must lie in [0, 1]");
            }
        }
        if self.queries_per_theory == 0 {
            return bad("queries_per_theory must be positive");
        }
        Ok(())
    }

    /// Records per split: rounded fractions, remainder to the last nonzero split.
    pub fn split_counts(&self) -> [usize; 3] {
        let n = self.records_per_depth;
        let mut counts = [0usize; 3];
        let last = (0..3).rev().find(|i| self.split_fractions[*i] > 0.0).unwrap_or(0);
        let mut used = 0;
        for (i, (count, fraction)) in counts.iter_mut().zip(self.split_fractions).enumerate() {
            if i == last {
                *count = n.saturating_sub(used);
                break;
            }
            *count = ((n as f64) * fraction).round() as usize;
            used += *count;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub theory_id: String,
    pub context: String,
    pub question: String,
    pub label: bool,
    pub depth: usize,
    pub provable: bool,
    pub split: Split,
    pub surface_variant: u32,
}

/// Generate a valid theory. Deterministic in `(config, seed)`.
pub fn generate_theory(config: &GenConfig, seed: u64) -> Result<Theory, GenError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = format!("t{seed:016x}");
    for _ in 0..MAX_RETRIES {
        if let Some(theory) = try_theory(config, &mut rng, &id)? {
            return Ok(theory);
        }
    }
    Err(GenError::Exhausted { seed })
}

fn sample_distinct<T: Copy>(rng: &mut ChaCha8Rng, pool: &[T], n: usize) -> Vec<T> {
    rand::seq::index::sample(rng, pool.len(), n)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

fn try_theory(config: &GenConfig, rng: &mut ChaCha8Rng, id: &str) -> Result<Option<Theory>, GenError> {
    let lex = &config.lexicon;
    let all_entities: Vec<EntityId> = (0..lex.entity_count() as u16).map(EntityId).collect();
    let all_attributes: Vec<AttributeId> = (0..lex.attribute_count() as u16).map(AttributeId).collect();
    let entities = sample_distinct(rng, &all_entities, config.entities);
    let attributes = sample_distinct(rng, &all_attributes, config.attributes.max(config.planted_chain + 1));

    let mut facts: Vec<Literal> = Vec::new();
    let mut rules: Vec<(Vec<Literal>, Literal)> = Vec::new();
    let pos = Polarity::Positive;

    let chain = config.planted_chain;
    let chain_end = if chain > 0 {
        let root = entities[0];
        facts.push(Literal::ground(root, attributes[0], pos));
        for i in 0..chain {
            let ground = rng.random_bool(config.ground_rule_fraction);
            let (from, to) = (attributes[i], attributes[i + 1]);
            rules.push(if ground {
                (vec![Literal::ground(root, from, pos)], Literal::ground(root, to, pos))
            } else {
                (vec![Literal::var(from, pos)], Literal::var(to, pos))
            });
        }
        Some(Atom::new(root, attributes[chain]))
    } else {
        None
    };

    let n_facts = rng.random_range(config.facts_min..=config.facts_max).max(facts.len());
    let mut guard = 0;
    while facts.len() < n_facts && guard < 100 {
        guard += 1;
        let e = *entities.choose(rng).expect("entities");
        let a = *attributes.choose(rng).expect("attributes");
        if facts.iter().any(|f| f.atom() == Some(Atom::new(e, a))) {
            continue;
        }
        let polarity = if rng.random_bool(config.negative_fact_fraction) {
            Polarity::Negative
        } else {
            pos
        };
        facts.push(Literal::ground(e, a, polarity));
    }

    let n_rules = rng.random_range(config.rules_min..=config.rules_max).max(rules.len());
    guard = 0;
    while rules.len() < n_rules && guard < 100 {
        guard += 1;
        let k = rng.random_range(1..=config.max_antecedents);
        let picked = sample_distinct(rng, &attributes, k + 1);
        let (head, body) = picked.split_last().expect("k + 1 >= 2");
        let ground = if rng.random_bool(config.ground_rule_fraction) {
            Some(*entities.choose(rng).expect("entities"))
        } else {
            None
        };
        let antecedents: Vec<Literal> = body
            .iter()
            .map(|a| {
                let polarity = if rng.random_bool(config.negated_antecedent_fraction) {
                    Polarity::Negative
                } else {
                    pos
                };
                match ground {
                    Some(e) => Literal::ground(e, *a, polarity),
                    None => Literal::var(*a, polarity),
                }
            })
            .collect();
        let consequent = match ground {
            Some(e) => Literal::ground(e, *head, pos),
            None => Literal::var(*head, pos),
        };
        let duplicate = rules.iter().any(|(b, c)| {
            *c == consequent && b.len() == antecedents.len() && antecedents.iter().all(|x| b.contains(x))
        });
        if !duplicate {
            rules.push((antecedents, consequent));
        }
    }

    facts.shuffle(rng);
    rules.shuffle(rng);
    let facts = facts
        .into_iter()
        .map(|l| Fact::new(l, lex))
        .collect::<Result<Vec<_>, _>>()?;
    let rules = rules
        .into_iter()
        .map(|(a, c)| Rule::new(a, c, lex))
        .collect::<Result<Vec<_>, _>>()?;
    let theory = Theory::new(id, lex.clone(), facts, rules)?;

    if stratify(&theory).is_err() {
        return Ok(None);
    }
    let closure = forward_closure(&theory, config.depth_cap)?;
    // the model must be reached within the depth cap
    if closure.first_depth.len() != closure.model.len() {
        return Ok(None);
    }
    // stated negations must not be contradicted by derivations
    if closure.negative_facts.iter().any(|a| closure.model.contains(a)) {
        return Ok(None);
    }
    if let Some(end) = chain_end {
        if closure.depth_of(&end) != Some(chain) {
            return Ok(None);
        }
    }
    Ok(Some(theory))
}

struct Candidate {
    literal: Literal,
    label: bool,
    provable: bool,
}

/// Every ground query over the theory's entities and attributes whose
/// prover depth equals `depth_target`.
fn candidates(theory: &Theory, depth_target: usize, max_depth: usize) -> Result<Vec<Candidate>, GenError> {
    let mut out = Vec::new();
    for e in theory.entities() {
        for a in theory.attributes() {
            for polarity in [Polarity::Positive, Polarity::Negative] {
                let literal = Literal::ground(e, a, polarity);
                let q = Query::new(literal, theory.lexicon())?;
                let r = prove(&q, theory, max_depth)?;
                if r.depth == depth_target {
                    out.push(Candidate {
                        literal,
                        label: r.label,
                        provable: r.provable,
                    });
                }
            }
        }
    }
    Ok(out)
}

fn select(
    mut pool: Vec<Candidate>,
    want_true: usize,
    want_false: usize,
    negative_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Candidate> {
    let mut chosen = Vec::new();
    for (label, want) in [(true, want_true), (false, want_false)] {
        for _ in 0..want {
            let negative = rng.random_bool(negative_fraction);
            let matching: Vec<usize> = (0..pool.len())
                .filter(|i| pool[*i].label == label)
                .collect();
            if matching.is_empty() {
                break;
            }
            let preferred: Vec<usize> = matching
                .iter()
                .copied()
                .filter(|i| pool[*i].literal.polarity.is_positive() != negative)
                .collect();
            let from = if preferred.is_empty() { &matching } else { &preferred };
            let i = *from.choose(rng).expect("nonempty");
            chosen.push(pool.swap_remove(i));
        }
    }
    chosen.shuffle(rng);
    chosen
}

fn to_record(theory: &Theory, context: &str, c: &Candidate) -> Result<DatasetRecord, GenError> {
    Ok(DatasetRecord {
        theory_id: theory.id.clone(),
        context: context.to_string(),
        question: lexicalize_query(&c.literal, theory.lexicon(), crate::ruleworld::CANONICAL)?,
        label: c.label,
        depth: 0,
        provable: c.provable,
        split: Split::Train,
        surface_variant: 0,
    })
}

/// Up to `n` queries at exactly `depth_target`, aiming for a `balance`
/// fraction of true labels. Fewer records come back when the theory cannot
/// supply enough of a label; the shortfall is the difference from `n`.
/// Records are marked `train`; callers assign the split.
pub fn generate_queries(
    theory: &Theory,
    depth_target: usize,
    n: usize,
    balance: f64,
    seed: u64,
) -> Result<Vec<DatasetRecord>, GenError> {
    generate_queries_with(theory, depth_target, n, balance, 0.5, DEFAULT_MAX_DEPTH, seed)
}

pub fn generate_queries_with(
    theory: &Theory,
    depth_target: usize,
    n: usize,
    balance: f64,
    negative_fraction: f64,
    max_depth: usize,
    seed: u64,
) -> Result<Vec<DatasetRecord>, GenError> {
    if depth_target > max_depth {
        return Err(GenError::Config(format!(
            "depth target {depth_target} exceeds max depth {max_depth}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = candidates(theory, depth_target, max_depth)?;
    let want_true = ((n as f64) * balance).round() as usize;
    let chosen = select(pool, want_true, n - want_true, negative_fraction, &mut rng);
    let context = serialize_theory(theory);
    chosen
        .iter()
        .map(|c| {
            let mut r = to_record(theory, &context, c)?;
            r.depth = depth_target;
            Ok(r)
        })
        .collect()
}

/// Re-render a record with non-canonical templates chosen by `seed`.
/// Labels, depths and the provable flag are carried over unchanged.
pub fn perturb_surface(record: &DatasetRecord, lexicon: &Arc<Lexicon>, seed: u64) -> Result<DatasetRecord, GenError> {
    let templates = lexicon.fact_template_count().min(lexicon.rule_template_count());
    if templates < 2 {
        return Err(GenError::Config(
            "surface variation needs at least two templates per sentence kind".into(),
        ));
    }
    let theory = parse_theory_any(&record.theory_id, &record.context, lexicon.clone())?;
    let (literal, _) = parse_any_statement(&record.question, lexicon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let context = serialize_theory_with(&theory, |_| rng.random_range(1..templates))?;
    let question = lexicalize_query(&literal, lexicon, rng.random_range(1..templates))?;
    Ok(DatasetRecord {
        context,
        question,
        surface_variant: record.surface_variant + 1,
        ..record.clone()
    })
}

/// Re-derive `(label, depth, provable)` for a record with the prover.
pub fn verify_record(
    record: &DatasetRecord,
    lexicon: &Arc<Lexicon>,
    max_depth: usize,
) -> Result<bool, GenError> {
    let theory = parse_theory_any(&record.theory_id, &record.context, lexicon.clone())?;
    let (literal, _) = parse_any_statement(&record.question, lexicon)?;
    let r = prove(&Query::new(literal, lexicon)?, &theory, max_depth)?;
    Ok(r.label == record.label && r.depth == record.depth && r.provable == record.provable)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub records: usize,
    pub theories: usize,
    pub label_true: usize,
    pub label_false: usize,
    pub provable_true: usize,
    pub provable_false: usize,
    pub cwa_true: usize,
    pub cwa_false: usize,
}

impl SplitStats {
    fn add(&mut self, r: &DatasetRecord) {
        self.records += 1;
        match (r.provable, r.label) {
            (true, true) => self.provable_true += 1,
            (true, false) => self.provable_false += 1,
            (false, true) => self.cwa_true += 1,
            (false, false) => self.cwa_false += 1,
        }
        if r.label {
            self.label_true += 1;
        } else {
            self.label_false += 1;
        }
    }

    pub fn true_fraction(&self) -> f64 {
        if self.records == 0 {
            0.0
        } else {
            self.label_true as f64 / self.records as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FolderManifest {
    pub depth: usize,
    pub splits: BTreeMap<Split, SplitStats>,
    pub failed_theories: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GenConfig,
    pub folders: Vec<FolderManifest>,
}

pub fn folder_name(depth: usize) -> String {
    format!("depth-{depth}")
}

pub fn split_path(root: &Path, depth: usize, split: Split) -> PathBuf {
    root.join(folder_name(depth)).join(format!("{}.jsonl", split.name()))
}

/// Generate one folder split. Theories are produced in parallel chunks
/// with counter-derived seeds and consumed in index order, so the output
/// does not depend on thread scheduling.
fn generate_split(
    config: &GenConfig,
    depth: usize,
    split: Split,
    target: usize,
) -> Result<(Vec<DatasetRecord>, SplitStats, usize), GenError> {
    let mut folder_config = config.clone();
    folder_config.planted_chain = depth;
    let mut records = Vec::with_capacity(target);
    let mut stats = SplitStats::default();
    let mut failed = 0;
    let mut next_index = 0u64;
    let mut idle_chunks = 0;
    while records.len() < target {
        let indices: Vec<u64> = (next_index..next_index + THEORY_CHUNK as u64).collect();
        next_index += THEORY_CHUNK as u64;
        let generated: Vec<Result<(Theory, Vec<Candidate>), GenError>> = indices
            .par_iter()
            .map(|idx| {
                let seed = derive_seed(config.master_seed, &[depth as u64, split.index(), *idx]);
                let mut theory = generate_theory(&folder_config, seed)?;
                theory.id = format!("d{depth}-{}-{idx:06}", split.name());
                let pool = candidates(&theory, depth, config.max_depth)?;
                Ok((theory, pool))
            })
            .collect();
        let before = records.len();
        for (idx, item) in indices.iter().zip(generated) {
            if records.len() >= target {
                break;
            }
            let (theory, pool) = match item {
                Ok(x) => x,
                Err(GenError::Exhausted { .. }) => {
                    failed += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let q = config.queries_per_theory.min(target - records.len());
            let produced = records.len() + q;
            let desired_true = ((produced as f64) * config.label_balance).round() as usize;
            let want_true = desired_true.saturating_sub(stats.label_true).min(q);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                config.master_seed,
                &[depth as u64, split.index(), *idx, 1],
            ));
            let chosen = select(pool, want_true, q - want_true, config.negative_query_fraction, &mut rng);
            if chosen.is_empty() {
                continue;
            }
            stats.theories += 1;
            let context = serialize_theory(&theory);
            for c in &chosen {
                let mut r = to_record(&theory, &context, c)?;
                r.depth = depth;
                r.split = split;
                stats.add(&r);
                records.push(r);
            }
        }
        if records.len() == before {
            idle_chunks += 1;
            if idle_chunks >= 8 {
                return Err(GenError::Stalled {
                    depth,
                    split,
                    produced: records.len(),
                    target,
                });
            }
        } else {
            idle_chunks = 0;
        }
    }
    Ok((records, stats, failed))
}

fn write_jsonl(path: &Path, records: &[DatasetRecord]) -> Result<(), GenError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| GenError::Record(e.to_string()))?;
        w.write_all(line.as_bytes()).map_err(io_err(path))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<DatasetRecord>, GenError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| GenError::Record(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Write every depth folder under `root`. Output is staged next to `root`
/// and moved into place only when complete; a failed run leaves nothing
/// behind.
pub fn build_splits(config: &GenConfig, root: &Path) -> Result<Manifest, GenError> {
    config.validate()?;
    let staging = root.with_file_name(format!(
        "{}.partial",
        root.file_name().and_then(|n| n.to_str()).unwrap_or("dataset")
    ));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
    }
    let result = write_splits(config, &staging);
    match result {
        Ok(manifest) => {
            if root.exists() {
                fs::remove_dir_all(root).map_err(io_err(root))?;
            }
            fs::rename(&staging, root).map_err(io_err(root))?;
            Ok(manifest)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

fn write_splits(config: &GenConfig, dir: &Path) -> Result<Manifest, GenError> {
    let counts = config.split_counts();
    let mut folders = Vec::new();
    for &depth in &config.depth_targets {
        let folder = dir.join(folder_name(depth));
        fs::create_dir_all(&folder).map_err(io_err(&folder))?;
        let mut splits = BTreeMap::new();
        let mut failed_theories = 0;
        for (split, &target) in Split::ALL.iter().zip(&counts) {
            let (records, stats, failed) = generate_split(config, depth, *split, target)?;
            failed_theories += failed;
            write_jsonl(&split_path(dir, depth, *split), &records)?;
            if *split == Split::Test && config.surface_variants {
                let varied = records
                    .iter()
                    .enumerate()
                    .map(|(i, r)| {
                        let seed = derive_seed(config.master_seed, &[depth as u64, 99, i as u64]);
                        perturb_surface(r, &config.lexicon, seed)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                write_jsonl(&folder.join(SURFACE_FILE), &varied)?;
            }
            splits.insert(*split, stats);
        }
        folders.push(FolderManifest {
            depth,
            splits,
            failed_theories,
        });
    }
    let manifest = Manifest {
        config: config.clone(),
        folders,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| GenError::Record(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<Manifest, GenError> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| GenError::Record(e.to_string()))
}
