//! Flat run configuration. Values are resolved as flag > environment >
//! file > built-in default; environment keys are the config keys upper-cased
//! with an `UNIFIER_` prefix (`UNIFIER_LEARNING_RATE=3e-4`).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use unifier_core::datagen::GenConfig;
use unifier_core::ruleworld::Lexicon;
use unifier_core::seeds::derive_seed;
use unifier_neural::trainer::TrainConfig;
use unifier_neural::EncoderConfig;

pub const ENV_PREFIX: &str = "UNIFIER_";
/// Environment variables with the prefix that are not config keys.
const ENV_RESERVED: [&str; 2] = ["UNIFIER_CONFIG", "UNIFIER_LOG"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
    /// Master seed: data generation, parameter init, shuffling, dropout.
    pub seed: u64,
    /// Optional lexicon file; the built-in lexicon otherwise.
    pub lexicon_file: Option<PathBuf>,

    pub depths: Vec<usize>,
    pub records_per_depth: usize,
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
    pub depth_cap: usize,
    pub max_depth: usize,
    pub queries_per_theory: usize,
    pub label_balance: f64,
    pub negative_query_fraction: f64,
    pub split_fractions: [f64; 3],
    pub surface_variants: bool,

    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_mult: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub init_std: f64,

    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub warmup_steps: usize,

    pub resamples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let g = GenConfig::default();
        let e = EncoderConfig::default();
        let t = TrainConfig::default();
        Self {
            data_dir: "data".into(),
            checkpoint_dir: "checkpoints".into(),
            report_dir: "reports".into(),
            seed: g.master_seed,
            lexicon_file: None,
            depths: g.depth_targets,
            records_per_depth: g.records_per_depth,
            entities: g.entities,
            attributes: g.attributes,
            facts_min: g.facts_min,
            facts_max: g.facts_max,
            rules_min: g.rules_min,
            rules_max: g.rules_max,
            max_antecedents: g.max_antecedents,
            negative_fact_fraction: g.negative_fact_fraction,
            negated_antecedent_fraction: g.negated_antecedent_fraction,
            ground_rule_fraction: g.ground_rule_fraction,
            depth_cap: g.depth_cap,
            max_depth: g.max_depth,
            queries_per_theory: g.queries_per_theory,
            label_balance: g.label_balance,
            negative_query_fraction: g.negative_query_fraction,
            split_fractions: g.split_fractions,
            surface_variants: g.surface_variants,
            d_model: e.d_model,
            n_heads: e.n_heads,
            n_layers: e.n_layers,
            ffn_mult: e.ffn_mult,
            max_len: e.max_len,
            dropout: e.dropout,
            init_std: e.init_std,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_epsilon: t.adam_epsilon,
            warmup_steps: t.warmup_steps,
            resamples: unifier_core::eval::DEFAULT_RESAMPLES,
        }
    }
}

/// Values given on the command line; `None` leaves lower layers in charge.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    /// Config key that `--out` sets for the running command.
    pub out: Option<(&'static str, PathBuf)>,
}

fn parse_scalar(raw: &str) -> toml::Value {
    // numbers, booleans and arrays parse as TOML; anything else is a string
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

impl RunConfig {
    /// Resolve the layered configuration. `env` is usually
    /// `std::env::vars()`; it is a parameter so tests stay hermetic.
    pub fn resolve(
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        overrides: &Overrides,
    ) -> Result<Self> {
        let mut table = toml::Table::try_from(RunConfig::default()).context("serializing defaults")?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let from_file: toml::Table =
                toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            for (k, v) in from_file {
                if !table.contains_key(&k) && k != "lexicon_file" {
                    bail!("{}: unknown config key `{k}`", path.display());
                }
                table.insert(k, v);
            }
        }
        let mut env: Vec<(String, String)> = env
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX) && !ENV_RESERVED.contains(&k.as_str()))
            .collect();
        env.sort();
        for (k, v) in env {
            let key = k[ENV_PREFIX.len()..].to_ascii_lowercase();
            if !table.contains_key(&key) && key != "lexicon_file" {
                bail!("environment variable {k} does not name a config key");
            }
            table.insert(key, parse_scalar(&v));
        }
        if let Some(seed) = overrides.seed {
            table.insert("seed".into(), toml::Value::Integer(seed as i64));
        }
        if let Some((key, path)) = &overrides.out {
            table.insert((*key).into(), toml::Value::String(path.display().to_string()));
        }
        let config: RunConfig = table.try_into().context("invalid configuration")?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.gen_config()?.validate()?;
        self.train_config(0).validate()?;
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            bail!("d_model ({}) must be a positive multiple of n_heads ({})", self.d_model, self.n_heads);
        }
        if self.resamples < unifier_core::eval::MIN_RESAMPLES {
            bail!("resamples must be at least {}", unifier_core::eval::MIN_RESAMPLES);
        }
        Ok(())
    }

    pub fn lexicon(&self) -> Result<Arc<Lexicon>> {
        Ok(Arc::new(match &self.lexicon_file {
            Some(path) => Lexicon::load(path)?,
            None => Lexicon::default(),
        }))
    }

    pub fn gen_config(&self) -> Result<GenConfig> {
        Ok(GenConfig {
            lexicon: self.lexicon()?,
            entities: self.entities,
            attributes: self.attributes,
            facts_min: self.facts_min,
            facts_max: self.facts_max,
            rules_min: self.rules_min,
            rules_max: self.rules_max,
            max_antecedents: self.max_antecedents,
            negative_fact_fraction: self.negative_fact_fraction,
            negated_antecedent_fraction: self.negated_antecedent_fraction,
            ground_rule_fraction: self.ground_rule_fraction,
            planted_chain: 0,
            depth_cap: self.depth_cap,
            max_depth: self.max_depth,
            depth_targets: self.depths.clone(),
            queries_per_theory: self.queries_per_theory,
            label_balance: self.label_balance,
            negative_query_fraction: self.negative_query_fraction,
            split_fractions: self.split_fractions,
            records_per_depth: self.records_per_depth,
            surface_variants: self.surface_variants,
            master_seed: self.seed,
        })
    }

    /// Encoder shape; `stream` separates the fact checker's initialization
    /// from the one shared by the unifier and the baseline.
    pub fn encoder_config(&self, vocab_size: usize, stream: u64) -> EncoderConfig {
        EncoderConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            ffn_mult: self.ffn_mult,
            max_len: self.max_len,
            vocab_size,
            dropout: self.dropout,
            init_std: self.init_std,
            seed: derive_seed(self.seed, &[stream, 1]),
        }
    }

    pub fn train_config(&self, stream: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_epsilon: self.adam_epsilon,
            warmup_steps: self.warmup_steps,
            seed: derive_seed(self.seed, &[stream, 2]),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
