//! Vocabulary and sentence templates.
//!
//! A lexicon owns the entity and attribute names of a rule world and the
//! templates used to turn literals into English-like sentences. Template 0
//! of each kind is the canonical one; it is the only template the strict
//! parser accepts as an exact inverse. The remaining templates exist to
//! produce surface variants of otherwise identical theories.
//!
//! Template slots:
//!
//! | slot          | meaning                                  |
//! |---------------|------------------------------------------|
//! | `{entity}`    | entity name as written in the lexicon    |
//! | `{attribute}` | attribute name, lower case               |
//! | `{Attribute}` | attribute name with a capital first letter |
//! | `{body}`      | rendered antecedents joined by `joiner`  |
//! | `{head}`      | rendered consequent                      |

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::template::{CompiledFact, CompiledRule};
use super::{AttributeId, EntityId, RuleWorldError};

/// Positive and negative forms of a fact sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactTemplate {
    pub positive: String,
    pub negative: String,
}

/// Frames and literal forms for a rule sentence.
///
/// The `variable_*` fields are used when the consequent subject is the
/// variable ("someone"), the `ground_*` ones when it is a named entity.
/// Antecedents are rendered with the literal form matching their own
/// subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleTemplate {
    pub variable_frame: String,
    pub ground_frame: String,
    pub variable_positive: String,
    pub variable_negative: String,
    pub ground_positive: String,
    pub ground_negative: String,
    pub variable_head: String,
    pub ground_head: String,
    pub joiner: String,
}

/// On-disk shape of a lexicon file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconSpec {
    pub entities: Vec<String>,
    pub attributes: Vec<String>,
    pub fact_templates: Vec<FactTemplate>,
    pub rule_templates: Vec<RuleTemplate>,
}

#[derive(Debug)]
pub struct Lexicon {
    spec: LexiconSpec,
    entity_index: HashMap<String, EntityId>,
    attribute_index: HashMap<String, AttributeId>,
    compiled_facts: Vec<CompiledFact>,
    compiled_rules: Vec<CompiledRule>,
}

impl PartialEq for Lexicon {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl Lexicon {
    pub fn new(spec: LexiconSpec) -> Result<Self, RuleWorldError> {
        if spec.entities.is_empty() || spec.attributes.is_empty() {
            return Err(RuleWorldError::Lexicon(
                "a lexicon needs at least one entity and one attribute".into(),
            ));
        }
        if spec.fact_templates.is_empty() || spec.rule_templates.is_empty() {
            return Err(RuleWorldError::Lexicon(
                "a lexicon needs at least one fact and one rule template".into(),
            ));
        }
        if spec.entities.len() > u16::MAX as usize || spec.attributes.len() > u16::MAX as usize {
            return Err(RuleWorldError::Lexicon("lexicon too large".into()));
        }
        let mut entity_index = HashMap::new();
        for (i, name) in spec.entities.iter().enumerate() {
            check_word(name)?;
            if entity_index.insert(name.clone(), EntityId(i as u16)).is_some() {
                return Err(RuleWorldError::Lexicon(format!("duplicate entity `{name}`")));
            }
        }
        let mut attribute_index = HashMap::new();
        for (i, name) in spec.attributes.iter().enumerate() {
            check_word(name)?;
            if name.chars().any(|c| c.is_uppercase()) {
                return Err(RuleWorldError::Lexicon(format!(
                    "attribute `{name}` must be lower case"
                )));
            }
            if entity_index.contains_key(name) {
                return Err(RuleWorldError::Lexicon(format!(
                    "`{name}` is both an entity and an attribute"
                )));
            }
            if attribute_index.insert(name.clone(), AttributeId(i as u16)).is_some() {
                return Err(RuleWorldError::Lexicon(format!("duplicate attribute `{name}`")));
            }
        }
        let compiled_facts = spec
            .fact_templates
            .iter()
            .map(CompiledFact::compile)
            .collect::<Result<Vec<_>, _>>()?;
        let compiled_rules = spec
            .rule_templates
            .iter()
            .map(CompiledRule::compile)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            spec,
            entity_index,
            attribute_index,
            compiled_facts,
            compiled_rules,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, RuleWorldError> {
        let spec: LexiconSpec =
            toml::from_str(text).map_err(|e| RuleWorldError::Lexicon(e.to_string()))?;
        Self::new(spec)
    }

    pub fn load(path: &Path) -> Result<Self, RuleWorldError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RuleWorldError::Lexicon(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.spec).expect("lexicon spec is always serializable")
    }

    pub fn spec(&self) -> &LexiconSpec {
        &self.spec
    }

    pub fn entity_count(&self) -> usize {
        self.spec.entities.len()
    }

    pub fn attribute_count(&self) -> usize {
        self.spec.attributes.len()
    }

    pub fn fact_template_count(&self) -> usize {
        self.spec.fact_templates.len()
    }

    pub fn rule_template_count(&self) -> usize {
        self.spec.rule_templates.len()
    }

    pub fn entity_name(&self, id: EntityId) -> Result<&str, RuleWorldError> {
        self.spec
            .entities
            .get(id.0 as usize)
            .map(String::as_str)
            .ok_or(RuleWorldError::UnknownEntity(id.0))
    }

    pub fn attribute_name(&self, id: AttributeId) -> Result<&str, RuleWorldError> {
        self.spec
            .attributes
            .get(id.0 as usize)
            .map(String::as_str)
            .ok_or(RuleWorldError::UnknownAttribute(id.0))
    }

    pub fn entity(&self, name: &str) -> Option<EntityId> {
        self.entity_index.get(name).copied()
    }

    pub fn attribute(&self, name: &str) -> Option<AttributeId> {
        self.attribute_index.get(name).copied()
    }

    pub(crate) fn compiled_fact(&self, index: usize) -> Result<&CompiledFact, RuleWorldError> {
        self.compiled_facts
            .get(index)
            .ok_or(RuleWorldError::TemplateIndex {
                index,
                available: self.compiled_facts.len(),
            })
    }

    pub(crate) fn compiled_rule(&self, index: usize) -> Result<&CompiledRule, RuleWorldError> {
        self.compiled_rules
            .get(index)
            .ok_or(RuleWorldError::TemplateIndex {
                index,
                available: self.compiled_rules.len(),
            })
    }

    /// Every lower-cased word and punctuation mark any template can emit,
    /// plus the entity and attribute names. Sorted and deduplicated.
    pub fn word_inventory(&self) -> Vec<String> {
        let mut words = BTreeSet::new();
        for e in &self.spec.entities {
            words.insert(e.to_lowercase());
        }
        for a in &self.spec.attributes {
            words.insert(a.clone());
        }
        let mut template_text = Vec::new();
        for t in &self.spec.fact_templates {
            template_text.push(t.positive.clone());
            template_text.push(t.negative.clone());
        }
        for t in &self.spec.rule_templates {
            template_text.extend([
                t.variable_frame.clone(),
                t.ground_frame.clone(),
                t.variable_positive.clone(),
                t.variable_negative.clone(),
                t.ground_positive.clone(),
                t.ground_negative.clone(),
                t.variable_head.clone(),
                t.ground_head.clone(),
                t.joiner.clone(),
            ]);
        }
        // queries swap the final period for a question mark
        words.insert("?".to_string());
        for text in template_text {
            let stripped = strip_slots(&text);
            for w in split_words(&stripped) {
                words.insert(w);
            }
        }
        words.into_iter().collect()
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::new(default_spec()).expect("builtin lexicon is valid")
    }
}

fn check_word(word: &str) -> Result<(), RuleWorldError> {
    if word.is_empty() || !word.chars().all(|c| c.is_ascii_alphabetic()) {
        return Err(RuleWorldError::Lexicon(format!(
            "`{word}` is not a single alphabetic word"
        )));
    }
    Ok(())
}

fn strip_slots(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_slot = false;
    for c in text.chars() {
        match c {
            '{' => {
                in_slot = true;
                out.push(' ');
            }
            '}' => in_slot = false,
            _ if !in_slot => out.push(c),
            _ => {}
        }
    }
    out
}

/// Lower-case word split with punctuation as separate tokens. Shared with
/// the encoder's tokenizer so that the vocabulary covers template output.
pub fn split_words(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            if !c.is_whitespace() {
                words.push(c.to_string());
            }
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

fn s(text: &str) -> String {
    text.to_string()
}

/// Builtin lexicon: the RuleTaker-style vocabulary with one canonical and
/// two alternative templates per sentence kind.
pub fn default_spec() -> LexiconSpec {
    let entities = [
        "Anne", "Bob", "Charlie", "Dave", "Erin", "Fiona", "Gary", "Harry",
    ];
    let attributes = [
        "big", "blue", "cold", "furry", "green", "kind", "nice", "quiet", "red", "rough", "round",
        "smart", "white", "young",
    ];
    LexiconSpec {
        entities: entities.iter().map(|e| s(e)).collect(),
        attributes: attributes.iter().map(|a| s(a)).collect(),
        fact_templates: vec![
            FactTemplate {
                positive: s("{entity} is {attribute}."),
                negative: s("{entity} is not {attribute}."),
            },
            FactTemplate {
                positive: s("{Attribute} is what {entity} is."),
                negative: s("{Attribute} is not what {entity} is."),
            },
            FactTemplate {
                positive: s("{entity} seems to be {attribute}."),
                negative: s("{entity} does not seem to be {attribute}."),
            },
        ],
        rule_templates: vec![
            RuleTemplate {
                variable_frame: s("If {body} then it is also {head}."),
                ground_frame: s("If {body} then {head}."),
                variable_positive: s("someone is {attribute}"),
                variable_negative: s("someone is not {attribute}"),
                ground_positive: s("{entity} is {attribute}"),
                ground_negative: s("{entity} is not {attribute}"),
                variable_head: s("{attribute}"),
                ground_head: s("{entity} is {attribute}"),
                joiner: s(" and "),
            },
            RuleTemplate {
                variable_frame: s("All {body} things are {head}."),
                ground_frame: s("{head} if {body}."),
                variable_positive: s("{attribute}"),
                variable_negative: s("not {attribute}"),
                ground_positive: s("{entity} is {attribute}"),
                ground_negative: s("{entity} is not {attribute}"),
                variable_head: s("{attribute}"),
                ground_head: s("{entity} is {attribute}"),
                joiner: s(" and "),
            },
            RuleTemplate {
                variable_frame: s("Someone who is {body} is also {head}."),
                ground_frame: s("When {body}, {head}."),
                variable_positive: s("{attribute}"),
                variable_negative: s("not {attribute}"),
                ground_positive: s("{entity} is {attribute}"),
                ground_negative: s("{entity} is not {attribute}"),
                variable_head: s("{attribute}"),
                ground_head: s("{entity} is {attribute}"),
                joiner: s(" and "),
            },
        ],
    }
}
