//! The rule language: literals, facts, rules, theories and their English
//! surface forms.
//!
//! The language is unary. A literal says that an entity (or the rule
//! variable, rendered "someone") has or lacks an attribute. Rules have one
//! to three antecedents and a single positive consequent.

mod lexicon;
mod template;

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lexicon::{default_spec, split_words, FactTemplate, Lexicon, LexiconSpec, RuleTemplate};
use template::SlotValues;

pub const CANONICAL: usize = 0;
pub const MAX_ANTECEDENTS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuleWorldError {
    #[error("lexicon error: {0}")]
    Lexicon(String),
    #[error("unknown entity id {0}")]
    UnknownEntity(u16),
    #[error("unknown attribute id {0}")]
    UnknownAttribute(u16),
    #[error("template index {index} out of range ({available} templates)")]
    TemplateIndex { index: usize, available: usize },
    #[error("cannot parse `{text}`: {reason}")]
    Parse { text: String, reason: String },
    #[error("invalid fact: {0}")]
    InvalidFact(String),
    #[error("invalid rule: {0}")]
    InvalidRule(String),
    #[error("invalid theory: {0}")]
    InvalidTheory(String),
}

fn parse_error(text: &str, reason: impl Into<String>) -> RuleWorldError {
    RuleWorldError::Parse {
        text: text.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u16);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttributeId(pub u16);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Term {
    Var,
    Entity(EntityId),
}

impl Term {
    pub fn entity(self) -> Option<EntityId> {
        match self {
            Term::Var => None,
            Term::Entity(e) => Some(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn is_positive(self) -> bool {
        self == Polarity::Positive
    }

    pub fn flip(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

/// A ground positive statement: `entity` has `attribute`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Atom {
    pub entity: EntityId,
    pub attribute: AttributeId,
}

impl Atom {
    pub fn new(entity: EntityId, attribute: AttributeId) -> Self {
        Self { entity, attribute }
    }

    pub fn literal(self, polarity: Polarity) -> Literal {
        Literal {
            subject: Term::Entity(self.entity),
            attribute: self.attribute,
            polarity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Literal {
    pub subject: Term,
    pub attribute: AttributeId,
    pub polarity: Polarity,
}

impl Literal {
    pub fn ground(entity: EntityId, attribute: AttributeId, polarity: Polarity) -> Self {
        Self {
            subject: Term::Entity(entity),
            attribute,
            polarity,
        }
    }

    pub fn var(attribute: AttributeId, polarity: Polarity) -> Self {
        Self {
            subject: Term::Var,
            attribute,
            polarity,
        }
    }

    pub fn is_ground(&self) -> bool {
        self.subject != Term::Var
    }

    /// The underlying positive atom of a ground literal.
    pub fn atom(&self) -> Option<Atom> {
        self.subject.entity().map(|e| Atom::new(e, self.attribute))
    }

    /// Replace the variable subject by `entity`.
    pub fn bind(&self, entity: EntityId) -> Literal {
        match self.subject {
            Term::Var => Literal {
                subject: Term::Entity(entity),
                ..*self
            },
            Term::Entity(_) => *self,
        }
    }

    pub fn negated(&self) -> Literal {
        Literal {
            polarity: self.polarity.flip(),
            ..*self
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.polarity.is_positive() { "" } else { "¬" };
        match self.subject {
            Term::Var => write!(f, "{sign}a{}(X)", self.attribute.0),
            Term::Entity(e) => write!(f, "{sign}a{}(e{})", self.attribute.0, e.0),
        }
    }
}

/// A ground literal stated in a theory, with its canonical surface text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fact {
    pub literal: Literal,
    pub text: String,
}

impl Fact {
    pub fn new(literal: Literal, lexicon: &Lexicon) -> Result<Self, RuleWorldError> {
        if !literal.is_ground() {
            return Err(RuleWorldError::InvalidFact(
                "facts may not mention the variable".into(),
            ));
        }
        let text = render_fact(&literal, lexicon, CANONICAL)?;
        Ok(Self { literal, text })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub antecedents: Vec<Literal>,
    pub consequent: Literal,
    pub text: String,
}

impl Rule {
    pub fn new(
        antecedents: Vec<Literal>,
        consequent: Literal,
        lexicon: &Lexicon,
    ) -> Result<Self, RuleWorldError> {
        validate_rule(&antecedents, &consequent)?;
        let text = render_rule(&antecedents, &consequent, lexicon, CANONICAL)?;
        Ok(Self {
            antecedents,
            consequent,
            text,
        })
    }

    pub fn has_variable(&self) -> bool {
        self.consequent.subject == Term::Var
    }
}

fn validate_rule(antecedents: &[Literal], consequent: &Literal) -> Result<(), RuleWorldError> {
    if antecedents.is_empty() || antecedents.len() > MAX_ANTECEDENTS {
        return Err(RuleWorldError::InvalidRule(format!(
            "a rule needs 1 to {MAX_ANTECEDENTS} antecedents, got {}",
            antecedents.len()
        )));
    }
    if !consequent.polarity.is_positive() {
        return Err(RuleWorldError::InvalidRule(
            "rule consequents must be positive".into(),
        ));
    }
    let any_var = antecedents.iter().any(|a| a.subject == Term::Var);
    if any_var != (consequent.subject == Term::Var) {
        return Err(RuleWorldError::InvalidRule(
            "the consequent uses the variable exactly when some antecedent does".into(),
        ));
    }
    Ok(())
}

/// A knowledge base: signed ground facts plus rules, in a fixed order.
#[derive(Debug, Clone)]
pub struct Theory {
    pub id: String,
    facts: Vec<Fact>,
    rules: Vec<Rule>,
    lexicon: Arc<Lexicon>,
}

impl PartialEq for Theory {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id && self.facts == other.facts && self.rules == other.rules
    }
}

impl Theory {
    pub fn new(
        id: impl Into<String>,
        lexicon: Arc<Lexicon>,
        facts: Vec<Fact>,
        rules: Vec<Rule>,
    ) -> Result<Self, RuleWorldError> {
        let mut seen = HashSet::new();
        for fact in &facts {
            let atom = fact.literal.atom().ok_or_else(|| {
                RuleWorldError::InvalidFact("facts may not mention the variable".into())
            })?;
            if !seen.insert(atom) {
                return Err(RuleWorldError::InvalidTheory(format!(
                    "`{}` is stated twice or with both polarities",
                    fact.text
                )));
            }
        }
        Ok(Self {
            id: id.into(),
            facts,
            rules,
            lexicon,
        })
    }

    /// Build from bare literals, rendering canonical text.
    pub fn from_literals(
        id: impl Into<String>,
        lexicon: Arc<Lexicon>,
        facts: &[Literal],
        rules: &[(Vec<Literal>, Literal)],
    ) -> Result<Self, RuleWorldError> {
        let facts = facts
            .iter()
            .map(|l| Fact::new(*l, &lexicon))
            .collect::<Result<Vec<_>, _>>()?;
        let rules = rules
            .iter()
            .map(|(a, c)| Rule::new(a.clone(), *c, &lexicon))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(id, lexicon, facts, rules)
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn lexicon(&self) -> &Arc<Lexicon> {
        &self.lexicon
    }

    /// Entities mentioned anywhere in the theory, sorted.
    pub fn entities(&self) -> Vec<EntityId> {
        let mut out: Vec<EntityId> = self
            .facts
            .iter()
            .filter_map(|f| f.literal.subject.entity())
            .chain(self.rules.iter().flat_map(|r| {
                r.antecedents
                    .iter()
                    .chain(std::iter::once(&r.consequent))
                    .filter_map(|l| l.subject.entity())
            }))
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Attributes mentioned anywhere in the theory, sorted.
    pub fn attributes(&self) -> Vec<AttributeId> {
        let mut out: Vec<AttributeId> = self
            .facts
            .iter()
            .map(|f| f.literal.attribute)
            .chain(self.rules.iter().flat_map(|r| {
                r.antecedents
                    .iter()
                    .chain(std::iter::once(&r.consequent))
                    .map(|l| l.attribute)
            }))
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Stored fact with exactly this literal (polarity included).
    pub fn has_fact(&self, literal: &Literal) -> bool {
        self.facts.iter().any(|f| f.literal == *literal)
    }
}

pub fn lexicalize_fact(
    fact: &Fact,
    lexicon: &Lexicon,
    template_index: usize,
) -> Result<String, RuleWorldError> {
    render_fact(&fact.literal, lexicon, template_index)
}

pub fn lexicalize_rule(
    rule: &Rule,
    lexicon: &Lexicon,
    template_index: usize,
) -> Result<String, RuleWorldError> {
    render_rule(&rule.antecedents, &rule.consequent, lexicon, template_index)
}

/// Question form of a ground literal: the fact sentence ending in `?`.
pub fn lexicalize_query(
    literal: &Literal,
    lexicon: &Lexicon,
    template_index: usize,
) -> Result<String, RuleWorldError> {
    let mut text = render_fact(literal, lexicon, template_index)?;
    text.pop();
    text.push('?');
    Ok(text)
}

pub fn render_fact(
    literal: &Literal,
    lexicon: &Lexicon,
    template_index: usize,
) -> Result<String, RuleWorldError> {
    let entity = literal
        .subject
        .entity()
        .ok_or_else(|| RuleWorldError::InvalidFact("facts may not mention the variable".into()))?;
    let t = lexicon.compiled_fact(template_index)?;
    let values = SlotValues::entity_attribute(
        lexicon.entity_name(entity)?,
        lexicon.attribute_name(literal.attribute)?,
    );
    let pattern = if literal.polarity.is_positive() {
        &t.positive
    } else {
        &t.negative
    };
    Ok(pattern.render(&values))
}

pub fn render_rule(
    antecedents: &[Literal],
    consequent: &Literal,
    lexicon: &Lexicon,
    template_index: usize,
) -> Result<String, RuleWorldError> {
    validate_rule(antecedents, consequent)?;
    let t = lexicon.compiled_rule(template_index)?;
    let mut parts = Vec::with_capacity(antecedents.len());
    for a in antecedents {
        let attribute = lexicon.attribute_name(a.attribute)?;
        let text = match (a.subject, a.polarity) {
            (Term::Var, Polarity::Positive) => t.variable_positive.render(&SlotValues::attribute(attribute)),
            (Term::Var, Polarity::Negative) => t.variable_negative.render(&SlotValues::attribute(attribute)),
            (Term::Entity(e), pol) => {
                let values = SlotValues::entity_attribute(lexicon.entity_name(e)?, attribute);
                if pol.is_positive() {
                    t.ground_positive.render(&values)
                } else {
                    t.ground_negative.render(&values)
                }
            }
        };
        parts.push(text);
    }
    let body = parts.join(&t.joiner);
    let head_attr = lexicon.attribute_name(consequent.attribute)?;
    let (frame, head) = match consequent.subject {
        Term::Var => (
            &t.variable_frame,
            t.variable_head.render(&SlotValues::attribute(head_attr)),
        ),
        Term::Entity(e) => (
            &t.ground_frame,
            t.ground_head
                .render(&SlotValues::entity_attribute(lexicon.entity_name(e)?, head_attr)),
        ),
    };
    Ok(frame.render(&SlotValues {
        body: Some(body),
        head: Some(head),
        ..SlotValues::default()
    }))
}

/// A parsed sentence of a theory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sentence {
    Fact(Literal),
    Rule {
        antecedents: Vec<Literal>,
        consequent: Literal,
    },
}

fn lookup_entity(lexicon: &Lexicon, text: &str, name: &str) -> Result<EntityId, RuleWorldError> {
    lexicon
        .entity(name)
        .ok_or_else(|| parse_error(text, format!("unknown entity `{name}`")))
}

fn lookup_attribute(
    lexicon: &Lexicon,
    text: &str,
    name: &str,
) -> Result<AttributeId, RuleWorldError> {
    lexicon
        .attribute(name)
        .ok_or_else(|| parse_error(text, format!("unknown attribute `{name}`")))
}

fn literal_from(
    lexicon: &Lexicon,
    text: &str,
    values: &SlotValues,
    polarity: Polarity,
    ground: bool,
) -> Result<Literal, RuleWorldError> {
    let attribute = lookup_attribute(lexicon, text, values.attribute.as_deref().unwrap_or(""))?;
    let subject = if ground {
        Term::Entity(lookup_entity(lexicon, text, values.entity.as_deref().unwrap_or(""))?)
    } else {
        Term::Var
    };
    Ok(Literal {
        subject,
        attribute,
        polarity,
    })
}

fn parse_fact_with(
    text: &str,
    lexicon: &Lexicon,
    template_index: usize,
) -> Result<Literal, RuleWorldError> {
    let t = lexicon.compiled_fact(template_index)?;
    for (pattern, polarity) in [(&t.negative, Polarity::Negative), (&t.positive, Polarity::Positive)] {
        if let Some(values) = pattern.capture(text) {
            let literal = literal_from(lexicon, text, &values, polarity, true)?;
            if render_fact(&literal, lexicon, template_index)? == text {
                return Ok(literal);
            }
        }
    }
    Err(parse_error(text, "does not match the fact template"))
}

fn parse_rule_with(
    text: &str,
    lexicon: &Lexicon,
    template_index: usize,
) -> Result<Sentence, RuleWorldError> {
    let t = lexicon.compiled_rule(template_index)?;
    let mut last_error = parse_error(text, "does not match the rule template");
    for (frame, ground_head) in [(&t.variable_frame, false), (&t.ground_frame, true)] {
        let Some(values) = frame.capture(text) else {
            continue;
        };
        let body = values.body.as_deref().unwrap_or_default();
        let head = values.head.as_deref().unwrap_or_default();
        let head_pattern = if ground_head { &t.ground_head } else { &t.variable_head };
        let Some(head_values) = head_pattern.capture(head) else {
            continue;
        };
        let consequent = match literal_from(lexicon, text, &head_values, Polarity::Positive, ground_head) {
            Ok(c) => c,
            Err(e) => {
                last_error = e;
                continue;
            }
        };
        let mut antecedents = Vec::new();
        let mut ok = true;
        for part in body.split(t.joiner.as_str()) {
            let forms = [
                (&t.variable_negative, Polarity::Negative, false),
                (&t.variable_positive, Polarity::Positive, false),
                (&t.ground_negative, Polarity::Negative, true),
                (&t.ground_positive, Polarity::Positive, true),
            ];
            let parsed = forms.iter().find_map(|(p, pol, ground)| {
                p.capture(part)
                    .map(|v| literal_from(lexicon, text, &v, *pol, *ground))
            });
            match parsed {
                Some(Ok(l)) => antecedents.push(l),
                Some(Err(e)) => {
                    last_error = e;
                    ok = false;
                    break;
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok || validate_rule(&antecedents, &consequent).is_err() {
            continue;
        }
        if render_rule(&antecedents, &consequent, lexicon, template_index)? == text {
            return Ok(Sentence::Rule {
                antecedents,
                consequent,
            });
        }
    }
    Err(last_error)
}

/// Parse one sentence written with template `template_index`.
pub fn parse_sentence(
    text: &str,
    lexicon: &Lexicon,
    template_index: usize,
) -> Result<Sentence, RuleWorldError> {
    let fact_err = if template_index < lexicon.fact_template_count() {
        match parse_fact_with(text, lexicon, template_index) {
            Ok(l) => return Ok(Sentence::Fact(l)),
            Err(e) => Some(e),
        }
    } else {
        None
    };
    let rule_err = if template_index < lexicon.rule_template_count() {
        match parse_rule_with(text, lexicon, template_index) {
            Ok(r) => return Ok(r),
            Err(e) => Some(e),
        }
    } else {
        None
    };
    // prefer the more specific diagnostic (unknown word over template mismatch)
    let pick = [fact_err, rule_err]
        .into_iter()
        .flatten()
        .find(|e| matches!(e, RuleWorldError::Parse { reason, .. } if reason.starts_with("unknown")));
    Err(pick.unwrap_or_else(|| parse_error(text, "matches no template")))
}

/// Parse a sentence written with any of the lexicon's templates. Returns
/// the sentence and the index of the template that produced it.
pub fn parse_any_sentence(text: &str, lexicon: &Lexicon) -> Result<(Sentence, usize), RuleWorldError> {
    let n = lexicon.fact_template_count().max(lexicon.rule_template_count());
    let mut first_error = None;
    for i in 0..n {
        match parse_sentence(text, lexicon, i) {
            Ok(s) => return Ok((s, i)),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    Err(first_error.unwrap_or_else(|| parse_error(text, "matches no template")))
}

/// Inverse of the canonical fact and query templates. Accepts a trailing
/// `.` (statement) or `?` (question).
pub fn parse_statement(text: &str, lexicon: &Lexicon) -> Result<Literal, RuleWorldError> {
    let sentence = as_statement(text)?;
    parse_fact_with(&sentence, lexicon, CANONICAL)
}

/// Like [`parse_statement`] but accepts any fact template.
pub fn parse_any_statement(text: &str, lexicon: &Lexicon) -> Result<(Literal, usize), RuleWorldError> {
    let sentence = as_statement(text)?;
    for i in 0..lexicon.fact_template_count() {
        if let Ok(l) = parse_fact_with(&sentence, lexicon, i) {
            return Ok((l, i));
        }
    }
    parse_fact_with(&sentence, lexicon, CANONICAL).map(|l| (l, CANONICAL))
}

fn as_statement(text: &str) -> Result<String, RuleWorldError> {
    if let Some(stem) = text.strip_suffix('?') {
        Ok(format!("{stem}."))
    } else if text.ends_with('.') {
        Ok(text.to_string())
    } else {
        Err(parse_error(text, "a statement ends with `.` or `?`"))
    }
}

/// Concatenate the canonical text of every fact, then every rule, separated
/// by single spaces.
pub fn serialize_theory(theory: &Theory) -> String {
    let mut out = String::new();
    for text in theory
        .facts
        .iter()
        .map(|f| f.text.as_str())
        .chain(theory.rules.iter().map(|r| r.text.as_str()))
    {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(text);
    }
    out
}

/// Render a theory with a chosen template per sentence. `choose` receives
/// the sentence position (facts first) and returns a template index.
pub fn serialize_theory_with(
    theory: &Theory,
    mut choose: impl FnMut(usize) -> usize,
) -> Result<String, RuleWorldError> {
    let lex = &theory.lexicon;
    let mut sentences = Vec::with_capacity(theory.facts.len() + theory.rules.len());
    for f in &theory.facts {
        let i = choose(sentences.len());
        sentences.push(lexicalize_fact(f, lex, i)?);
    }
    for r in &theory.rules {
        let i = choose(sentences.len());
        sentences.push(lexicalize_rule(r, lex, i)?);
    }
    Ok(sentences.join(" "))
}

fn split_sentences(context: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = context.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        if c == '.' && chars.peek().is_none_or(|n| *n == ' ') {
            chars.next();
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.trim().is_empty() {
        out.push(current);
    }
    out
}

fn theory_from_sentences(
    id: &str,
    context: &str,
    lexicon: Arc<Lexicon>,
    any_template: bool,
) -> Result<Theory, RuleWorldError> {
    let mut facts = Vec::new();
    let mut rules = Vec::new();
    for sentence in split_sentences(context) {
        let parsed = if any_template {
            parse_any_sentence(&sentence, &lexicon)?.0
        } else {
            parse_sentence(&sentence, &lexicon, CANONICAL)?
        };
        match parsed {
            Sentence::Fact(l) => facts.push(Fact::new(l, &lexicon)?),
            Sentence::Rule {
                antecedents,
                consequent,
            } => rules.push(Rule::new(antecedents, consequent, &lexicon)?),
        }
    }
    Theory::new(id, lexicon, facts, rules)
}

/// Inverse of [`serialize_theory`].
pub fn parse_theory(
    id: &str,
    context: &str,
    lexicon: Arc<Lexicon>,
) -> Result<Theory, RuleWorldError> {
    theory_from_sentences(id, context, lexicon, false)
}

/// Parse a context whose sentences may use any template.
pub fn parse_theory_any(
    id: &str,
    context: &str,
    lexicon: Arc<Lexicon>,
) -> Result<Theory, RuleWorldError> {
    theory_from_sentences(id, context, lexicon, true)
}
