//! Template compilation, rendering and matching.

use regex::Regex;

use super::lexicon::{FactTemplate, RuleTemplate};
use super::RuleWorldError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Entity,
    Attribute,
    CapitalAttribute,
    Body,
    Head,
}

impl Slot {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "entity" => Slot::Entity,
            "attribute" => Slot::Attribute,
            "Attribute" => Slot::CapitalAttribute,
            "body" => Slot::Body,
            "head" => Slot::Head,
            _ => return None,
        })
    }

    fn pattern(self) -> &'static str {
        match self {
            Slot::Entity => "([A-Za-z]+)",
            Slot::Attribute => "([a-z]+)",
            Slot::CapitalAttribute => "([A-Z][a-z]*)",
            Slot::Body => "(.+)",
            Slot::Head => "(.+?)",
        }
    }
}

#[derive(Debug, Clone)]
enum Segment {
    Text(String),
    Slot(Slot),
}

/// Values bound to the slots of one template instance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct SlotValues {
    pub entity: Option<String>,
    pub attribute: Option<String>,
    pub body: Option<String>,
    pub head: Option<String>,
}

impl SlotValues {
    pub fn entity_attribute(entity: &str, attribute: &str) -> Self {
        Self {
            entity: Some(entity.to_string()),
            attribute: Some(attribute.to_string()),
            ..Self::default()
        }
    }

    pub fn attribute(attribute: &str) -> Self {
        Self {
            attribute: Some(attribute.to_string()),
            ..Self::default()
        }
    }

    fn bind(slot: &mut Option<String>, value: String) -> bool {
        match slot {
            Some(existing) => *existing == value,
            None => {
                *slot = Some(value);
                true
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Pattern {
    source: String,
    segments: Vec<Segment>,
    regex: Regex,
}

impl Pattern {
    fn compile(source: &str) -> Result<Self, RuleWorldError> {
        let mut segments = Vec::new();
        let mut rest = source;
        while let Some(open) = rest.find('{') {
            if open > 0 {
                segments.push(Segment::Text(rest[..open].to_string()));
            }
            let close = rest[open..].find('}').ok_or_else(|| {
                RuleWorldError::Lexicon(format!("unclosed slot in template `{source}`"))
            })? + open;
            let name = &rest[open + 1..close];
            let slot = Slot::parse(name).ok_or_else(|| {
                RuleWorldError::Lexicon(format!("unknown slot `{{{name}}}` in `{source}`"))
            })?;
            segments.push(Segment::Slot(slot));
            rest = &rest[close + 1..];
        }
        if !rest.is_empty() {
            segments.push(Segment::Text(rest.to_string()));
        }
        let mut re = String::from("^");
        for seg in &segments {
            match seg {
                Segment::Text(t) => re.push_str(&regex::escape(t)),
                Segment::Slot(s) => re.push_str(s.pattern()),
            }
        }
        re.push('$');
        let regex = Regex::new(&re).map_err(|e| RuleWorldError::Lexicon(e.to_string()))?;
        Ok(Self {
            source: source.to_string(),
            segments,
            regex,
        })
    }

    fn slots(&self) -> impl Iterator<Item = Slot> + '_ {
        self.segments.iter().filter_map(|s| match s {
            Segment::Slot(slot) => Some(*slot),
            Segment::Text(_) => None,
        })
    }

    fn require(&self, wanted: &[&[Slot]], forbidden: &[Slot]) -> Result<(), RuleWorldError> {
        for group in wanted {
            if !self.slots().any(|s| group.contains(&s)) {
                return Err(RuleWorldError::Lexicon(format!(
                    "template `{}` is missing a {:?} slot",
                    self.source, group
                )));
            }
        }
        if let Some(bad) = self.slots().find(|s| forbidden.contains(s)) {
            return Err(RuleWorldError::Lexicon(format!(
                "template `{}` may not use {:?}",
                self.source, bad
            )));
        }
        Ok(())
    }

    pub fn render(&self, values: &SlotValues) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(slot) => {
                    let value = match slot {
                        Slot::Entity => values.entity.as_deref(),
                        Slot::Attribute => values.attribute.as_deref(),
                        Slot::CapitalAttribute => {
                            if let Some(a) = values.attribute.as_deref() {
                                out.push_str(&capitalize(a));
                            }
                            continue;
                        }
                        Slot::Body => values.body.as_deref(),
                        Slot::Head => values.head.as_deref(),
                    };
                    out.push_str(value.unwrap_or_default());
                }
            }
        }
        out
    }

    /// Match `text` against the template; `None` if it does not fit or if
    /// a repeated slot binds inconsistent values.
    pub fn capture(&self, text: &str) -> Option<SlotValues> {
        let caps = self.regex.captures(text)?;
        let mut values = SlotValues::default();
        for (i, slot) in self.slots().enumerate() {
            let raw = caps.get(i + 1)?.as_str().to_string();
            let ok = match slot {
                Slot::Entity => SlotValues::bind(&mut values.entity, raw),
                Slot::Attribute => SlotValues::bind(&mut values.attribute, raw),
                Slot::CapitalAttribute => {
                    SlotValues::bind(&mut values.attribute, decapitalize(&raw))
                }
                Slot::Body => SlotValues::bind(&mut values.body, raw),
                Slot::Head => SlotValues::bind(&mut values.head, raw),
            };
            if !ok {
                return None;
            }
        }
        Some(values)
    }
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn decapitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

const ATTR: &[Slot] = &[Slot::Attribute, Slot::CapitalAttribute];

fn require_period(source: &str) -> Result<(), RuleWorldError> {
    if source.ends_with('.') {
        Ok(())
    } else {
        Err(RuleWorldError::Lexicon(format!(
            "sentence template `{source}` must end with a period"
        )))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct CompiledFact {
    pub positive: Pattern,
    pub negative: Pattern,
}

impl CompiledFact {
    pub fn compile(t: &FactTemplate) -> Result<Self, RuleWorldError> {
        let positive = Pattern::compile(&t.positive)?;
        let negative = Pattern::compile(&t.negative)?;
        for p in [&positive, &negative] {
            require_period(&p.source)?;
            p.require(&[&[Slot::Entity], ATTR], &[Slot::Body, Slot::Head])?;
        }
        Ok(Self { positive, negative })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct CompiledRule {
    pub variable_frame: Pattern,
    pub ground_frame: Pattern,
    pub variable_positive: Pattern,
    pub variable_negative: Pattern,
    pub ground_positive: Pattern,
    pub ground_negative: Pattern,
    pub variable_head: Pattern,
    pub ground_head: Pattern,
    pub joiner: String,
}

impl CompiledRule {
    pub fn compile(t: &RuleTemplate) -> Result<Self, RuleWorldError> {
        let frames = [
            Pattern::compile(&t.variable_frame)?,
            Pattern::compile(&t.ground_frame)?,
        ];
        for f in &frames {
            require_period(&f.source)?;
            f.require(&[&[Slot::Body], &[Slot::Head]], &[Slot::Entity])?;
        }
        let variable_forms = [
            Pattern::compile(&t.variable_positive)?,
            Pattern::compile(&t.variable_negative)?,
            Pattern::compile(&t.variable_head)?,
        ];
        for f in &variable_forms {
            f.require(&[ATTR], &[Slot::Entity, Slot::Body, Slot::Head])?;
        }
        let ground_forms = [
            Pattern::compile(&t.ground_positive)?,
            Pattern::compile(&t.ground_negative)?,
            Pattern::compile(&t.ground_head)?,
        ];
        for f in &ground_forms {
            f.require(&[&[Slot::Entity], ATTR], &[Slot::Body, Slot::Head])?;
        }
        if t.joiner.is_empty() {
            return Err(RuleWorldError::Lexicon("empty rule joiner".into()));
        }
        let [variable_frame, ground_frame] = frames;
        let [variable_positive, variable_negative, variable_head] = variable_forms;
        let [ground_positive, ground_negative, ground_head] = ground_forms;
        Ok(Self {
            variable_frame,
            ground_frame,
            variable_positive,
            variable_negative,
            ground_positive,
            ground_negative,
            variable_head,
            ground_head,
            joiner: t.joiner.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capture_inverts_render() {
        let p = Pattern::compile("{Attribute} is what {entity} is.").unwrap();
        let v = SlotValues::entity_attribute("Bob", "big");
        let text = p.render(&v);
        assert_eq!(text, "Big is what Bob is.");
        assert_eq!(p.capture(&text), Some(v));
    }

    #[test]
    fn unknown_slot_rejected() {
        assert!(Pattern::compile("{who} is {attribute}.").is_err());
    }

    #[test]
    fn literal_text_is_escaped() {
        let p = Pattern::compile("{entity} is (really) {attribute}.").unwrap();
        assert!(p.capture("Bob is (really) big.").is_some());
        assert!(p.capture("Bob is really big.").is_none());
    }
}
