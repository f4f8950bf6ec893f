//! Backward-chaining prover with closed-world labelling.
//!
//! Goals are proved depth first: a fact check on the goal, then each rule
//! whose consequent unifies with it, in theory order, with every
//! instantiated antecedent proved in turn. The search is wrapped in
//! iterative deepening over the number of unification steps along a path,
//! so the first proof found is a shallowest one.
//!
//! Negative antecedents are resolved by an explicit negative fact or by
//! negation as failure against a complete search. Theories must be
//! stratified: no attribute may depend negatively on itself through the
//! rules.

mod closure;
mod trace;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ruleworld::{
    lexicalize_query, parse_statement, AttributeId, Atom, Lexicon, Literal, Polarity, RuleWorldError,
    Term, Theory,
};

pub use closure::{forward_closure, forward_closure_over, min_proof_depth, Closure};
pub use trace::{format_trace, replay, ReplayError};

/// One beyond the deepest evaluated query depth.
pub const DEFAULT_MAX_DEPTH: usize = 6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProverError {
    #[error("query `{0}` is not ground")]
    NotGround(String),
    #[error("theory `{theory}` is not stratified: `{attribute}` depends negatively on itself")]
    NotStratified { theory: String, attribute: String },
    #[error(transparent)]
    RuleWorld(#[from] RuleWorldError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub literal: Literal,
    pub text: String,
}

impl Query {
    pub fn new(literal: Literal, lexicon: &Lexicon) -> Result<Self, ProverError> {
        if !literal.is_ground() {
            return Err(ProverError::NotGround(literal.to_string()));
        }
        let text = lexicalize_query(&literal, lexicon, crate::ruleworld::CANONICAL)?;
        Ok(Self { literal, text })
    }

    pub fn parse(text: &str, lexicon: &Lexicon) -> Result<Self, ProverError> {
        let literal = parse_statement(text, lexicon)?;
        Ok(Self {
            literal,
            text: text.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    FactCheck,
    Unification,
    /// A negative subgoal accepted because its positive atom has no proof.
    NegationAsFailure,
}

/// One step of a proof, listed in depth-first pre-order. `level` counts the
/// unification steps above this one on its path to the query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofStep {
    pub kind: StepKind,
    pub goal: Literal,
    pub rule: Option<usize>,
    pub subgoals: Vec<Literal>,
    pub level: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofResult {
    pub label: bool,
    /// Height of the proof in unification steps. For answers that rest on
    /// the closed-world assumption, the depth at which the failed search
    /// became exhaustive (capped at `max_depth`).
    pub depth: usize,
    pub provable: bool,
    pub steps: Vec<ProofStep>,
}

impl ProofResult {
    pub fn unification_count(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.kind == StepKind::Unification)
            .count()
    }

    /// Proof height recomputed from the step list.
    pub fn step_height(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.kind == StepKind::Unification)
            .map(|s| s.level + 1)
            .max()
            .unwrap_or(0)
    }
}

/// f(q, κ): the query literal is stated verbatim, polarity included.
pub fn fact_check(query: &Query, theory: &Theory) -> bool {
    theory.has_fact(&query.literal)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub rule: usize,
    pub subgoals: Vec<Literal>,
}

/// u(q, κ): every rule whose consequent matches the ground `goal`, with its
/// antecedents instantiated under the binding, in rule order.
pub fn unify_candidates(goal: &Literal, theory: &Theory) -> Vec<Candidate> {
    let Some(entity) = goal.subject.entity() else {
        return Vec::new();
    };
    if !goal.polarity.is_positive() {
        return Vec::new();
    }
    theory
        .rules()
        .iter()
        .enumerate()
        .filter(|(_, r)| {
            r.consequent.attribute == goal.attribute
                && match r.consequent.subject {
                    Term::Var => true,
                    Term::Entity(e) => e == entity,
                }
        })
        .map(|(i, r)| Candidate {
            rule: i,
            subgoals: r.antecedents.iter().map(|a| a.bind(entity)).collect(),
        })
        .collect()
}

/// Attribute strata: an attribute sits strictly above every attribute it
/// depends on negatively and at or above those it depends on positively.
pub fn stratify(theory: &Theory) -> Result<HashMap<AttributeId, usize>, ProverError> {
    let attributes = theory.attributes();
    let mut level: HashMap<AttributeId, usize> = attributes.iter().map(|a| (*a, 0)).collect();
    let limit = attributes.len();
    loop {
        let mut changed = false;
        for rule in theory.rules() {
            let head = rule.consequent.attribute;
            for ant in &rule.antecedents {
                let need = level[&ant.attribute] + usize::from(!ant.polarity.is_positive());
                if level[&head] < need {
                    if need > limit {
                        let name = theory
                            .lexicon()
                            .attribute_name(head)
                            .unwrap_or("?")
                            .to_string();
                        return Err(ProverError::NotStratified {
                            theory: theory.id.clone(),
                            attribute: name,
                        });
                    }
                    level.insert(head, need);
                    changed = true;
                }
            }
        }
        if !changed {
            return Ok(level);
        }
    }
}

struct Node {
    kind: StepKind,
    goal: Literal,
    rule: Option<usize>,
    subgoals: Vec<Literal>,
    children: Vec<Node>,
    height: usize,
}

impl Node {
    fn leaf(kind: StepKind, goal: Literal) -> Self {
        Self {
            kind,
            goal,
            rule: None,
            subgoals: Vec::new(),
            children: Vec::new(),
            height: 0,
        }
    }

    fn flatten(self, level: usize, out: &mut Vec<ProofStep>) {
        let child_level = level + usize::from(self.kind == StepKind::Unification);
        out.push(ProofStep {
            kind: self.kind,
            goal: self.goal,
            rule: self.rule,
            subgoals: self.subgoals,
            level,
        });
        for child in self.children {
            child.flatten(child_level, out);
        }
    }

    fn into_steps(self) -> Vec<ProofStep> {
        let mut out = Vec::new();
        self.flatten(0, &mut out);
        out
    }
}

enum Outcome {
    Proved(Node),
    /// `cut` is set when some branch was abandoned because of the bound.
    Failed { cut: bool },
}

enum Deepening {
    Proved(Node),
    Refuted { certified_at: usize },
    Undecided,
}

struct Search<'t> {
    theory: &'t Theory,
    facts: HashSet<Literal>,
    complete_bound: usize,
    derivable: HashMap<Atom, bool>,
}

impl<'t> Search<'t> {
    fn new(theory: &'t Theory, query: &Literal) -> Self {
        let mut entities = theory.entities();
        let mut attributes = theory.attributes();
        if let Some(e) = query.subject.entity() {
            entities.push(e);
        }
        attributes.push(query.attribute);
        entities.sort();
        entities.dedup();
        attributes.sort();
        attributes.dedup();
        Self {
            theory,
            facts: theory.facts().iter().map(|f| f.literal).collect(),
            // a loop-free path never repeats an atom
            complete_bound: entities.len() * attributes.len() + 1,
            derivable: HashMap::new(),
        }
    }

    fn is_fact(&self, literal: &Literal) -> bool {
        self.facts.contains(literal)
    }

    fn is_derivable(&mut self, atom: Atom) -> bool {
        if let Some(known) = self.derivable.get(&atom) {
            return *known;
        }
        let result = matches!(
            self.search(atom, self.complete_bound, &mut Vec::new()),
            Outcome::Proved(_)
        );
        self.derivable.insert(atom, result);
        result
    }

    fn search(&mut self, atom: Atom, bound: usize, stack: &mut Vec<Atom>) -> Outcome {
        let goal = atom.literal(Polarity::Positive);
        if self.is_fact(&goal) {
            return Outcome::Proved(Node::leaf(StepKind::FactCheck, goal));
        }
        let candidates = unify_candidates(&goal, self.theory);
        if candidates.is_empty() {
            return Outcome::Failed { cut: false };
        }
        if bound == 0 {
            return Outcome::Failed { cut: true };
        }
        stack.push(atom);
        let mut cut = false;
        'rules: for cand in candidates {
            let mut children = Vec::with_capacity(cand.subgoals.len());
            for sub in &cand.subgoals {
                let sub_atom = sub.atom().expect("instantiated antecedents are ground");
                if sub.polarity.is_positive() {
                    if stack.contains(&sub_atom) {
                        continue 'rules;
                    }
                    match self.search(sub_atom, bound - 1, stack) {
                        Outcome::Proved(node) => children.push(node),
                        Outcome::Failed { cut: c } => {
                            cut |= c;
                            continue 'rules;
                        }
                    }
                } else if self.is_fact(sub) {
                    children.push(Node::leaf(StepKind::FactCheck, *sub));
                } else if !self.is_derivable(sub_atom) {
                    children.push(Node::leaf(StepKind::NegationAsFailure, *sub));
                } else {
                    continue 'rules;
                }
            }
            stack.pop();
            let height = 1 + children.iter().map(|c| c.height).max().unwrap_or(0);
            return Outcome::Proved(Node {
                kind: StepKind::Unification,
                goal,
                rule: Some(cand.rule),
                subgoals: cand.subgoals,
                children,
                height,
            });
        }
        stack.pop();
        Outcome::Failed { cut }
    }

    fn deepen(&mut self, atom: Atom, max_depth: usize) -> Deepening {
        for bound in 0..=max_depth {
            match self.search(atom, bound, &mut Vec::new()) {
                Outcome::Proved(node) => return Deepening::Proved(node),
                Outcome::Failed { cut: false } => {
                    return Deepening::Refuted {
                        certified_at: bound,
                    }
                }
                Outcome::Failed { cut: true } => {}
            }
        }
        Deepening::Undecided
    }
}

/// Prove a ground query, returning the label under the closed-world
/// assumption, the minimal proof depth and a shallowest proof.
///
/// A negative query `¬A` is true when `¬A` is stated or when `A` has no
/// proof within `max_depth`. A proof of `A` refutes `¬A`; that refutation
/// is returned as the (provable) evidence for the false label.
pub fn prove(query: &Query, theory: &Theory, max_depth: usize) -> Result<ProofResult, ProverError> {
    let literal = query.literal;
    let atom = literal
        .atom()
        .ok_or_else(|| ProverError::NotGround(query.text.clone()))?;
    stratify(theory)?;
    let mut search = Search::new(theory, &literal);
    let positive = literal.polarity.is_positive();

    if !positive && search.is_fact(&literal) {
        return Ok(ProofResult {
            label: true,
            depth: 0,
            provable: true,
            steps: vec![ProofStep {
                kind: StepKind::FactCheck,
                goal: literal,
                rule: None,
                subgoals: Vec::new(),
                level: 0,
            }],
        });
    }
    Ok(match search.deepen(atom, max_depth) {
        Deepening::Proved(node) => ProofResult {
            label: positive,
            depth: node.height,
            provable: true,
            steps: node.into_steps(),
        },
        Deepening::Refuted { certified_at } => ProofResult {
            label: !positive,
            depth: certified_at,
            provable: false,
            steps: Vec::new(),
        },
        Deepening::Undecided => ProofResult {
            label: !positive,
            depth: max_depth,
            provable: false,
            steps: Vec::new(),
        },
    })
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn query(theory: &Theory, entity: &str, attribute: &str, positive: bool) -> Query {
        let lex = theory.lexicon();
        Query::new(lit(lex, entity, attribute, positive), lex).unwrap()
    }

    #[test]
    fn fact_check_is_verbatim() {
        let t = figure_one();
        assert!(fact_check(&query(&t, "Bob", "big", true), &t));
        assert!(!fact_check(&query(&t, "Bob", "green", true), &t));
        assert!(fact_check(&query(&t, "Gary", "cold", false), &t));
        assert!(!fact_check(&query(&t, "Gary", "cold", true), &t));
    }

    #[test]
    fn unification_candidates_in_rule_order() {
        let t = figure_one();
        let lex = t.lexicon().clone();
        let goal = lit(&lex, "Bob", "green", true);
        let c = unify_candidates(&goal, &t);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0], Candidate { rule: 0, subgoals: vec![lit(&lex, "Bob", "smart", true)] });
        assert_eq!(c[1], Candidate { rule: 1, subgoals: vec![lit(&lex, "Bob", "rough", true)] });
        assert!(unify_candidates(&lit(&lex, "Bob", "cold", true), &t).is_empty());
        assert!(unify_candidates(&goal.negated(), &t).is_empty());
    }

    #[test]
    fn bob_is_green_walkthrough() {
        let t = figure_one();
        let lex = t.lexicon().clone();
        let r = prove(&query(&t, "Bob", "green", true), &t, DEFAULT_MAX_DEPTH).unwrap();
        assert!(r.label && r.provable);
        assert_eq!(r.depth, 1);
        assert_eq!(r.steps.len(), 2);
        assert_eq!(r.steps[0].kind, StepKind::Unification);
        assert_eq!(r.steps[0].rule, Some(1));
        assert_eq!(r.steps[1].kind, StepKind::FactCheck);
        assert_eq!(r.steps[1].goal, lit(&lex, "Bob", "rough", true));
    }

    #[test]
    fn depth_zero_fact() {
        let t = figure_one();
        let r = prove(&query(&t, "Bob", "big", true), &t, DEFAULT_MAX_DEPTH).unwrap();
        assert_eq!((r.label, r.depth, r.provable), (true, 0, true));
        assert_eq!(r.steps.len(), 1);
        assert_eq!(r.steps[0].kind, StepKind::FactCheck);
    }

    #[test]
    fn chain_of_two() {
        let t = chain(2);
        let names = t.lexicon().spec().attributes.clone();
        let r = prove(&query(&t, "Bob", &names[2], true), &t, DEFAULT_MAX_DEPTH).unwrap();
        assert_eq!((r.label, r.depth, r.provable), (true, 2, true));
        assert_eq!(r.unification_count(), 2);
    }

    #[test]
    fn conjunction_depth_is_proof_height() {
        let t = figure_one();
        let r = prove(&query(&t, "Bob", "round", true), &t, DEFAULT_MAX_DEPTH).unwrap();
        // round ⇐ green ∧ big, green ⇐ rough
        assert_eq!((r.label, r.depth), (true, 2));
        assert_eq!(r.step_height(), 2);
    }

    #[test]
    fn closed_world_answers() {
        let t = figure_one();
        let r = prove(&query(&t, "Gary", "green", true), &t, DEFAULT_MAX_DEPTH).unwrap();
        assert!(!r.label && !r.provable && r.steps.is_empty());
        // the search reaches smart(Gary) and rough(Gary) at one unification
        assert_eq!(r.depth, 1);
        let r = prove(&query(&t, "Gary", "green", false), &t, DEFAULT_MAX_DEPTH).unwrap();
        assert!(r.label && !r.provable);
        let r = prove(&query(&t, "Gary", "big", true), &t, DEFAULT_MAX_DEPTH).unwrap();
        assert_eq!((r.label, r.depth, r.provable), (false, 0, false));
    }

    #[test]
    fn negative_queries() {
        let t = figure_one();
        let r = prove(&query(&t, "Gary", "cold", false), &t, DEFAULT_MAX_DEPTH).unwrap();
        assert_eq!((r.label, r.depth, r.provable), (true, 0, true));
        let r = prove(&query(&t, "Bob", "green", false), &t, DEFAULT_MAX_DEPTH).unwrap();
        assert_eq!((r.label, r.depth, r.provable), (false, 1, true));
        let r = prove(&query(&t, "Bob", "big", false), &t, DEFAULT_MAX_DEPTH).unwrap();
        assert_eq!((r.label, r.depth, r.provable), (false, 0, true));
    }

    #[test]
    fn max_depth_caps_search() {
        let t = chain(5);
        let names = t.lexicon().spec().attributes.clone();
        let q = query(&t, "Bob", &names[5], true);
        let r = prove(&q, &t, 3).unwrap();
        assert_eq!((r.label, r.depth, r.provable), (false, 3, false));
        let r = prove(&q, &t, 5).unwrap();
        assert_eq!((r.label, r.depth, r.provable), (true, 5, true));
    }

    #[test]
    fn cycles_terminate() {
        let lex = Arc::new(Lexicon::default());
        let l = &*lex;
        let t = Theory::from_literals(
            "cycle",
            lex.clone(),
            &[lit(l, "Bob", "cold", true)],
            &[
                (vec![var(l, "red", true)], var(l, "blue", true)),
                (vec![var(l, "blue", true)], var(l, "red", true)),
                (vec![var(l, "cold", true)], var(l, "blue", true)),
            ],
        )
        .unwrap();
        let r = prove(&query(&t, "Bob", "red", true), &t, DEFAULT_MAX_DEPTH).unwrap();
        assert_eq!((r.label, r.depth), (true, 2));
        let r = prove(&query(&t, "Gary", "red", true), &t, DEFAULT_MAX_DEPTH).unwrap();
        assert!(!r.label);
        assert_eq!(r.depth, 2);
    }

    #[test]
    fn negation_as_failure_antecedent() {
        let lex = Arc::new(Lexicon::default());
        let l = &*lex;
        let t = Theory::from_literals(
            "naf",
            lex.clone(),
            &[lit(l, "Bob", "big", true), lit(l, "Gary", "big", true), lit(l, "Gary", "kind", true)],
            &[(vec![var(l, "big", true), var(l, "kind", false)], var(l, "red", true))],
        )
        .unwrap();
        let r = prove(&query(&t, "Bob", "red", true), &t, DEFAULT_MAX_DEPTH).unwrap();
        assert!(r.label);
        assert_eq!(r.steps[2].kind, StepKind::NegationAsFailure);
        let r = prove(&query(&t, "Gary", "red", true), &t, DEFAULT_MAX_DEPTH).unwrap();
        assert!(!r.label);
    }

    #[test]
    fn unstratified_theory_rejected() {
        let lex = Arc::new(Lexicon::default());
        let l = &*lex;
        let t = Theory::from_literals(
            "bad",
            lex.clone(),
            &[],
            &[(vec![var(l, "big", false)], var(l, "big", true))],
        )
        .unwrap();
        let q = query(&t, "Bob", "big", true);
        assert!(matches!(prove(&q, &t, 6), Err(ProverError::NotStratified { .. })));
    }

    use std::sync::Arc;
}
