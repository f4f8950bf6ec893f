//! Forward closure: the brute-force oracle for the backward prover.
//!
//! Rules are grounded over every entity the theory mentions. The least
//! model is computed stratum by stratum; afterwards the derivation is
//! replayed breadth first with negation fixed against that model, which
//! yields the first stratum at which each atom appears.

use std::collections::{BTreeMap, BTreeSet};

use super::{stratify, ProverError, Query};
use crate::ruleworld::{Atom, EntityId, Literal, Term, Theory};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Closure {
    /// `strata[k]` holds every atom derivable with at most `k` rule layers.
    pub strata: Vec<BTreeSet<Atom>>,
    /// First stratum of each atom reached within the depth cap.
    pub first_depth: BTreeMap<Atom, usize>,
    /// The complete least model, not truncated by the depth cap.
    pub model: BTreeSet<Atom>,
    pub negative_facts: BTreeSet<Atom>,
}

impl Closure {
    pub fn depth_of(&self, atom: &Atom) -> Option<usize> {
        self.first_depth.get(atom).copied()
    }

    /// Closed-world truth value of a ground literal within the depth cap.
    pub fn holds(&self, literal: &Literal) -> bool {
        let Some(atom) = literal.atom() else {
            return false;
        };
        if literal.polarity.is_positive() {
            self.first_depth.contains_key(&atom)
        } else {
            self.negative_facts.contains(&atom) || !self.first_depth.contains_key(&atom)
        }
    }
}

struct GroundRule {
    positive: Vec<Atom>,
    negative: Vec<Atom>,
    head: Atom,
}

fn ground_rules(theory: &Theory, domain: &[EntityId]) -> Vec<GroundRule> {
    let mut out = Vec::new();
    for rule in theory.rules() {
        let bindings: Vec<EntityId> = match rule.consequent.subject {
            Term::Var => domain.to_vec(),
            Term::Entity(e) => vec![e],
        };
        for entity in bindings {
            let mut positive = Vec::new();
            let mut negative = Vec::new();
            for ant in &rule.antecedents {
                let atom = ant.bind(entity).atom().expect("bound antecedent");
                if ant.polarity.is_positive() {
                    positive.push(atom);
                } else {
                    negative.push(atom);
                }
            }
            out.push(GroundRule {
                positive,
                negative,
                head: rule.consequent.bind(entity).atom().expect("bound consequent"),
            });
        }
    }
    out
}

/// Forward closure over the entities mentioned by `theory`.
pub fn forward_closure(theory: &Theory, max_depth: usize) -> Result<Closure, ProverError> {
    forward_closure_over(theory, &[], max_depth)
}

/// Forward closure with `extra` entities added to the grounding domain.
pub fn forward_closure_over(
    theory: &Theory,
    extra: &[EntityId],
    max_depth: usize,
) -> Result<Closure, ProverError> {
    let levels = stratify(theory)?;
    let mut domain = theory.entities();
    domain.extend_from_slice(extra);
    domain.sort();
    domain.dedup();
    let rules = ground_rules(theory, &domain);

    let base: BTreeSet<Atom> = theory
        .facts()
        .iter()
        .filter(|f| f.literal.polarity.is_positive())
        .filter_map(|f| f.literal.atom())
        .collect();
    let negative_facts: BTreeSet<Atom> = theory
        .facts()
        .iter()
        .filter(|f| !f.literal.polarity.is_positive())
        .filter_map(|f| f.literal.atom())
        .collect();

    let top = levels.values().copied().max().unwrap_or(0);
    let mut model = base.clone();
    for level in 0..=top {
        loop {
            let mut changed = false;
            for r in rules.iter().filter(|r| levels[&r.head.attribute] == level) {
                if model.contains(&r.head) {
                    continue;
                }
                let fires = r.positive.iter().all(|a| model.contains(a))
                    && r
                        .negative
                        .iter()
                        .all(|a| negative_facts.contains(a) || !model.contains(a));
                if fires {
                    model.insert(r.head);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }

    let mut first_depth: BTreeMap<Atom, usize> = base.iter().map(|a| (*a, 0)).collect();
    let mut strata = vec![base];
    while strata.len() <= max_depth {
        let current = strata.last().expect("nonempty");
        let mut next = current.clone();
        for r in &rules {
            let fires = r.positive.iter().all(|a| current.contains(a))
                && r
                    .negative
                    .iter()
                    .all(|a| negative_facts.contains(a) || !model.contains(a));
            if fires && next.insert(r.head) {
                first_depth.insert(r.head, strata.len());
            }
        }
        if next.len() == current.len() {
            break;
        }
        strata.push(next);
    }

    Ok(Closure {
        strata,
        first_depth,
        model,
        negative_facts,
    })
}

/// First-derivation stratum of the query's atom. For a negative query:
/// 0 when the negation is stated, the stratum at which the positive atom
/// appears (the query is then false), otherwise `max_depth`.
pub fn min_proof_depth(
    query: &Query,
    theory: &Theory,
    max_depth: usize,
) -> Result<Option<usize>, ProverError> {
    let atom = query
        .literal
        .atom()
        .ok_or_else(|| ProverError::NotGround(query.text.clone()))?;
    let closure = forward_closure_over(theory, &[atom.entity], max_depth)?;
    let derived = closure.depth_of(&atom);
    Ok(if query.literal.polarity.is_positive() {
        derived
    } else if closure.negative_facts.contains(&atom) {
        Some(0)
    } else {
        Some(derived.unwrap_or(max_depth))
    })
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    #[test]
    fn no_rules_closure_is_facts() {
        let mut t = figure_one();
        let lex = t.lexicon().clone();
        t = Theory::new("facts", lex, t.facts().to_vec(), vec![]).unwrap();
        let c = forward_closure(&t, 6).unwrap();
        assert_eq!(c.strata.len(), 1);
        let positives: BTreeSet<Atom> = t
            .facts()
            .iter()
            .filter(|f| f.literal.polarity.is_positive())
            .map(|f| f.literal.atom().unwrap())
            .collect();
        assert_eq!(c.model, positives);
    }

    #[test]
    fn chain_strata() {
        let t = chain(2);
        let lex = t.lexicon().clone();
        let names = lex.spec().attributes.clone();
        let c = forward_closure(&t, 6).unwrap();
        let top = lit(&lex, "Bob", &names[2], true).atom().unwrap();
        assert_eq!(c.depth_of(&top), Some(2));
        assert!(!c.strata[1].contains(&top));
        assert!(c.strata[2].contains(&top));
    }

    #[test]
    fn figure_one_green_at_stratum_one() {
        let t = figure_one();
        let lex = t.lexicon().clone();
        let c = forward_closure(&t, 6).unwrap();
        assert_eq!(c.depth_of(&lit(&lex, "Bob", "green", true).atom().unwrap()), Some(1));
        assert_eq!(c.depth_of(&lit(&lex, "Bob", "round", true).atom().unwrap()), Some(2));
    }

    #[test]
    fn min_depth_examples() {
        let t = figure_one();
        let lex = t.lexicon().clone();
        let q = |e: &str, a: &str, p: bool| Query::new(lit(&lex, e, a, p), &lex).unwrap();
        assert_eq!(min_proof_depth(&q("Bob", "big", true), &t, 6).unwrap(), Some(0));
        assert_eq!(min_proof_depth(&q("Bob", "green", true), &t, 6).unwrap(), Some(1));
        assert_eq!(min_proof_depth(&q("Gary", "green", true), &t, 6).unwrap(), None);
        assert_eq!(min_proof_depth(&q("Gary", "green", false), &t, 6).unwrap(), Some(6));
        assert_eq!(min_proof_depth(&q("Gary", "cold", false), &t, 6).unwrap(), Some(0));

        let t5 = chain(5);
        let names = lex.spec().attributes.clone();
        let q5 = Query::new(lit(&lex, "Bob", &names[5], true), &lex).unwrap();
        assert_eq!(min_proof_depth(&q5, &t5, 6).unwrap(), Some(5));
        assert_eq!(min_proof_depth(&q5, &t5, 4).unwrap(), None);
    }
}
