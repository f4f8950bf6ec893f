//! Proof replay and the text form of proof traces.

use thiserror::Error;

use super::{forward_closure_over, unify_candidates, ProofStep, Query, StepKind};
use crate::ruleworld::{render_fact, Lexicon, Literal, Theory, CANONICAL};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error("empty proof")]
    Empty,
    #[error("step {0}: expected goal {1}, found {2}")]
    WrongGoal(usize, Literal, Literal),
    #[error("step {0}: expected level {1}, found {2}")]
    WrongLevel(usize, usize, usize),
    #[error("step {0}: `{1}` is not a fact")]
    NotAFact(usize, Literal),
    #[error("step {0}: rule does not unify with the goal")]
    BadUnification(usize),
    #[error("step {0}: negated atom is derivable")]
    BadNegation(usize),
    #[error("proof ends early")]
    Truncated,
    #[error("{0} trailing steps")]
    Trailing(usize),
}

struct Replayer<'a> {
    steps: &'a [ProofStep],
    theory: &'a Theory,
    next: usize,
}

impl Replayer<'_> {
    fn consume(&mut self, expected: Literal, level: usize) -> Result<(), ReplayError> {
        let index = self.next;
        let step = self.steps.get(index).ok_or(ReplayError::Truncated)?;
        self.next += 1;
        if step.goal != expected {
            return Err(ReplayError::WrongGoal(index, expected, step.goal));
        }
        if step.level != level {
            return Err(ReplayError::WrongLevel(index, level, step.level));
        }
        match step.kind {
            StepKind::FactCheck => {
                if !self.theory.has_fact(&step.goal) {
                    return Err(ReplayError::NotAFact(index, step.goal));
                }
            }
            StepKind::NegationAsFailure => {
                let atom = step.goal.atom().ok_or(ReplayError::BadNegation(index))?;
                let closure = forward_closure_over(self.theory, &[atom.entity], 0)
                    .map_err(|_| ReplayError::BadNegation(index))?;
                if step.goal.polarity.is_positive() || closure.model.contains(&atom) {
                    return Err(ReplayError::BadNegation(index));
                }
            }
            StepKind::Unification => {
                let rule = step.rule.ok_or(ReplayError::BadUnification(index))?;
                let matched = unify_candidates(&step.goal, self.theory)
                    .into_iter()
                    .any(|c| c.rule == rule && c.subgoals == step.subgoals);
                if !matched {
                    return Err(ReplayError::BadUnification(index));
                }
                for sub in step.subgoals.clone() {
                    self.consume(sub, level + 1)?;
                }
            }
        }
        Ok(())
    }
}

/// Check every step of a proof against the theory and return the label it
/// establishes for `query`.
pub fn replay(query: &Query, steps: &[ProofStep], theory: &Theory) -> Result<bool, ReplayError> {
    let first = steps.first().ok_or(ReplayError::Empty)?;
    let positive = query.literal.polarity.is_positive();
    // a negative query is either stated or refuted by a proof of its atom
    let (root, label) = if positive || (first.kind == StepKind::FactCheck && first.goal == query.literal) {
        (query.literal, true)
    } else {
        (query.literal.negated(), false)
    };
    let mut r = Replayer {
        steps,
        theory,
        next: 0,
    };
    r.consume(root, 0)?;
    if r.next != steps.len() {
        return Err(ReplayError::Trailing(steps.len() - r.next));
    }
    Ok(label)
}

/// One tab-separated line per step: level, kind, rule index (`-` when
/// absent), goal sentence, subgoal sentences joined by ` ; `.
pub fn format_trace(steps: &[ProofStep], lexicon: &Lexicon) -> String {
    let text = |l: &Literal| render_fact(l, lexicon, CANONICAL).unwrap_or_else(|_| l.to_string());
    let mut out = String::new();
    for step in steps {
        let kind = match step.kind {
            StepKind::FactCheck => "fact_check",
            StepKind::Unification => "unification",
            StepKind::NegationAsFailure => "negation_as_failure",
        };
        let rule = step.rule.map_or_else(|| "-".to_string(), |r| r.to_string());
        let subgoals: Vec<String> = step.subgoals.iter().map(text).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            step.level,
            kind,
            rule,
            text(&step.goal),
            subgoals.join(" ; ")
        ));
    }
    out
}
