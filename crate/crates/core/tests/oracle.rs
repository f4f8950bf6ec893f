//! The backward prover against the forward-closure oracle on random theories.

use proptest::prelude::*;
use unifier_core::datagen::{generate_theory, GenConfig};
use unifier_core::prover::{forward_closure_over, min_proof_depth, prove, replay, Query, DEFAULT_MAX_DEPTH};
use unifier_core::ruleworld::{
    parse_theory, serialize_theory, Literal, Polarity, Theory,
};

fn config(chain: usize, negation: bool) -> GenConfig {
    GenConfig {
        facts_max: 8,
        rules_max: 6,
        planted_chain: chain,
        negated_antecedent_fraction: if negation { 0.15 } else { 0.0 },
        ..GenConfig::default()
    }
}

fn all_queries(t: &Theory) -> Vec<Query> {
    let mut out = Vec::new();
    for e in t.entities() {
        for a in t.attributes() {
            for p in [Polarity::Positive, Polarity::Negative] {
                out.push(Query::new(Literal::ground(e, a, p), t.lexicon()).unwrap());
            }
        }
    }
    out
}

/// Label under the closed world, computed from the closure alone.
fn oracle_label(q: &Query, t: &Theory) -> bool {
    let atom = q.literal.atom().unwrap();
    let c = forward_closure_over(t, &[atom.entity], 0).unwrap();
    let derived = c.model.contains(&atom);
    if q.literal.polarity.is_positive() {
        derived
    } else {
        c.negative_facts.contains(&atom) || !derived
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prover_matches_closure(seed in any::<u64>(), chain in 0usize..=5, negation in any::<bool>()) {
        let t = generate_theory(&config(chain, negation), seed).unwrap();
        for q in all_queries(&t) {
            let r = prove(&q, &t, DEFAULT_MAX_DEPTH).unwrap();
            prop_assert_eq!(r.label, oracle_label(&q, &t), "{}", q.text);
            if r.provable {
                let d = min_proof_depth(&q, &t, DEFAULT_MAX_DEPTH).unwrap();
                prop_assert_eq!(Some(r.depth), d, "{}", q.text);
                prop_assert_eq!(replay(&q, &r.steps, &t), Ok(r.label));
            }
        }
    }

    #[test]
    fn serialization_round_trips(seed in any::<u64>(), chain in 0usize..=5) {
        let t = generate_theory(&config(chain, true), seed).unwrap();
        let text = serialize_theory(&t);
        let back = parse_theory(&t.id, &text, t.lexicon().clone()).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(serialize_theory(&back), text);
    }

    /// Adding a fact never retracts a label in a negation-free theory.
    #[test]
    fn monotone_without_negation(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let c = GenConfig { negative_fact_fraction: 0.0, ..config(2, false) };
        let t = generate_theory(&c, seed).unwrap();
        let queries: Vec<Query> = all_queries(&t)
            .into_iter()
            .filter(|q| q.literal.polarity.is_positive())
            .collect();
        let extra = queries[pick.index(queries.len())].literal;
        prop_assume!(!t.has_fact(&extra));
        let mut facts: Vec<Literal> = t.facts().iter().map(|f| f.literal).collect();
        facts.push(extra);
        let rules: Vec<_> = t.rules().iter().map(|r| (r.antecedents.clone(), r.consequent)).collect();
        let bigger = Theory::from_literals("bigger", t.lexicon().clone(), &facts, &rules).unwrap();
        for q in &queries {
            if prove(q, &t, DEFAULT_MAX_DEPTH).unwrap().label {
                prop_assert!(prove(q, &bigger, DEFAULT_MAX_DEPTH).unwrap().label, "{}", q.text);
            }
        }
    }
}
