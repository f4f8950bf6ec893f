//! Symbolic side of the neural unification lab: the rule language, the
//! backward-chaining prover used as ground truth, dataset generation, and
//! the evaluation statistics shared by every model.

pub mod ruleworld;
pub mod prover;
pub mod seeds;
pub mod datagen;
pub mod eval;
pub mod ensemble;
