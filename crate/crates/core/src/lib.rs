//! Experience replay with semantically scored priorities.
//!
//! Transitions live in a ring buffer backed by a sum tree. A scorer labels
//! short clips of consecutive transitions as relevant or not, off the
//! training thread, and the labels become sampling priorities. Batches mix
//! a prioritized and a uniform branch under an annealed ratio. A DoorKey
//! gridworld, a tabular Q-learner, several baseline samplers and an
//! experiment harness make the whole loop runnable end to end.

pub mod baselines;
pub mod gridworld;
pub mod harness;
pub mod learner;
pub mod replay;
pub mod sampler;
pub mod scorers;
pub mod scoring;
pub mod sum_tree;
