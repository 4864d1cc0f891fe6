//! Comparison samplers that share [`ReplayBuffer`](crate::replay::ReplayBuffer)
//! storage: a learned rejection sampler, reducible-loss priorities, and
//! nearest-neighbour attentive selection. Uniform and TD-proportional replay
//! are native to the replay buffer and the mixture sampler.

pub mod aer;
pub mod ero;
pub mod relo;

pub use aer::{AerEncoder, AerSampler};
pub use ero::{EroPolicy, EroSampler};
pub use relo::{relo_priority, ReloState};
