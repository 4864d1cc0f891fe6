//! Reducible-loss prioritization.

use serde::{Deserialize, Serialize};

use crate::replay::PRIORITY_EPS;
use crate::sampler::LinearAnneal;

pub const RELO_ALPHA: f64 = 0.6;
pub const RELO_BETA_START: f64 = 0.4;

/// `max(0, |δ_online| − |δ_target|) + ε`: how much of the online error the
/// slower target table has already removed.
pub fn relo_priority(delta_online: f64, delta_target: f64) -> f64 {
    (delta_online.abs() - delta_target.abs()).max(0.0) + PRIORITY_EPS
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReloState {
    pub alpha: f64,
    pub beta: LinearAnneal,
    pub epsilon: f64,
}

impl ReloState {
    /// β ramps from 0.4 to 1 over the whole run.
    pub fn new(total_steps: u64) -> Self {
        ReloState {
            alpha: RELO_ALPHA,
            beta: LinearAnneal::new(RELO_BETA_START, 1.0, total_steps.max(1)),
            epsilon: PRIORITY_EPS,
        }
    }
}
