//! Learned rejection sampling.
//!
//! A 3 → 64 → 64 → 1 network (ReLU hidden layers, sigmoid output) maps the
//! features `(r, |δ|, step / T_max)` of a candidate to a keep probability.
//! It is trained by REINFORCE on `L = −r_replay · Σ log p_i` over the last
//! selected batch, where `r_replay` is the change in a moving average of
//! evaluation success.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::replay::{Branch, ReplayBuffer, ReplayError, SampleBatch};

pub const INPUTS: usize = 3;
pub const HIDDEN: usize = 64;
pub const CANDIDATE_MULTIPLIER: usize = 4;
pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_DECAY: f64 = 0.9;

pub type Features = [f64; INPUTS];

// Offsets into the flat parameter vector.
const W1: usize = 0;
const B1: usize = W1 + HIDDEN * INPUTS;
const W2: usize = B1 + HIDDEN;
const B2: usize = W2 + HIDDEN * HIDDEN;
const W3: usize = B2 + HIDDEN;
const B3: usize = W3 + HIDDEN;
pub const NUM_PARAMS: usize = B3 + 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EroPolicy {
    /// Row-major `W1 (64×3), b1, W2 (64×64), b2, w3 (64), b3`.
    pub params: Vec<f64>,
}

struct Trace {
    a1: [f64; HIDDEN],
    h1: [f64; HIDDEN],
    a2: [f64; HIDDEN],
    h2: [f64; HIDDEN],
    z: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log σ(z)` without overflow.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

impl EroPolicy {
    /// Uniform fan-in initialization.
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut params = vec![0.0; NUM_PARAMS];
        let fill = |p: &mut [f64], fan_in: usize, rng: &mut R| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in p {
                *v = rng.gen_range(-bound..bound);
            }
        };
        fill(&mut params[W1..B1], INPUTS, rng);
        fill(&mut params[W2..B2], HIDDEN, rng);
        fill(&mut params[W3..B3], HIDDEN, rng);
        EroPolicy { params }
    }

    fn forward(&self, x: &Features) -> Trace {
        let p = &self.params;
        let mut t = Trace {
            a1: [0.0; HIDDEN],
            h1: [0.0; HIDDEN],
            a2: [0.0; HIDDEN],
            h2: [0.0; HIDDEN],
            z: p[B3],
        };
        for j in 0..HIDDEN {
            let row = &p[W1 + j * INPUTS..W1 + (j + 1) * INPUTS];
            t.a1[j] = p[B1 + j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            t.h1[j] = t.a1[j].max(0.0);
        }
        for j in 0..HIDDEN {
            let row = &p[W2 + j * HIDDEN..W2 + (j + 1) * HIDDEN];
            t.a2[j] = p[B2 + j] + row.iter().zip(&t.h1).map(|(w, v)| w * v).sum::<f64>();
            t.h2[j] = t.a2[j].max(0.0);
        }
        t.z += p[W3..B3].iter().zip(&t.h2).map(|(w, v)| w * v).sum::<f64>();
        t
    }

    pub fn prob(&self, x: &Features) -> f64 {
        sigmoid(self.forward(x).z)
    }

    /// `−r · Σ log p_i`.
    pub fn loss(&self, batch: &[Features], r_replay: f64) -> f64 {
        -r_replay * batch.iter().map(|x| log_sigmoid(self.forward(x).z)).sum::<f64>()
    }

    /// Gradient of [`loss`](Self::loss) with respect to the flat parameters.
    pub fn loss_grad(&self, batch: &[Features], r_replay: f64) -> Vec<f64> {
        let mut g = vec![0.0; NUM_PARAMS];
        if r_replay == 0.0 {
            return g;
        }
        let p = &self.params;
        for x in batch {
            let t = self.forward(x);
            // d(−r log σ(z))/dz = −r (1 − σ(z)).
            let dz = -r_replay * (1.0 - sigmoid(t.z));
            g[B3] += dz;
            let mut da2 = [0.0; HIDDEN];
            for j in 0..HIDDEN {
                g[W3 + j] += dz * t.h2[j];
                if t.a2[j] > 0.0 {
                    da2[j] = dz * p[W3 + j];
                }
            }
            let mut dh1 = [0.0; HIDDEN];
            for j in 0..HIDDEN {
                if da2[j] == 0.0 {
                    continue;
                }
                g[B2 + j] += da2[j];
                let base = W2 + j * HIDDEN;
                for k in 0..HIDDEN {
                    g[base + k] += da2[j] * t.h1[k];
                    dh1[k] += da2[j] * p[base + k];
                }
            }
            for k in 0..HIDDEN {
                if t.a1[k] <= 0.0 {
                    continue;
                }
                g[B1 + k] += dh1[k];
                for i in 0..INPUTS {
                    g[W1 + k * INPUTS + i] += dh1[k] * x[i];
                }
            }
        }
        g
    }

    pub fn step(&mut self, batch: &[Features], r_replay: f64, lr: f64) {
        let g = self.loss_grad(batch, r_replay);
        for (p, d) in self.params.iter_mut().zip(g) {
            *p -= lr * d;
        }
    }
}

/// Candidate features: reward, stored `|δ|`, and normalized episode step.
pub fn features(buffer: &ReplayBuffer, index: usize, max_steps: u32) -> Features {
    let t = buffer.transition(index);
    [
        t.reward,
        buffer.record(index).td_abs,
        t.episode_step as f64 / max_steps.max(1) as f64,
    ]
}

/// Draws `4·batch` uniform candidates and keeps each with its policy
/// probability. Surplus keeps are cut in draw order; a shortfall is topped up
/// with the rejected candidates of highest probability. Always returns
/// exactly `batch` slots with unit weights.
pub fn ero_select<R: Rng + ?Sized>(
    buffer: &ReplayBuffer,
    policy: &EroPolicy,
    batch: usize,
    max_steps: u32,
    rng: &mut R,
) -> Result<(SampleBatch, Vec<Features>), ReplayError> {
    let candidates = buffer.sample_uniform(CANDIDATE_MULTIPLIER * batch, rng)?;
    let scored: Vec<(usize, Features, f64)> = candidates
        .slots
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let f = features(buffer, s.index, max_steps);
            (i, f, policy.prob(&f))
        })
        .collect();
    let mut kept = Vec::with_capacity(batch);
    let mut rejected = Vec::new();
    for c in &scored {
        if rng.gen::<f64>() < c.2 {
            if kept.len() < batch {
                kept.push(c);
            }
        } else {
            rejected.push(c);
        }
    }
    if kept.len() < batch {
        // Stable: equal probabilities keep draw order.
        rejected.sort_by(|a, b| b.2.total_cmp(&a.2));
        let need = batch - kept.len();
        kept.extend(rejected.into_iter().take(need));
    }
    let slots = kept.iter().map(|c| candidates.slots[c.0]).collect();
    let feats = kept.iter().map(|c| c.1).collect();
    let n = buffer.len() as f64;
    Ok((
        SampleBatch::unweighted(slots, vec![1.0 / n; batch], Branch::Prioritized),
        feats,
    ))
}

/// Policy, its optimizer settings, and the evaluation-return baseline.
#[derive(Clone, Debug)]
pub struct EroSampler {
    pub policy: EroPolicy,
    pub lr: f64,
    pub decay: f64,
    pub rbar: f64,
    last_features: Vec<Features>,
}

impl EroSampler {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        EroSampler {
            policy: EroPolicy::new(rng),
            lr: DEFAULT_LR,
            decay: DEFAULT_DECAY,
            rbar: 0.0,
            last_features: Vec::new(),
        }
    }

    pub fn select<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        batch: usize,
        max_steps: u32,
        rng: &mut R,
    ) -> Result<SampleBatch, ReplayError> {
        let (b, f) = ero_select(buffer, &self.policy, batch, max_steps, rng)?;
        self.last_features = f;
        Ok(b)
    }

    /// Folds an evaluation result into `R̄`, then takes one policy step on the
    /// last selected batch with reward `R̄_new − R̄_old`. Returns that reward.
    pub fn on_evaluation(&mut self, success_rate: f64) -> f64 {
        let prev = self.rbar;
        self.rbar = self.decay * prev + (1.0 - self.decay) * success_rate;
        let r_replay = self.rbar - prev;
        if !self.last_features.is_empty() {
            self.policy.step(&self.last_features, r_replay, self.lr);
        }
        r_replay
    }
}
