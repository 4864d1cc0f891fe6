//! Attentive replay: pick the stored transitions whose states look most like
//! the agent's current state.
//!
//! States are embedded with a frozen random linear map (`d = 32`) drawn once
//! per run. A uniform candidate pool of `⌊λ_t · B⌋` transitions is ranked by
//! squared embedding distance to the current observation and the `B` closest
//! are replayed; `λ_t` decays linearly from 4 to 1, and once the pool is no
//! larger than the batch, selection falls back to uniform.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::gridworld::Observation;
use crate::replay::{Branch, ReplayBuffer, ReplayError, SampleBatch, SlotRef};
use crate::sampler::LinearAnneal;

pub const EMBED_DIM: usize = 32;
pub const POOL_START: f64 = 4.0;
pub const POOL_END: f64 = 1.0;

pub type Embedding = [f64; EMBED_DIM];

#[derive(Clone, Debug)]
pub struct AerEncoder {
    input_dim: usize,
    /// Row-major `EMBED_DIM × input_dim`.
    weights: Vec<f64>,
}

impl AerEncoder {
    pub fn new(input_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (input_dim.max(1) as f64).sqrt();
        let weights = (0..EMBED_DIM * input_dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        AerEncoder { input_dim, weights }
    }

    pub fn encode(&self, obs: &Observation) -> Embedding {
        let x = obs.as_slice();
        assert_eq!(x.len(), self.input_dim, "observation size does not match the encoder");
        let mut out = [0.0; EMBED_DIM];
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.weights[k * self.input_dim..(k + 1) * self.input_dim];
            *o = row.iter().zip(x).map(|(w, v)| w * *v as f64).sum();
        }
        out
    }
}

pub fn squared_distance(a: &Embedding, b: &Embedding) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// `⌊λ · batch⌋` for the pool multiplier `λ`.
pub fn pool_size(lambda: f64, batch: usize) -> usize {
    (lambda * batch as f64).floor() as usize
}

/// The `batch` candidates closest to `current`; equal distances prefer the
/// lower buffer index. `dist[i]` belongs to `candidates[i]`.
pub fn nearest(candidates: &[SlotRef], dist: &[f64], batch: usize) -> Vec<SlotRef> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&i, &j| {
        dist[i]
            .total_cmp(&dist[j])
            .then(candidates[i].index.cmp(&candidates[j].index))
    });
    order.into_iter().take(batch).map(|i| candidates[i]).collect()
}

/// Encoder, per-slot embedding cache and pool schedule.
#[derive(Clone, Debug)]
pub struct AerSampler {
    pub encoder: AerEncoder,
    pub pool: LinearAnneal,
    embeddings: Vec<Embedding>,
}

impl AerSampler {
    pub fn new(input_dim: usize, capacity: usize, total_steps: u64, seed: u64) -> Self {
        AerSampler {
            encoder: AerEncoder::new(input_dim, seed),
            pool: LinearAnneal::new(POOL_START, POOL_END, total_steps.max(1)),
            embeddings: vec![[0.0; EMBED_DIM]; capacity],
        }
    }

    /// Caches the embedding of the state stored at `slot`.
    pub fn observe(&mut self, slot: SlotRef, obs: &Observation) {
        self.embeddings[slot.index] = self.encoder.encode(obs);
    }

    pub fn pool_at(&self, t: u64, batch: usize) -> usize {
        pool_size(self.pool.value(t), batch)
    }

    pub fn select<R: Rng + ?Sized>(
        &self,
        buffer: &ReplayBuffer,
        current: &Observation,
        batch: usize,
        t: u64,
        rng: &mut R,
    ) -> Result<SampleBatch, ReplayError> {
        let pool = self.pool_at(t, batch);
        if pool <= batch {
            return buffer.sample_uniform(batch, rng);
        }
        let candidates = buffer.sample_uniform(pool, rng)?;
        let here = self.encoder.encode(current);
        let dist: Vec<f64> = candidates
            .slots
            .iter()
            .map(|s| squared_distance(&here, &self.embeddings[s.index]))
            .collect();
        let slots = nearest(&candidates.slots, &dist, batch);
        let n = buffer.len() as f64;
        Ok(SampleBatch::unweighted(
            slots,
            vec![1.0 / n; batch],
            Branch::Prioritized,
        ))
    }
}
