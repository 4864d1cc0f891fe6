//! Ring-structured replay storage with two sampling branches over one store:
//! proportional (sum tree over folded priorities) and uniform.
//!
//! Each slot carries a generation counter. Scores computed for a clip are
//! addressed by [`SlotRef`], so a score that arrives after its slot was
//! overwritten is detected and dropped instead of landing on unrelated data.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{Action, StateKey};
use crate::sum_tree::SumTree;

/// Floor added to TD magnitudes so every transition stays reachable.
pub const PRIORITY_EPS: f64 = 1e-6;
/// Raw semantic scores strictly above this become 1, everything else 0.
pub const SEMANTIC_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("prioritized branch has zero total mass")]
    ZeroMass,
    #[error("slot {index} was overwritten (generation {expected} is gone)")]
    StaleIndex { index: usize, expected: u64 },
    #[error("score {0} is outside [0, 1]")]
    InvalidScore(f64),
    #[error("invalid replay configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: StateKey,
    pub action: Action,
    pub reward: f64,
    pub next_state: StateKey,
    pub terminated: bool,
    pub truncated: bool,
    pub episode_step: u32,
    pub insert_time: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorityRecord {
    /// Thresholded semantic label; `None` until the scorer answers.
    pub semantic_score: Option<f64>,
    pub td_abs: f64,
    pub is_default: bool,
    /// Priority handed to `insert`; stands in for the semantic score while unset.
    pub default_priority: f64,
    /// Priority supplied by an external rule (ReLo).
    pub external: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorityMode {
    VlmOnly,
    VlmTd,
    Per,
    ReloExternal,
}

/// Priority before the α exponent. `vlm_td_unset` is the semantic score
/// assumed for not-yet-scored transitions in [`PriorityMode::VlmTd`].
pub fn combined_priority(rec: &PriorityRecord, mode: PriorityMode, vlm_td_unset: f64) -> f64 {
    match mode {
        PriorityMode::VlmOnly => rec.semantic_score.unwrap_or(rec.default_priority),
        PriorityMode::VlmTd => rec.semantic_score.unwrap_or(vlm_td_unset) * (rec.td_abs + PRIORITY_EPS),
        PriorityMode::Per => rec.td_abs + PRIORITY_EPS,
        PriorityMode::ReloExternal => rec.external,
    }
}

pub fn threshold(score: f64) -> f64 {
    if score > SEMANTIC_THRESHOLD {
        1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlotRef {
    pub index: usize,
    pub generation: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Prioritized,
    Uniform,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleBatch {
    pub slots: Vec<SlotRef>,
    /// Probability of each draw under the branch that produced it.
    pub probs: Vec<f64>,
    pub is_weights: Vec<f64>,
    pub branch: Vec<Branch>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.index).collect()
    }

    pub fn extend(&mut self, other: SampleBatch) {
        self.slots.extend(other.slots);
        self.probs.extend(other.probs);
        self.is_weights.extend(other.is_weights);
        self.branch.extend(other.branch);
    }

    /// Batch of `slots` drawn without any importance correction.
    pub fn unweighted(slots: Vec<SlotRef>, probs: Vec<f64>, branch: Branch) -> Self {
        let n = slots.len();
        SampleBatch {
            slots,
            probs,
            is_weights: vec![1.0; n],
            branch: vec![branch; n],
        }
    }
}

/// `(1 / (N · P(i)))^β`, divided by the batch maximum. All ones when disabled.
pub fn importance_weights(probs: &[f64], buffer_len: usize, beta: f64, enabled: bool) -> Vec<f64> {
    if !enabled || probs.is_empty() {
        return vec![1.0; probs.len()];
    }
    let n = buffer_len as f64;
    let raw: Vec<f64> = probs.iter().map(|p| (1.0 / (n * p)).powf(beta)).collect();
    let max = raw.iter().cloned().fold(f64::MIN, f64::max);
    raw.into_iter().map(|w| w / max).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub capacity: usize,
    /// Exponent folded into the stored leaf weights; fixed for the buffer's life.
    pub alpha: f64,
    pub mode: PriorityMode,
    #[serde(default = "default_vlm_td_unset")]
    pub vlm_td_unset_score: f64,
}

fn default_vlm_td_unset() -> f64 {
    1.0
}

impl ReplayConfig {
    pub fn new(capacity: usize, alpha: f64, mode: PriorityMode) -> Self {
        ReplayConfig {
            capacity,
            alpha,
            mode,
            vlm_td_unset_score: 1.0,
        }
    }
}

pub struct ReplayBuffer {
    cfg: ReplayConfig,
    transitions: Vec<Transition>,
    records: Vec<PriorityRecord>,
    generations: Vec<u64>,
    tree: SumTree,
    next: usize,
    inserted: u64,
    stale_writes: u64,
    max_td_abs: f64,
    max_external: f64,
}

impl ReplayBuffer {
    pub fn new(cfg: ReplayConfig) -> Result<Self, ReplayError> {
        if cfg.capacity == 0 {
            return Err(ReplayError::InvalidConfig("capacity must be positive".into()));
        }
        if !(cfg.alpha >= 0.0 && cfg.alpha.is_finite()) {
            return Err(ReplayError::InvalidConfig(format!("alpha {} must be >= 0", cfg.alpha)));
        }
        if !(0.0..=1.0).contains(&cfg.vlm_td_unset_score) {
            return Err(ReplayError::InvalidConfig(
                "vlm_td_unset_score must lie in [0, 1]".into(),
            ));
        }
        Ok(ReplayBuffer {
            tree: SumTree::new(cfg.capacity),
            transitions: Vec::with_capacity(cfg.capacity),
            records: Vec::with_capacity(cfg.capacity),
            generations: Vec::with_capacity(cfg.capacity),
            next: 0,
            inserted: 0,
            stale_writes: 0,
            max_td_abs: 1.0,
            max_external: 1.0,
            cfg,
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.cfg.capacity
    }

    pub fn total_inserted(&self) -> u64 {
        self.inserted
    }

    /// Score and TD writes that arrived for an overwritten slot.
    pub fn stale_writes(&self) -> u64 {
        self.stale_writes
    }

    /// Largest TD magnitude ever written (starts at 1), the usual PER
    /// initial priority for unseen transitions.
    pub fn max_td_abs(&self) -> f64 {
        self.max_td_abs
    }

    pub fn max_external(&self) -> f64 {
        self.max_external
    }

    pub fn transition(&self, index: usize) -> &Transition {
        &self.transitions[index]
    }

    pub fn record(&self, index: usize) -> &PriorityRecord {
        &self.records[index]
    }

    pub fn slot(&self, index: usize) -> SlotRef {
        SlotRef {
            index,
            generation: self.generations[index],
        }
    }

    pub fn is_live(&self, slot: SlotRef) -> bool {
        slot.index < self.len() && self.generations[slot.index] == slot.generation
    }

    pub fn leaf_weight(&self, index: usize) -> f64 {
        self.tree.get(index)
    }

    pub fn prioritized_mass(&self) -> f64 {
        self.tree.total()
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    /// Fraction of stored transitions whose clip has been scored, and the
    /// fraction labeled positive.
    pub fn score_stats(&self) -> (f64, f64) {
        if self.is_empty() {
            return (0.0, 0.0);
        }
        let n = self.len() as f64;
        let scored = self.records.iter().filter(|r| !r.is_default).count() as f64;
        let positive = self.records.iter().filter(|r| r.semantic_score == Some(1.0)).count() as f64;
        (scored / n, positive / n)
    }

    /// Probability of `index` under the prioritized branch.
    pub fn prioritized_probability(&self, index: usize) -> f64 {
        let total = self.tree.total();
        if total > 0.0 {
            self.tree.get(index) / total
        } else {
            0.0
        }
    }

    fn refresh_leaf(&mut self, index: usize) {
        let p = combined_priority(&self.records[index], self.cfg.mode, self.cfg.vlm_td_unset_score);
        let w = if p == 0.0 { 0.0 } else { p.powf(self.cfg.alpha) };
        self.tree.set(index, w);
    }

    pub fn insert(&mut self, t: Transition, default_priority: f64) -> SlotRef {
        assert!(
            default_priority >= 0.0 && default_priority.is_finite(),
            "default priority must be finite and non-negative"
        );
        let index = self.next;
        let record = PriorityRecord {
            semantic_score: None,
            td_abs: default_priority,
            is_default: true,
            default_priority,
            external: default_priority,
        };
        if index == self.transitions.len() {
            self.transitions.push(t);
            self.records.push(record);
            self.generations.push(0);
        } else {
            self.transitions[index] = t;
            self.records[index] = record;
            self.generations[index] += 1;
        }
        self.refresh_leaf(index);
        self.next = (self.next + 1) % self.cfg.capacity;
        self.inserted += 1;
        self.slot(index)
    }

    fn live_index(&mut self, slot: SlotRef) -> Result<usize, ReplayError> {
        if self.is_live(slot) {
            Ok(slot.index)
        } else {
            self.stale_writes += 1;
            Err(ReplayError::StaleIndex {
                index: slot.index,
                expected: slot.generation,
            })
        }
    }

    pub fn set_semantic_score(&mut self, slot: SlotRef, score: f64) -> Result<PriorityRecord, ReplayError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(ReplayError::InvalidScore(score));
        }
        let i = self.live_index(slot)?;
        let rec = &mut self.records[i];
        rec.semantic_score = Some(threshold(score));
        rec.is_default = false;
        self.refresh_leaf(i);
        Ok(self.records[i])
    }

    pub fn set_td_error(&mut self, slot: SlotRef, delta: f64) -> Result<PriorityRecord, ReplayError> {
        let i = self.live_index(slot)?;
        let td = delta.abs();
        self.records[i].td_abs = td;
        self.max_td_abs = self.max_td_abs.max(td);
        self.refresh_leaf(i);
        Ok(self.records[i])
    }

    pub fn set_external_priority(&mut self, slot: SlotRef, priority: f64) -> Result<PriorityRecord, ReplayError> {
        assert!(
            priority >= 0.0 && priority.is_finite(),
            "external priority must be finite and non-negative"
        );
        let i = self.live_index(slot)?;
        self.records[i].external = priority;
        self.max_external = self.max_external.max(priority);
        self.refresh_leaf(i);
        Ok(self.records[i])
    }

    /// `k` stratified draws proportional to the stored (α-folded) weights:
    /// `[0, total)` is split into `k` equal strata with one uniform draw in each.
    pub fn sample_proportional<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<SampleBatch, ReplayError> {
        if self.is_empty() {
            return Err(ReplayError::EmptyBuffer);
        }
        let total = self.tree.total();
        if total.is_nan() || total <= 0.0 {
            return Err(ReplayError::ZeroMass);
        }
        let segment = total / k as f64;
        let mut slots = Vec::with_capacity(k);
        let mut probs = Vec::with_capacity(k);
        for j in 0..k {
            let u: f64 = rng.gen();
            let mass = ((j as f64 + u) * segment).min(total);
            let index = self.tree.find_prefix(mass);
            slots.push(self.slot(index));
            probs.push(self.tree.get(index) / total);
        }
        Ok(SampleBatch {
            is_weights: vec![1.0; k],
            branch: vec![Branch::Prioritized; k],
            slots,
            probs,
        })
    }

    /// `k` draws with replacement, uniform over stored transitions.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<SampleBatch, ReplayError> {
        if self.is_empty() {
            return Err(ReplayError::EmptyBuffer);
        }
        let n = self.len();
        let slots: Vec<SlotRef> = (0..k).map(|_| self.slot(rng.gen_range(0..n))).collect();
        Ok(SampleBatch::unweighted(slots, vec![1.0 / n as f64; k], Branch::Uniform))
    }
}
