//! Tabular Q-learning over hashed grid observations.

use std::io::{self, Read, Write};

use rand::Rng;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::baselines::relo::relo_priority;
use crate::gridworld::{Action, StateKey, NUM_ACTIONS};
use crate::replay::{ReplayBuffer, SampleBatch, Transition};

pub type QRow = [f64; NUM_ACTIONS];

/// Action values keyed by observation hash; unseen keys read as all zeros.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QTable {
    rows: FxHashMap<StateKey, QRow>,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"RQTB";
const CHECKPOINT_VERSION: u32 = 1;

impl QTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, s: StateKey) -> QRow {
        self.rows.get(&s).copied().unwrap_or([0.0; NUM_ACTIONS])
    }

    pub fn get(&self, s: StateKey, a: Action) -> f64 {
        self.rows.get(&s).map_or(0.0, |r| r[a.index()])
    }

    pub fn set(&mut self, s: StateKey, a: Action, v: f64) {
        assert!(v.is_finite(), "Q values must stay finite, got {v}");
        self.rows.entry(s).or_insert([0.0; NUM_ACTIONS])[a.index()] = v;
    }

    pub fn set_row(&mut self, s: StateKey, row: QRow) {
        self.rows.insert(s, row);
    }

    /// Greedy action; ties go to the lowest action id.
    pub fn argmax(&self, s: StateKey) -> Action {
        Action::ALL[argmax_row(&self.row(s))]
    }

    pub fn save<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.rows.len() as u64).to_le_bytes())?;
        // Sorted so identical tables give identical files.
        let mut keys: Vec<&StateKey> = self.rows.keys().collect();
        keys.sort_unstable_by_key(|k| k.0);
        for k in keys {
            w.write_all(&k.0.to_le_bytes())?;
            for v in &self.rows[k] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn load<R: Read>(mut r: R) -> io::Result<QTable> {
        let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a Q-table checkpoint"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8);
        let mut rows = FxHashMap::default();
        for _ in 0..n {
            r.read_exact(&mut b8)?;
            let key = StateKey(u64::from_le_bytes(b8));
            let mut row = [0.0; NUM_ACTIONS];
            for v in &mut row {
                r.read_exact(&mut b8)?;
                *v = f64::from_le_bytes(b8);
                if !v.is_finite() {
                    return Err(bad("non-finite Q value"));
                }
            }
            rows.insert(key, row);
        }
        Ok(QTable { rows })
    }
}

fn argmax_row(row: &QRow) -> usize {
    let mut best = 0;
    for a in 1..NUM_ACTIONS {
        if row[a] > row[best] {
            best = a;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub target_sync_every: u64,
    pub train_freq: u64,
    pub learning_starts: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub exploration_fraction: f64,
    pub double: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            gamma: 0.95,
            learning_rate: 0.1,
            batch_size: 4,
            target_sync_every: 1000,
            train_freq: 4,
            learning_starts: 500,
            eps_start: 1.0,
            eps_end: 0.05,
            exploration_fraction: 0.5,
            double: true,
        }
    }
}

impl LearnerConfig {
    /// Returns the offending field name on failure.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let unit = 0.0..=1.0;
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(("gamma", "must lie in (0, 1]".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(("learning_rate", "must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(("batch_size", "must be positive".into()));
        }
        if self.target_sync_every == 0 {
            return Err(("target_sync_every", "must be positive".into()));
        }
        if self.train_freq == 0 {
            return Err(("train_freq", "must be positive".into()));
        }
        if !unit.contains(&self.eps_start) || !unit.contains(&self.eps_end) {
            return Err(("eps_start", "epsilons must lie in [0, 1]".into()));
        }
        if self.eps_end > self.eps_start {
            return Err(("eps_end", "must not exceed eps_start".into()));
        }
        if !(self.exploration_fraction > 0.0 && self.exploration_fraction <= 1.0) {
            return Err(("exploration_fraction", "must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Linear decay from `eps_start` to `eps_end` over the first
/// `exploration_fraction · total_steps` steps, constant afterwards.
pub fn epsilon_at(cfg: &LearnerConfig, t: u64, total_steps: u64) -> f64 {
    let horizon = cfg.exploration_fraction * total_steps as f64;
    if horizon <= 0.0 || t as f64 >= horizon {
        return cfg.eps_end;
    }
    cfg.eps_start + (cfg.eps_end - cfg.eps_start) * (t as f64 / horizon)
}

pub fn act<R: Rng + ?Sized>(q: &QTable, s: StateKey, eps: f64, rng: &mut R) -> Action {
    if eps > 0.0 && rng.gen::<f64>() < eps {
        Action::ALL[rng.gen_range(0..NUM_ACTIONS)]
    } else {
        q.argmax(s)
    }
}

/// `Q(s, a) − y` with `y = r` on termination, else
/// `r + γ · Q_target(s', a*)`. `a*` is the argmax under `q` when `double`,
/// under `q_target` otherwise. Truncated transitions still bootstrap.
pub fn td_error(q: &QTable, q_target: &QTable, t: &Transition, gamma: f64, double: bool) -> f64 {
    q.get(t.state, t.action) - td_target(q, q_target, t, gamma, double)
}

pub fn td_target(q: &QTable, q_target: &QTable, t: &Transition, gamma: f64, double: bool) -> f64 {
    if t.terminated {
        return t.reward;
    }
    let a_star = if double {
        q.argmax(t.next_state)
    } else {
        q_target.argmax(t.next_state)
    };
    t.reward + gamma * q_target.get(t.next_state, a_star)
}

/// What a train step writes back besides `|δ|`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Writeback {
    TdOnly,
    /// Also store the reducible-loss priority as the external priority.
    Relo,
}

#[derive(Clone, Debug)]
pub struct Learner {
    pub cfg: LearnerConfig,
    pub q: QTable,
    pub q_target: QTable,
    pub updates: u64,
}

impl Learner {
    pub fn new(cfg: LearnerConfig) -> Self {
        Learner {
            cfg,
            q: QTable::new(),
            q_target: QTable::new(),
            updates: 0,
        }
    }

    pub fn sync_target(&mut self) {
        self.q_target = self.q.clone();
    }

    /// One update on `batch`. All errors are computed against the pre-update
    /// tables, then each `Q(s, a) += lr · w · (−δ)` is applied in batch order
    /// and `|δ|` written back to every sampled slot. Returns mean `|δ|`.
    pub fn train_step(&mut self, batch: &SampleBatch, buffer: &mut ReplayBuffer, writeback: Writeback) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        let gamma = self.cfg.gamma;
        let double = self.cfg.double;
        let deltas: Vec<(f64, f64)> = batch
            .slots
            .iter()
            .map(|s| {
                let t = buffer.transition(s.index);
                let online = td_error(&self.q, &self.q_target, t, gamma, double);
                let target = match writeback {
                    Writeback::Relo => {
                        self.q_target.get(t.state, t.action) - td_target(&self.q, &self.q_target, t, gamma, double)
                    }
                    Writeback::TdOnly => 0.0,
                };
                (online, target)
            })
            .collect();
        let lr = self.cfg.learning_rate;
        for ((slot, w), (delta, _)) in batch.slots.iter().zip(&batch.is_weights).zip(&deltas) {
            let t = buffer.transition(slot.index);
            let (s, a) = (t.state, t.action);
            let v = self.q.get(s, a) - lr * w * delta;
            self.q.set(s, a, v);
        }
        let mut sum = 0.0;
        for (slot, (delta, target)) in batch.slots.iter().zip(&deltas) {
            sum += delta.abs();
            // Batches are drawn from the current buffer contents, so slots are live.
            let _ = buffer.set_td_error(*slot, *delta);
            if writeback == Writeback::Relo {
                let _ = buffer.set_external_priority(*slot, relo_priority(*delta, *target));
            }
        }
        self.updates += 1;
        sum / batch.len() as f64
    }
}
