//! Clip scorers.
//!
//! A scorer maps a clip of frame payloads to a score in `[0, 1]`. Frames are
//! opaque bytes to the pipeline; the gridworld emits [`EventTag`] payloads,
//! which the in-process scorers decode. Thresholding happens in the replay
//! buffer, so scorers may return raw probability-style values.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::ClipRequest;

pub mod external;
pub mod wire;

pub use external::ExternalScorer;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("frame payload is not an event tag")]
    MalformedPayload,
    #[error("scorer did not answer within {0:?}")]
    Timeout(Duration),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("connection lost: {0}")]
    ConnectionLost(String),
    #[error("scorer failed: {0}")]
    Failed(String),
}

const TAG_MAGIC: u8 = b'E';

/// Per-frame event edges. Each flag is set only on the step where the event
/// happens. `distractor` marks an interaction (pickup/toggle) that changed
/// nothing; it is only consulted by [`CorruptionMode::Misleading`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventTag {
    pub key_picked_up: bool,
    pub door_opened: bool,
    pub goal_reached: bool,
    pub distractor: bool,
}

impl EventTag {
    pub fn any_event(&self) -> bool {
        self.key_picked_up || self.door_opened || self.goal_reached
    }

    pub fn to_payload(self) -> Vec<u8> {
        let flags = self.key_picked_up as u8
            | (self.door_opened as u8) << 1
            | (self.goal_reached as u8) << 2
            | (self.distractor as u8) << 3;
        vec![TAG_MAGIC, flags]
    }

    pub fn from_payload(bytes: &[u8]) -> Result<EventTag, ScoreError> {
        match bytes {
            [TAG_MAGIC, flags] if flags & !0x0f == 0 => Ok(EventTag {
                key_picked_up: flags & 1 != 0,
                door_opened: flags & 2 != 0,
                goal_reached: flags & 4 != 0,
                distractor: flags & 8 != 0,
            }),
            _ => Err(ScoreError::MalformedPayload),
        }
    }
}

fn decode_clip(frames: &[Vec<u8>]) -> Result<Vec<EventTag>, ScoreError> {
    frames.iter().map(|f| EventTag::from_payload(f)).collect()
}

pub trait Scorer: Send {
    fn score(&mut self, clip: &ClipRequest) -> Result<f64, ScoreError>;

    fn name(&self) -> &str;
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn score(&mut self, clip: &ClipRequest) -> Result<f64, ScoreError> {
        (**self).score(clip)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// 1 iff any frame shows a key pickup, door opening or goal arrival.
pub fn oracle_score(frames: &[Vec<u8>]) -> Result<f64, ScoreError> {
    let tags = decode_clip(frames)?;
    Ok(if tags.iter().any(EventTag::any_event) { 1.0 } else { 0.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    Standard,
    Misleading,
    Abstract,
}

/// Oracle score as seen through a corrupted rendering.
pub fn corrupted_score(frames: &[Vec<u8>], mode: CorruptionMode, clip_id: u64, seed: u64) -> Result<f64, ScoreError> {
    match mode {
        CorruptionMode::Standard => oracle_score(frames),
        CorruptionMode::Misleading => {
            let tags = decode_clip(frames)?;
            let has_event = tags.iter().any(EventTag::any_event);
            let has_distractor = tags.iter().any(|t| t.distractor);
            Ok(if !has_event && has_distractor { 1.0 } else { 0.0 })
        }
        CorruptionMode::Abstract => {
            // Payload contents are irrelevant once semantics are destroyed,
            // but they still have to be well formed.
            decode_clip(frames)?;
            Ok((clip_hash(clip_id, seed) >> 63) as f64)
        }
    }
}

/// Oracle output flipped with probability `flip_prob`, independently per clip.
pub fn noisy_score(frames: &[Vec<u8>], flip_prob: f64, clip_id: u64, seed: u64) -> Result<f64, ScoreError> {
    let clean = oracle_score(frames)?;
    let u = (clip_hash(clip_id, seed ^ 0xA5A5_A5A5_A5A5_A5A5) >> 11) as f64 / (1u64 << 53) as f64;
    Ok(if u < flip_prob { 1.0 - clean } else { clean })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn clip_hash(clip_id: u64, seed: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ clip_id)
}

#[derive(Debug, Default, Clone)]
pub struct OracleScorer;

impl Scorer for OracleScorer {
    fn score(&mut self, clip: &ClipRequest) -> Result<f64, ScoreError> {
        oracle_score(&clip.frames)
    }

    fn name(&self) -> &str {
        "oracle"
    }
}

#[derive(Debug, Clone)]
pub struct CorruptedScorer {
    pub mode: CorruptionMode,
    pub seed: u64,
}

impl Scorer for CorruptedScorer {
    fn score(&mut self, clip: &ClipRequest) -> Result<f64, ScoreError> {
        corrupted_score(&clip.frames, self.mode, clip.clip_id, self.seed)
    }

    fn name(&self) -> &str {
        match self.mode {
            CorruptionMode::Standard => "standard",
            CorruptionMode::Misleading => "misleading",
            CorruptionMode::Abstract => "abstract",
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoisyScorer {
    pub flip_prob: f64,
    pub seed: u64,
}

impl NoisyScorer {
    pub fn new(flip_prob: f64, seed: u64) -> Self {
        assert!((0.0..=0.5).contains(&flip_prob), "flip_prob must lie in [0, 0.5]");
        NoisyScorer { flip_prob, seed }
    }
}

impl Scorer for NoisyScorer {
    fn score(&mut self, clip: &ClipRequest) -> Result<f64, ScoreError> {
        noisy_score(&clip.frames, self.flip_prob, clip.clip_id, self.seed)
    }

    fn name(&self) -> &str {
        "noisy"
    }
}

/// Fixed output regardless of input. `ConstantScorer(0.0)` is the null scorer.
#[derive(Debug, Clone)]
pub struct ConstantScorer(pub f64);

impl Scorer for ConstantScorer {
    fn score(&mut self, _clip: &ClipRequest) -> Result<f64, ScoreError> {
        Ok(self.0)
    }

    fn name(&self) -> &str {
        "constant"
    }
}

/// Wraps another scorer and sleeps before every call; simulates model latency.
pub struct DelayedScorer<S> {
    pub inner: S,
    pub delay: Duration,
}

impl<S: Scorer> Scorer for DelayedScorer<S> {
    fn score(&mut self, clip: &ClipRequest) -> Result<f64, ScoreError> {
        thread::sleep(self.delay);
        self.inner.score(clip)
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay::SlotRef;

    fn tag(k: bool, d: bool, g: bool, x: bool) -> Vec<u8> {
        EventTag {
            key_picked_up: k,
            door_opened: d,
            goal_reached: g,
            distractor: x,
        }
        .to_payload()
    }

    fn clip(id: u64, frames: Vec<Vec<u8>>) -> ClipRequest {
        ClipRequest {
            clip_id: id,
            slots: (0..frames.len())
                .map(|i| SlotRef {
                    index: i,
                    generation: 0,
                })
                .collect(),
            frames,
        }
    }

    fn quiet() -> Vec<u8> {
        tag(false, false, false, false)
    }

    /// A deterministic mixed corpus of clips: roughly a third carry an event,
    /// some carry only distractors, the rest nothing.
    fn corpus(n: usize) -> Vec<ClipRequest> {
        (0..n)
            .map(|i| {
                let len = 1 + i % 32;
                let frames = (0..len)
                    .map(|j| match (i % 6, j == len - 1) {
                        (0, true) => tag(true, false, false, false),
                        (1, true) => tag(false, true, false, false),
                        (2, true) => tag(false, false, true, false),
                        (3, _) if j % 3 == 0 => tag(false, false, false, true),
                        _ => quiet(),
                    })
                    .collect();
                clip(i as u64, frames)
            })
            .collect()
    }

    #[test]
    fn payload_round_trip_and_rejects_garbage() {
        for bits in 0..16u8 {
            let t = EventTag {
                key_picked_up: bits & 1 != 0,
                door_opened: bits & 2 != 0,
                goal_reached: bits & 4 != 0,
                distractor: bits & 8 != 0,
            };
            assert_eq!(EventTag::from_payload(&t.to_payload()).unwrap(), t);
        }
        assert_eq!(EventTag::from_payload(b"E"), Err(ScoreError::MalformedPayload));
        assert_eq!(EventTag::from_payload(&[b'E', 0x10]), Err(ScoreError::MalformedPayload));
        assert_eq!(EventTag::from_payload(&[0x89, b'P']), Err(ScoreError::MalformedPayload));
    }

    #[test]
    fn oracle_examples() {
        assert_eq!(oracle_score(&[quiet(), tag(false, true, false, false)]), Ok(1.0));
        assert_eq!(oracle_score(&vec![quiet(); 32]), Ok(0.0));
        let mut frames = vec![quiet(); 31];
        frames.push(tag(true, false, false, false));
        assert_eq!(oracle_score(&frames), Ok(1.0));
        assert_eq!(oracle_score(&[vec![1, 2, 3]]), Err(ScoreError::MalformedPayload));
    }

    #[test]
    fn oracle_is_order_invariant() {
        for c in corpus(60) {
            let mut rev = c.frames.clone();
            rev.reverse();
            assert_eq!(oracle_score(&c.frames), oracle_score(&rev));
        }
    }

    #[test]
    fn misleading_inverts_on_event_clips() {
        // Inversion table: event → 0; no event + distractor → 1; nothing → 0.
        for c in corpus(50) {
            let oracle = oracle_score(&c.frames).unwrap();
            let misleading = corrupted_score(&c.frames, CorruptionMode::Misleading, c.clip_id, 3).unwrap();
            let tags: Vec<EventTag> = c.frames.iter().map(|f| EventTag::from_payload(f).unwrap()).collect();
            let distractor = tags.iter().any(|t| t.distractor);
            let expected = match (oracle == 1.0, distractor) {
                (true, _) => 0.0,
                (false, true) => 1.0,
                (false, false) => 0.0,
            };
            assert_eq!(misleading, expected, "clip {}", c.clip_id);
        }
    }

    #[test]
    fn standard_is_identity_on_oracle() {
        for c in corpus(200) {
            assert_eq!(
                corrupted_score(&c.frames, CorruptionMode::Standard, c.clip_id, 9),
                oracle_score(&c.frames)
            );
        }
    }

    #[test]
    fn abstract_is_a_fair_coin() {
        let frames = vec![quiet()];
        let n = 10_000;
        let total: f64 = (0..n)
            .map(|id| corrupted_score(&frames, CorruptionMode::Abstract, id, 42).unwrap())
            .sum();
        let mean = total / n as f64;
        assert!((mean - 0.5).abs() <= 0.02, "mean {mean}");
    }

    #[test]
    fn noisy_flip_rates() {
        let cs = corpus(200);
        for c in &cs {
            assert_eq!(noisy_score(&c.frames, 0.0, c.clip_id, 1), oracle_score(&c.frames));
        }
        let frames = vec![tag(false, false, true, false)];
        let n = 10_000;
        let agree = (0..n)
            .filter(|&id| noisy_score(&frames, 0.5, id, 5).unwrap() == 1.0)
            .count();
        let rate = agree as f64 / n as f64;
        assert!((rate - 0.5).abs() <= 0.02, "agreement {rate}");
        assert_eq!(noisy_score(&frames, 0.3, 17, 5), noisy_score(&frames, 0.3, 17, 5));
    }

    /// Conformance: range, determinism under a fixed seed, totality.
    #[test]
    fn conformance_suite() {
        let cs = corpus(200);
        let make: Vec<Box<dyn Fn() -> Box<dyn Scorer>>> = vec![
            Box::new(|| Box::new(OracleScorer)),
            Box::new(|| {
                Box::new(CorruptedScorer {
                    mode: CorruptionMode::Standard,
                    seed: 1,
                })
            }),
            Box::new(|| {
                Box::new(CorruptedScorer {
                    mode: CorruptionMode::Misleading,
                    seed: 1,
                })
            }),
            Box::new(|| {
                Box::new(CorruptedScorer {
                    mode: CorruptionMode::Abstract,
                    seed: 1,
                })
            }),
            Box::new(|| Box::new(NoisyScorer::new(0.2, 1))),
            Box::new(|| Box::new(ConstantScorer(0.3))),
        ];
        for f in &make {
            let mut a = f();
            let mut b = f();
            // b sees the corpus in reverse order: no dependence on call order.
            let fwd: Vec<f64> = cs.iter().map(|c| a.score(c).unwrap()).collect();
            let mut bwd: Vec<f64> = cs.iter().rev().map(|c| b.score(c).unwrap()).collect();
            bwd.reverse();
            assert_eq!(fwd, bwd, "{}", a.name());
            assert!(fwd.iter().all(|s| (0.0..=1.0).contains(s)));
        }
    }
}
