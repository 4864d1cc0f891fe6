//! Mixture of the prioritized and uniform branches, and the schedules that
//! drive it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::replay::{importance_weights, ReplayBuffer, ReplayError, SampleBatch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    Linear,
    /// No warm-up: λ is 1 throughout (pure prioritized sampling).
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSchedule {
    pub lambda0: f64,
    pub lambda_max: f64,
    pub t_schedule: u64,
    pub mode: ScheduleMode,
}

impl MixtureSchedule {
    pub fn linear(lambda0: f64, lambda_max: f64, t_schedule: u64) -> Self {
        MixtureSchedule {
            lambda0,
            lambda_max,
            t_schedule,
            mode: ScheduleMode::Linear,
        }
    }

    pub fn none() -> Self {
        MixtureSchedule {
            lambda0: 1.0,
            lambda_max: 1.0,
            t_schedule: 1,
            mode: ScheduleMode::None,
        }
    }

    /// Constant λ; `fixed(0.0)` is plain uniform replay.
    pub fn fixed(lambda: f64) -> Self {
        Self::linear(lambda, lambda, 1)
    }

    pub fn validate(&self) -> Result<(), String> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.lambda0) || !unit.contains(&self.lambda_max) {
            return Err("lambda0 and lambda_max must lie in [0, 1]".into());
        }
        if self.lambda0 > self.lambda_max {
            return Err("lambda0 must not exceed lambda_max".into());
        }
        if self.t_schedule == 0 {
            return Err("t_schedule must be positive".into());
        }
        Ok(())
    }

    pub fn lambda_at(&self, t: u64) -> f64 {
        match self.mode {
            ScheduleMode::None => 1.0,
            ScheduleMode::Linear => {
                let frac = (t as f64 / self.t_schedule as f64).min(1.0);
                self.lambda0 + (self.lambda_max - self.lambda0) * frac
            }
        }
    }
}

/// Linear ramp from `start` to `end` over `horizon` steps, then flat.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearAnneal {
    pub start: f64,
    pub end: f64,
    pub horizon: u64,
}

impl LinearAnneal {
    pub fn new(start: f64, end: f64, horizon: u64) -> Self {
        LinearAnneal { start, end, horizon }
    }

    pub fn value(&self, t: u64) -> f64 {
        if t >= self.horizon {
            return self.end;
        }
        self.start + (self.end - self.start) * (t as f64 / self.horizon as f64)
    }
}

/// `(k_prioritized, k_uniform)` with `k_prioritized = round(lam · batch)`,
/// halves rounded away from zero.
pub fn split_batch(batch: usize, lam: f64) -> (usize, usize) {
    let lam = lam.clamp(0.0, 1.0);
    let kp = ((lam * batch as f64).round() as usize).min(batch);
    (kp, batch - kp)
}

/// Draws `batch` indices: `round(lam · batch)` from the prioritized branch,
/// the rest uniformly. IS weights are computed on the prioritized part only.
/// Returns `true` alongside the batch when the prioritized branch had no
/// mass and the whole batch fell back to uniform.
pub fn draw_mixture<R: Rng + ?Sized>(
    buffer: &ReplayBuffer,
    batch: usize,
    lam: f64,
    beta: f64,
    is_enabled: bool,
    rng: &mut R,
) -> Result<(SampleBatch, bool), ReplayError> {
    if buffer.is_empty() {
        return Err(ReplayError::EmptyBuffer);
    }
    let (kp, ku) = split_batch(batch, lam);
    let mut out = SampleBatch::default();
    if kp > 0 {
        match buffer.sample_proportional(kp, rng) {
            Ok(mut p) => {
                p.is_weights = importance_weights(&p.probs, buffer.len(), beta, is_enabled);
                out.extend(p);
            }
            Err(ReplayError::ZeroMass) => return Ok((buffer.sample_uniform(batch, rng)?, true)),
            Err(e) => return Err(e),
        }
    }
    if ku > 0 {
        out.extend(buffer.sample_uniform(ku, rng)?);
    }
    Ok((out, false))
}

/// Stateful wrapper used by the training loop: schedule, β, IS flag and the
/// zero-mass fallback counter.
#[derive(Clone, Debug)]
pub struct MixtureSampler {
    pub schedule: MixtureSchedule,
    pub beta: LinearAnneal,
    pub is_enabled: bool,
    pub fallbacks: u64,
}

impl MixtureSampler {
    pub fn new(schedule: MixtureSchedule, beta: LinearAnneal, is_enabled: bool) -> Self {
        MixtureSampler {
            schedule,
            beta,
            is_enabled,
            fallbacks: 0,
        }
    }

    pub fn draw<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        batch: usize,
        t: u64,
        rng: &mut R,
    ) -> Result<SampleBatch, ReplayError> {
        let lam = self.schedule.lambda_at(t);
        let (b, fell_back) = draw_mixture(buffer, batch, lam, self.beta.value(t), self.is_enabled, rng)?;
        if fell_back {
            self.fallbacks += 1;
        }
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{Action, StateKey};
    use crate::replay::{Branch, PriorityMode, ReplayConfig, Transition};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lambda_examples() {
        let s = MixtureSchedule::linear(0.0, 0.5, 500_000);
        assert_eq!(s.lambda_at(0), 0.0);
        assert_eq!(s.lambda_at(250_000), 0.25);
        assert_eq!(s.lambda_at(500_000), 0.5);
        assert_eq!(s.lambda_at(1_000_000_000), 0.5);
        assert_eq!(MixtureSchedule::none().lambda_at(0), 1.0);
        assert!(MixtureSchedule::linear(0.6, 0.5, 10).validate().is_err());
    }

    #[test]
    fn anneal_hits_end_exactly() {
        let a = LinearAnneal::new(0.4, 1.0, 300_000);
        assert_eq!(a.value(0), 0.4);
        assert_eq!(a.value(300_000), 1.0);
        assert_eq!(a.value(u64::MAX), 1.0);
        let b = LinearAnneal::new(4.0, 1.0, 7);
        assert_eq!(b.value(7), 1.0);
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_batch(128, 0.5), (64, 64));
        assert_eq!(split_batch(128, 0.0), (0, 128));
        assert_eq!(split_batch(10, 0.25), (3, 7));
    }

    /// Exhaustive integer oracle for λ = k/64 (exact in binary), B ≤ 16:
    /// round-half-away-from-zero of k·B/64 is floor((2kB + 64) / 128).
    #[test]
    fn split_matches_integer_rounding_table() {
        for b in 1..=16usize {
            for k in 0..=64usize {
                let expected = (2 * k * b + 64) / 128;
                let (kp, ku) = split_batch(b, k as f64 / 64.0);
                assert_eq!(kp, expected, "B={b} k={k}");
                assert_eq!(kp + ku, b);
            }
        }
    }

    proptest! {
        #[test]
        fn split_is_exact(b in 1usize..10_000, lam in 0.0f64..=1.0) {
            let (kp, ku) = split_batch(b, lam);
            prop_assert_eq!(kp + ku, b);
        }

        #[test]
        fn schedule_is_monotone(l0 in 0.0f64..=1.0, d in 0.0f64..=1.0, ts in 1u64..1_000_000, t1 in 0u64..2_000_000, dt in 0u64..1_000_000) {
            let lmax = (l0 + d).min(1.0);
            let s = MixtureSchedule::linear(l0, lmax, ts);
            prop_assert!(s.lambda_at(t1) <= s.lambda_at(t1 + dt));
        }
    }

    fn filled(n: usize, priorities: &[f64]) -> ReplayBuffer {
        let mut b = ReplayBuffer::new(ReplayConfig::new(n, 1.0, PriorityMode::VlmOnly)).unwrap();
        for (i, p) in priorities.iter().enumerate() {
            b.insert(
                Transition {
                    state: StateKey(i as u64),
                    action: Action::Left,
                    reward: 0.0,
                    next_state: StateKey(0),
                    terminated: false,
                    truncated: false,
                    episode_step: 0,
                    insert_time: i as u64,
                },
                *p,
            );
        }
        b
    }

    #[test]
    fn zero_mass_falls_back_to_uniform() {
        let b = filled(4, &[0.0; 4]);
        let mut s = MixtureSampler::new(MixtureSchedule::none(), LinearAnneal::new(1.0, 1.0, 1), false);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = s.draw(&b, 8, 0, &mut rng).unwrap();
        assert_eq!(batch.len(), 8);
        assert!(batch.branch.iter().all(|b| *b == Branch::Uniform));
        assert_eq!(s.fallbacks, 1);
    }

    #[test]
    fn concentrated_priority_share() {
        // One index holds all prioritized mass: expected share of i* is
        // λ + (1 − λ)/N = 0.5 + 0.5/10 = 0.55.
        let mut pr = vec![0.0; 10];
        pr[3] = 1.0;
        let b = filled(10, &pr);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut hits = 0;
        let mut total = 0;
        for _ in 0..100 {
            let (batch, fb) = draw_mixture(&b, 100, 0.5, 1.0, false, &mut rng).unwrap();
            assert!(!fb);
            hits += batch.indices().iter().filter(|i| **i == 3).count();
            total += batch.len();
        }
        let share = hits as f64 / total as f64;
        assert!(share >= 0.5 && (share - 0.55).abs() < 0.02, "share {share}");
    }

    #[test]
    fn branch_tags_and_weights() {
        let b = filled(4, &[1.0, 2.0, 3.0, 4.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (batch, _) = draw_mixture(&b, 10, 0.5, 1.0, true, &mut rng).unwrap();
        assert_eq!(batch.branch.iter().filter(|b| **b == Branch::Prioritized).count(), 5);
        let max = batch.is_weights[..5].iter().cloned().fold(0.0, f64::max);
        assert_eq!(max, 1.0);
        assert!(batch.is_weights[5..].iter().all(|w| *w == 1.0));
    }
}
