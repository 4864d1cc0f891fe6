//! Experiment configuration (JSON).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gridworld::{default_max_steps, SUPPORTED_SIZES};
use crate::learner::LearnerConfig;
use crate::sampler::MixtureSchedule;
use crate::scoring::{ExecMode, DEFAULT_CLIP_LEN, DEFAULT_QUEUE_DEPTH};

use super::HarnessError;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("invalid config at `{path}`: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub size: usize,
    /// Episode step limit; `10 · size²` when null.
    pub t_max: Option<u32>,
    /// Train on this many fixed layouts per seed (random start poses); null
    /// means a fresh random layout every episode.
    pub layout_pool: Option<u64>,
}

impl EnvConfig {
    pub fn max_steps(&self) -> u32 {
        self.t_max.unwrap_or_else(|| default_max_steps(self.size))
    }
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            size: 8,
            t_max: None,
            layout_pool: Some(4),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SamplerKind {
    Uer,
    Per,
    VlmOnly,
    VlmTd,
    Ero,
    Relo,
    Aer,
}

impl SamplerKind {
    pub fn label(self) -> &'static str {
        match self {
            SamplerKind::Uer => "UER",
            SamplerKind::Per => "PER",
            SamplerKind::VlmOnly => "VLM_ONLY",
            SamplerKind::VlmTd => "VLM_TD",
            SamplerKind::Ero => "ERO",
            SamplerKind::Relo => "RELO",
            SamplerKind::Aer => "AER",
        }
    }

    pub fn uses_scores(self) -> bool {
        matches!(self, SamplerKind::VlmOnly | SamplerKind::VlmTd)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum ScorerConfig {
    Oracle,
    Noisy {
        p: f64,
    },
    Misleading,
    Abstract,
    /// Fixed score; `0` is the null scorer.
    Constant {
        score: f64,
    },
    /// Scorer service reachable over TCP, e.g. `"127.0.0.1:7070"`.
    External {
        addr: String,
    },
    /// Scorer service spawned as a child process, spoken to over stdio.
    ExternalCommand {
        program: String,
        #[serde(default)]
        args: Vec<String>,
    },
}

impl ScorerConfig {
    pub fn label(&self) -> String {
        match self {
            ScorerConfig::Oracle => "ORACLE".into(),
            ScorerConfig::Noisy { p } => format!("NOISY({p})"),
            ScorerConfig::Misleading => "MISLEADING".into(),
            ScorerConfig::Abstract => "ABSTRACT".into(),
            ScorerConfig::Constant { score } => format!("CONSTANT({score})"),
            ScorerConfig::External { .. } | ScorerConfig::ExternalCommand { .. } => "EXTERNAL".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplaySettings {
    pub capacity: usize,
    /// Overrides the sampler's priority exponent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Overrides the sampler's IS exponent (held constant).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub is_weights: Option<bool>,
    /// Semantic score assumed for unscored transitions under VLM_TD.
    pub vlm_td_unset_score: f64,
    /// |δ| given to new transitions under PER and VLM_TD; absent means the
    /// largest |δ| seen so far.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_td: Option<f64>,
}

impl Default for ReplaySettings {
    fn default() -> Self {
        ReplaySettings {
            capacity: 100_000,
            alpha: None,
            beta: None,
            is_weights: None,
            vlm_td_unset_score: 1.0,
            initial_td: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringSettings {
    pub mode: ExecMode,
    pub clip_len: usize,
    pub queue_depth: usize,
    /// Artificial latency added to every scorer call.
    pub delay_ms: u64,
    /// Per-request timeout for external scorers.
    pub timeout_ms: u64,
}

impl Default for ScoringSettings {
    fn default() -> Self {
        ScoringSettings {
            mode: ExecMode::Async,
            clip_len: DEFAULT_CLIP_LEN,
            queue_depth: DEFAULT_QUEUE_DEPTH,
            delay_ms: 0,
            timeout_ms: 30_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub sampler: SamplerKind,
    pub scorer: ScorerConfig,
    /// Mixture schedule; each sampler has its own default when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<MixtureSchedule>,
    pub learner: LearnerConfig,
    pub replay: ReplaySettings,
    pub scoring: ScoringSettings,
    pub total_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: EnvConfig::default(),
            sampler: SamplerKind::VlmOnly,
            scorer: ScorerConfig::Oracle,
            schedule: None,
            learner: LearnerConfig::default(),
            replay: ReplaySettings::default(),
            scoring: ScoringSettings::default(),
            total_steps: 300_000,
            eval_every: 2_000,
            eval_episodes: 32,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

/// Sampler settings after applying per-sampler defaults and overrides.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResolvedSampler {
    pub alpha: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub is_weights: bool,
    pub schedule: MixtureSchedule,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::new("<document>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !SUPPORTED_SIZES.contains(&self.env.size) {
            return Err(ConfigError::new(
                "env.size",
                format!("{} is not one of {SUPPORTED_SIZES:?}", self.env.size),
            ));
        }
        if self.env.t_max == Some(0) {
            return Err(ConfigError::new("env.t_max", "must be positive"));
        }
        if self.env.layout_pool == Some(0) {
            return Err(ConfigError::new("env.layout_pool", "must be positive"));
        }
        if let ScorerConfig::Noisy { p } = self.scorer {
            if !(0.0..=0.5).contains(&p) {
                return Err(ConfigError::new("scorer.p", "flip probability must lie in [0, 0.5]"));
            }
        }
        if let ScorerConfig::Constant { score } = self.scorer {
            if !(0.0..=1.0).contains(&score) {
                return Err(ConfigError::new("scorer.score", "must lie in [0, 1]"));
            }
        }
        if let Some(s) = &self.schedule {
            s.validate().map_err(|m| ConfigError::new("schedule", m))?;
        }
        self.learner
            .validate()
            .map_err(|(field, m)| ConfigError::new(format!("learner.{field}"), m))?;
        if self.replay.capacity == 0 {
            return Err(ConfigError::new("replay.capacity", "must be positive"));
        }
        if let Some(a) = self.replay.alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(ConfigError::new("replay.alpha", "must lie in [0, 1]"));
            }
        }
        if let Some(b) = self.replay.beta {
            if !(0.0..=1.0).contains(&b) {
                return Err(ConfigError::new("replay.beta", "must lie in [0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.replay.vlm_td_unset_score) {
            return Err(ConfigError::new("replay.vlm_td_unset_score", "must lie in [0, 1]"));
        }
        if let Some(d) = self.replay.initial_td {
            if !(d.is_finite() && d >= 0.0) {
                return Err(ConfigError::new("replay.initial_td", "must be finite and non-negative"));
            }
        }
        if self.scoring.clip_len == 0 {
            return Err(ConfigError::new("scoring.clip_len", "must be positive"));
        }
        if self.scoring.queue_depth == 0 {
            return Err(ConfigError::new("scoring.queue_depth", "must be positive"));
        }
        if self.eval_every == 0 {
            return Err(ConfigError::new("eval_every", "must be positive"));
        }
        if self.eval_episodes == 0 {
            return Err(ConfigError::new("eval_episodes", "must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::new("seeds", "at least one seed is required"));
        }
        Ok(())
    }

    pub fn resolve_sampler(&self) -> ResolvedSampler {
        let half = (self.total_steps / 2).max(1);
        let (alpha, beta_start, beta_end, is_weights, schedule) = match self.sampler {
            SamplerKind::Uer | SamplerKind::Ero | SamplerKind::Aer => {
                (1.0, 1.0, 1.0, false, MixtureSchedule::fixed(0.0))
            }
            SamplerKind::Per => (0.7, 1.0, 1.0, true, MixtureSchedule::none()),
            SamplerKind::VlmOnly | SamplerKind::VlmTd => {
                (1.0, 1.0, 1.0, false, MixtureSchedule::linear(0.0, 0.5, half))
            }
            SamplerKind::Relo => (0.6, 0.4, 1.0, true, MixtureSchedule::none()),
        };
        let (beta_start, beta_end) = match self.replay.beta {
            Some(b) => (b, b),
            None => (beta_start, beta_end),
        };
        ResolvedSampler {
            alpha: self.replay.alpha.unwrap_or(alpha),
            beta_start,
            beta_end,
            is_weights: self.replay.is_weights.unwrap_or(is_weights),
            schedule: match self.sampler {
                SamplerKind::Uer | SamplerKind::Ero | SamplerKind::Aer => schedule,
                _ => self.schedule.unwrap_or(schedule),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::ScheduleMode;

    #[test]
    fn round_trip() {
        let mut cfg = ExperimentConfig {
            scorer: ScorerConfig::Noisy { p: 0.2 },
            schedule: Some(MixtureSchedule::linear(0.1, 0.75, 12_345)),
            ..ExperimentConfig::default()
        };
        cfg.replay.alpha = Some(0.5);
        cfg.replay.initial_td = Some(2.0);
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        for s in [
            ScorerConfig::Oracle,
            ScorerConfig::Misleading,
            ScorerConfig::Abstract,
            ScorerConfig::Constant { score: 0.0 },
            ScorerConfig::External {
                addr: "127.0.0.1:1".into(),
            },
            ScorerConfig::ExternalCommand {
                program: "python3".into(),
                args: vec!["-m".into(), "svc".into()],
            },
        ] {
            cfg.scorer = s;
            assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        }
    }

    #[test]
    fn minimal_document_gets_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"sampler": "PER", "scorer": {"kind": "ORACLE"}}"#).unwrap();
        assert_eq!(cfg.sampler, SamplerKind::Per);
        assert_eq!(cfg.eval_episodes, 32);
        assert_eq!(cfg.seeds.len(), 5);
        assert_eq!(cfg.learner.gamma, 0.95);
        let cfg = ExperimentConfig::from_json(r#"{"env": {"size": 6}}"#).unwrap();
        assert_eq!(cfg.env.layout_pool, EnvConfig::default().layout_pool);
        let cfg = ExperimentConfig::from_json(r#"{"env": {"layout_pool": null}}"#).unwrap();
        assert_eq!(cfg.env.layout_pool, None);
    }

    #[test]
    fn errors_name_the_field() {
        let err = |doc: &str| match ExperimentConfig::from_json(doc) {
            Err(HarnessError::Config(e)) => e.path,
            other => panic!("expected config error, got {other:?}"),
        };
        assert_eq!(err(r#"{"env": {"size": 7}}"#), "env.size");
        assert_eq!(err(r#"{"learner": {"gamma": 1.5}}"#), "learner.gamma");
        assert_eq!(err(r#"{"scorer": {"kind": "NOISY", "p": 0.9}}"#), "scorer.p");
        assert_eq!(err(r#"{"seeds": []}"#), "seeds");
        assert_eq!(err(r#"{"replay": {"initial_td": -1.0}}"#), "replay.initial_td");
        assert_eq!(
            err(r#"{"schedule": {"lambda0": 0.9, "lambda_max": 0.5, "t_schedule": 10, "mode": "linear"}}"#),
            "schedule"
        );
        assert_eq!(err(r#"{"bogus": 1}"#), "<document>");
    }

    #[test]
    fn per_sampler_defaults() {
        let mut cfg = ExperimentConfig {
            total_steps: 1000,
            ..ExperimentConfig::default()
        };
        let r = cfg.resolve_sampler();
        assert_eq!(r.schedule, MixtureSchedule::linear(0.0, 0.5, 500));
        assert!(!r.is_weights);
        cfg.sampler = SamplerKind::Per;
        let r = cfg.resolve_sampler();
        assert_eq!((r.alpha, r.beta_start, r.is_weights), (0.7, 1.0, true));
        assert_eq!(r.schedule.mode, ScheduleMode::None);
        cfg.sampler = SamplerKind::Relo;
        let r = cfg.resolve_sampler();
        assert_eq!((r.alpha, r.beta_start, r.beta_end), (0.6, 0.4, 1.0));
        cfg.sampler = SamplerKind::Uer;
        cfg.schedule = Some(MixtureSchedule::none());
        assert_eq!(cfg.resolve_sampler().schedule.lambda_at(0), 0.0);
    }
}
