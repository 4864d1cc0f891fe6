//! The training loop, evaluation protocol and run outputs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{AerSampler, EroSampler};
use crate::gridworld::{reset, reset_in_layout, Action, GridState, Observation};
use crate::learner::{act, epsilon_at, Learner, QTable, Writeback};
use crate::replay::{PriorityMode, ReplayBuffer, ReplayConfig, SampleBatch, Transition};
use crate::sampler::{LinearAnneal, MixtureSampler};
use crate::scorers::{
    ConstantScorer, CorruptedScorer, CorruptionMode, DelayedScorer, ExternalScorer, NoisyScorer, OracleScorer, Scorer,
};
use crate::scoring::{ClipBuffer, PipelineStats, ScoringPipeline};

use super::config::{EnvConfig, ExperimentConfig, SamplerKind, ScorerConfig};
use super::metrics::{aggregate, summary_csv, MetricsRow, RunSummary};
use super::HarnessError;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "REPLAY_ENGINE_OUT";
const EVAL_SEED_OFFSET: u64 = 1_000_000;

// Independent ChaCha streams per seed.
const STREAM_AGENT: u64 = 1;
const STREAM_SAMPLE: u64 = 2;
const STREAM_MODEL: u64 = 3;

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Layout seed `j` of a run's fixed layout pool.
pub fn layout_seed(run_seed: u64, j: u64) -> u64 {
    run_seed.wrapping_mul(1000).wrapping_add(j)
}

/// First seed of the evaluation episodes for a run.
pub fn eval_seed_base(run_seed: u64) -> u64 {
    EVAL_SEED_OFFSET + run_seed.wrapping_mul(1000)
}

/// Builds the evaluation environment `i` for a run: a layout from the run's
/// pool (or a fresh one without a pool) and a start pose seeded by
/// `seed_base + i`.
pub fn eval_env(env: &EnvConfig, run_seed: u64, seed_base: u64, i: u64) -> (GridState, Observation) {
    let (state, obs) = match env.layout_pool {
        Some(k) => reset_in_layout(layout_seed(run_seed, i % k), seed_base + i, env.size),
        None => reset(seed_base + i, env.size),
    }
    .expect("config validation guarantees a supported size");
    (state.with_max_steps(env.max_steps()), obs)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_ep_len: f64,
}

/// Runs `policy` for `n` episodes on `factory(seed_base + i)` and reports
/// the fraction that reached the goal before the step limit.
pub fn evaluate_policy<F, P>(mut factory: F, mut policy: P, n: usize, seed_base: u64) -> EvalStats
where
    F: FnMut(u64) -> (GridState, Observation),
    P: FnMut(&GridState, &Observation) -> Action,
{
    assert!(n >= 1, "evaluation needs at least one episode");
    let (mut wins, mut ret, mut len) = (0usize, 0.0, 0u64);
    for i in 0..n as u64 {
        let (mut env, mut obs) = factory(seed_base + i);
        loop {
            let r = env
                .step(policy(&env, &obs))
                .expect("episode is live until terminated or truncated");
            ret += r.reward;
            obs = r.obs;
            if r.terminated || r.truncated {
                wins += r.terminated as usize;
                len += env.step as u64;
                break;
            }
        }
    }
    let n = n as f64;
    EvalStats {
        success_rate: wins as f64 / n,
        mean_return: ret / n,
        mean_ep_len: len as f64 / n,
    }
}

/// Greedy (ε = 0) evaluation of a Q-table.
pub fn evaluate<F>(q: &QTable, factory: F, n: usize, seed_base: u64) -> EvalStats
where
    F: FnMut(u64) -> (GridState, Observation),
{
    evaluate_policy(factory, |_, obs| q.argmax(obs.key()), n, seed_base)
}

pub fn build_scorer(cfg: &ExperimentConfig, seed: u64) -> Result<Box<dyn Scorer>, HarnessError> {
    let timeout = Duration::from_millis(cfg.scoring.timeout_ms);
    let scorer: Box<dyn Scorer> = match &cfg.scorer {
        ScorerConfig::Oracle => Box::new(OracleScorer),
        ScorerConfig::Noisy { p } => Box::new(NoisyScorer::new(*p, seed)),
        ScorerConfig::Misleading => Box::new(CorruptedScorer {
            mode: CorruptionMode::Misleading,
            seed,
        }),
        ScorerConfig::Abstract => Box::new(CorruptedScorer {
            mode: CorruptionMode::Abstract,
            seed,
        }),
        ScorerConfig::Constant { score } => Box::new(ConstantScorer(*score)),
        ScorerConfig::External { addr } => Box::new(ExternalScorer::connect(addr.as_str())?.with_timeout(timeout)),
        ScorerConfig::ExternalCommand { program, args } => {
            Box::new(ExternalScorer::spawn(program, args)?.with_timeout(timeout))
        }
    };
    Ok(match cfg.scoring.delay_ms {
        0 => scorer,
        ms => Box::new(DelayedScorer {
            inner: scorer,
            delay: Duration::from_millis(ms),
        }),
    })
}

enum BatchSource {
    Mixture(MixtureSampler),
    Ero(EroSampler),
    Aer(AerSampler),
}

fn priority_mode(kind: SamplerKind) -> PriorityMode {
    match kind {
        SamplerKind::VlmOnly => PriorityMode::VlmOnly,
        SamplerKind::VlmTd => PriorityMode::VlmTd,
        SamplerKind::Relo => PriorityMode::ReloExternal,
        SamplerKind::Uer | SamplerKind::Per | SamplerKind::Ero | SamplerKind::Aer => PriorityMode::Per,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedTiming {
    pub seed: u64,
    pub env_steps: u64,
    /// Wall time of the training loop, evaluation excluded.
    pub train_secs: f64,
    pub eval_secs: f64,
    pub steps_per_sec: f64,
}

pub struct SeedOutcome {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub pipeline: PipelineStats,
    pub timing: SeedTiming,
    pub fallbacks: u64,
    pub stale_writes: u64,
    pub learner: Learner,
    pub buffer: ReplayBuffer,
}

/// One seed of one configuration. Rows are also streamed to `sink` (one
/// JSON object per line, flushed per row) when given.
pub fn run_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    mut sink: Option<&mut dyn Write>,
) -> Result<SeedOutcome, HarnessError> {
    cfg.validate()?;
    let resolved = cfg.resolve_sampler();
    let total = cfg.total_steps;
    let max_steps = cfg.env.max_steps();
    let size = cfg.env.size;

    let mut episode_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent_rng = stream(seed, STREAM_AGENT);
    let mut sample_rng = stream(seed, STREAM_SAMPLE);
    let mut model_rng = stream(seed, STREAM_MODEL);

    let mut buffer = ReplayBuffer::new(ReplayConfig {
        capacity: cfg.replay.capacity,
        alpha: resolved.alpha,
        mode: priority_mode(cfg.sampler),
        vlm_td_unset_score: cfg.replay.vlm_td_unset_score,
    })?;
    let mut source = match cfg.sampler {
        SamplerKind::Ero => BatchSource::Ero(EroSampler::new(&mut model_rng)),
        SamplerKind::Aer => BatchSource::Aer(AerSampler::new(
            size * size * 3,
            cfg.replay.capacity,
            total,
            model_rng.gen(),
        )),
        _ => BatchSource::Mixture(MixtureSampler::new(
            resolved.schedule,
            LinearAnneal::new(resolved.beta_start, resolved.beta_end, total.max(1)),
            resolved.is_weights,
        )),
    };
    let writeback = if cfg.sampler == SamplerKind::Relo {
        Writeback::Relo
    } else {
        Writeback::TdOnly
    };
    let mut learner = Learner::new(cfg.learner);
    let mut pipeline = ScoringPipeline::new(cfg.scoring.mode, build_scorer(cfg, seed)?, cfg.scoring.queue_depth);
    let mut clips = ClipBuffer::new(cfg.scoring.clip_len);

    let new_episode = |rng: &mut ChaCha8Rng| {
        let (state, obs) = match cfg.env.layout_pool {
            Some(k) => reset_in_layout(layout_seed(seed, rng.gen_range(0..k)), rng.gen(), size),
            None => reset(rng.gen(), size),
        }
        .expect("validated size");
        (state.with_max_steps(max_steps), obs)
    };
    let (mut env, mut obs) = new_episode(&mut episode_rng);
    let seed_base = eval_seed_base(seed);

    let mut rows = Vec::new();
    let mut eval_time = Duration::ZERO;
    let started = Instant::now();
    let mut t: u64 = 0;
    while t < total {
        let s = obs.key();
        let action = act(&learner.q, s, epsilon_at(&cfg.learner, t, total), &mut agent_rng);
        let step = env.step(action)?;
        let default_priority = match cfg.sampler {
            SamplerKind::VlmOnly => pipeline.cma.default_priority(),
            SamplerKind::VlmTd | SamplerKind::Per => cfg.replay.initial_td.unwrap_or_else(|| buffer.max_td_abs()),
            SamplerKind::Relo => buffer.max_external(),
            SamplerKind::Uer | SamplerKind::Ero | SamplerKind::Aer => 1.0,
        };
        let slot = buffer.insert(
            Transition {
                state: s,
                action,
                reward: step.reward,
                next_state: step.obs.key(),
                terminated: step.terminated,
                truncated: step.truncated,
                episode_step: env.step - 1,
                insert_time: t,
            },
            default_priority,
        );
        if let BatchSource::Aer(a) = &mut source {
            a.observe(slot, &obs);
        }
        if let Some(clip) = clips.push_frame(slot, step.events.to_payload(), step.terminated, step.truncated) {
            pipeline.submit(clip);
        }
        pipeline.drain_and_apply(&mut buffer);
        let episode_over = step.terminated || step.truncated;
        obs = step.obs;
        t += 1;

        if t >= cfg.learner.learning_starts && t.is_multiple_of(cfg.learner.train_freq) {
            let b = cfg.learner.batch_size;
            let batch: SampleBatch = match &mut source {
                BatchSource::Mixture(m) => m.draw(&buffer, b, t, &mut sample_rng)?,
                BatchSource::Ero(e) => e.select(&buffer, b, max_steps, &mut sample_rng)?,
                BatchSource::Aer(a) => a.select(&buffer, &obs, b, t, &mut sample_rng)?,
            };
            learner.train_step(&batch, &mut buffer, writeback);
        }
        if t.is_multiple_of(cfg.learner.target_sync_every) {
            learner.sync_target();
        }
        if episode_over {
            (env, obs) = new_episode(&mut episode_rng);
        }

        if t.is_multiple_of(cfg.eval_every) {
            let e0 = Instant::now();
            let stats = evaluate(
                &learner.q,
                |i| eval_env(&cfg.env, seed, seed_base, i - seed_base),
                cfg.eval_episodes,
                seed_base,
            );
            eval_time += e0.elapsed();
            let (scored, positive) = buffer.score_stats();
            let (lambda_t, fallbacks) = match &source {
                BatchSource::Mixture(m) => (m.schedule.lambda_at(t), m.fallbacks),
                _ => (0.0, 0),
            };
            if let BatchSource::Ero(e) = &mut source {
                e.on_evaluation(stats.success_rate);
            }
            let row = MetricsRow {
                seed,
                step: t,
                success_rate: stats.success_rate,
                mean_return: stats.mean_return,
                mean_ep_len: stats.mean_ep_len,
                lambda_t,
                buffer_fill: buffer.len() as f64 / buffer.capacity() as f64,
                scored_fraction: scored,
                positive_score_fraction: positive,
                queue_depth: pipeline.queue_depth(),
                fallback_count: fallbacks,
            };
            if let Some(w) = sink.as_deref_mut() {
                serde_json::to_writer(&mut *w, &row).map_err(|e| HarnessError::Format(e.to_string()))?;
                w.write_all(b"\n")?;
                w.flush()?;
            }
            rows.push(row);
        }
    }
    let elapsed = started.elapsed();
    let pipeline_stats = pipeline.shutdown(&mut buffer);
    let train_secs = (elapsed - eval_time).as_secs_f64();
    let fallbacks = match &source {
        BatchSource::Mixture(m) => m.fallbacks,
        _ => 0,
    };
    Ok(SeedOutcome {
        seed,
        rows,
        pipeline: pipeline_stats,
        timing: SeedTiming {
            seed,
            env_steps: t,
            train_secs,
            eval_secs: eval_time.as_secs_f64(),
            steps_per_sec: if train_secs > 0.0 { t as f64 / train_secs } else { 0.0 },
        },
        fallbacks,
        stale_writes: buffer.stale_writes(),
        learner,
        buffer,
    })
}

pub struct ExperimentOutcome {
    pub seeds: Vec<SeedOutcome>,
    pub summary: RunSummary,
}

/// Every seed of `cfg`, in order. With `out_dir`, writes `seed_<s>.ndjson`
/// per seed, `summary.csv`, `timing.json` and a copy of the config.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentOutcome, HarnessError> {
    cfg.validate()?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.json"), cfg.to_json())?;
    }
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        info!("{} / {}: seed {seed}", cfg.sampler.label(), cfg.scorer.label());
        let outcome = match out_dir {
            Some(dir) => {
                let mut w = BufWriter::new(File::create(dir.join(format!("seed_{seed}.ndjson")))?);
                run_seed(cfg, seed, Some(&mut w))?
            }
            None => run_seed(cfg, seed, None)?,
        };
        seeds.push(outcome);
    }
    let runs: Vec<Vec<MetricsRow>> = seeds.iter().map(|s| s.rows.clone()).collect();
    let summary = aggregate(&runs)?;
    if let Some(dir) = out_dir {
        fs::write(
            dir.join("summary.csv"),
            summary_csv(&summary, cfg.sampler.label(), &cfg.scorer.label()),
        )?;
        let timing: Vec<&SeedTiming> = seeds.iter().map(|s| &s.timing).collect();
        fs::write(
            dir.join("timing.json"),
            serde_json::to_string_pretty(&timing).map_err(|e| HarnessError::Format(e.to_string()))?,
        )?;
    }
    Ok(ExperimentOutcome { seeds, summary })
}
