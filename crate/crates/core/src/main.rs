use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use replay_engine::harness::config::{ExperimentConfig, SamplerKind};
use replay_engine::harness::metrics::{first_reaching, read_summary_csv, relative_efficiency, RunSummary};
use replay_engine::harness::run::default_out_dir;
use replay_engine::harness::{run_experiment, HarnessError};
use replay_engine::sampler::MixtureSchedule;
use replay_engine::scoring::ExecMode;

#[derive(Parser)]
#[command(
    name = "replay-engine",
    version,
    about = "Replay prioritization experiments on DoorKey"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config and write metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Score clips inline for bit-reproducible runs.
        #[arg(long)]
        lockstep: bool,
        /// Output directory (default: $REPLAY_ENGINE_OUT, else ./runs).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat a run over values of one setting, e.g. `lambda_max=0.25,0.5,none`.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        vary: String,
        #[arg(long)]
        lockstep: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two summary.csv files.
    Compare {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        ours: PathBuf,
    },
    /// Short single-seed run that prints its evaluation rows.
    Demo {
        #[arg(long, default_value_t = 8)]
        size: usize,
        #[arg(long, default_value_t = 2000)]
        steps: u64,
    },
}

fn fmt_steps(s: Option<u64>) -> String {
    s.map_or_else(|| "null".into(), |v| v.to_string())
}

fn print_summary(label: &str, s: &RunSummary) {
    let thr: Vec<String> = s
        .steps_to_threshold
        .iter()
        .map(|(t, v)| format!("steps_to_{t}={}", fmt_steps(*v)))
        .collect();
    println!("{label}: best_asr={:.3} {}", s.best_asr, thr.join(" "));
}

fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary, HarnessError> {
    let outcome = run_experiment(cfg, Some(out))?;
    for s in &outcome.seeds {
        println!(
            "seed {}: {:.0} steps/s, clips enqueued {} scored {} evicted {} dropped {}",
            s.seed,
            s.timing.steps_per_sec,
            s.pipeline.enqueued,
            s.pipeline.scored,
            s.pipeline.evicted,
            s.pipeline.dropped
        );
    }
    println!("wrote {}", out.display());
    Ok(outcome.summary)
}

fn sweep(base: &ExperimentConfig, vary: &str, out: &Path) -> Result<(), HarnessError> {
    let (key, values) = vary
        .split_once('=')
        .ok_or_else(|| HarnessError::Format(format!("--vary expects key=v1,v2,..., got `{vary}`")))?;
    if key != "lambda_max" {
        return Err(HarnessError::Format(format!(
            "cannot vary `{key}`; supported: lambda_max"
        )));
    }
    let default = base.resolve_sampler().schedule;
    for v in values.split(',').map(str::trim) {
        let mut cfg = base.clone();
        cfg.schedule = Some(if v.eq_ignore_ascii_case("none") {
            MixtureSchedule::none()
        } else {
            let lm: f64 = v
                .parse()
                .map_err(|_| HarnessError::Format(format!("bad lambda_max value `{v}`")))?;
            MixtureSchedule::linear(default.lambda0.min(lm), lm, default.t_schedule)
        });
        let summary = run(&cfg, &out.join(format!("lambda_max={v}")))?;
        print_summary(&format!("lambda_max={v}"), &summary);
    }
    Ok(())
}

fn compare(base: &Path, ours: &Path) -> Result<(), HarnessError> {
    let (b, b_sampler, b_scorer) = read_summary_csv(base)?;
    let (o, o_sampler, o_scorer) = read_summary_csv(ours)?;
    let anchor = b.best_asr;
    let b_steps = first_reaching(&b.steps, &b.asr, anchor);
    let o_steps = first_reaching(&o.steps, &o.asr, anchor);
    println!("method,best_asr,steps_to_base_best,sample_efficiency");
    println!("{b_sampler}/{b_scorer},{:.3},{},", b.best_asr, fmt_steps(b_steps));
    let eff = relative_efficiency(b_steps, o_steps).map_or_else(|| "null".into(), |e| format!("{:+.1}%", 100.0 * e));
    println!("{o_sampler}/{o_scorer},{:.3},{},{eff}", o.best_asr, fmt_steps(o_steps));
    Ok(())
}

fn demo(size: usize, steps: u64) -> Result<(), HarnessError> {
    let mut cfg = ExperimentConfig::default();
    cfg.env.size = size;
    cfg.sampler = SamplerKind::VlmOnly;
    cfg.total_steps = steps;
    cfg.eval_every = (steps / 10).max(1);
    cfg.seeds = vec![0];
    cfg.scoring.mode = ExecMode::Lockstep;
    cfg.learner.learning_starts = cfg.learner.learning_starts.min(steps / 4);
    let outcome = run_experiment(&cfg, None)?;
    for r in &outcome.seeds[0].rows {
        println!(
            "step {:>8}  sr {:.3}  return {:.3}  lambda {:.3}  scored {:.3}  positive {:.3}",
            r.step, r.success_rate, r.mean_return, r.lambda_t, r.scored_fraction, r.positive_score_fraction
        );
    }
    print_summary("demo", &outcome.summary);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed_override,
            lockstep,
            out,
        } => ExperimentConfig::load(&config).and_then(|mut cfg| {
            if let Some(s) = seed_override {
                cfg.seeds = vec![s];
            }
            if lockstep {
                cfg.scoring.mode = ExecMode::Lockstep;
            }
            let out = out.unwrap_or_else(default_out_dir);
            let summary = run(&cfg, &out)?;
            print_summary(&format!("{}/{}", cfg.sampler.label(), cfg.scorer.label()), &summary);
            Ok(())
        }),
        Command::Sweep {
            config,
            vary,
            lockstep,
            out,
        } => ExperimentConfig::load(&config).and_then(|mut cfg| {
            if lockstep {
                cfg.scoring.mode = ExecMode::Lockstep;
            }
            sweep(&cfg, &vary, &out.unwrap_or_else(default_out_dir))
        }),
        Command::Compare { base, ours } => compare(&base, &ours),
        Command::Demo { size, steps } => demo(size, steps),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
