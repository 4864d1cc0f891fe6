//! Evaluation rows, cross-seed aggregation, and the summary CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;

pub const THRESHOLDS: [f64; 2] = [0.5, 0.9];
pub const SUMMARY_HEADER: &str = "step,asr,sem,sampler,scorer";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub step: u64,
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_ep_len: f64,
    pub lambda_t: f64,
    pub buffer_fill: f64,
    pub scored_fraction: f64,
    pub positive_score_fraction: f64,
    pub queue_depth: usize,
    pub fallback_count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: Vec<u64>,
    /// Mean success rate across seeds at each step.
    pub asr: Vec<f64>,
    pub sem: Vec<f64>,
    pub best_asr: f64,
    /// `(threshold, first step with ASR ≥ threshold)`.
    pub steps_to_threshold: Vec<(f64, Option<u64>)>,
}

/// Sample standard deviation over √M; zero for a single seed.
pub fn mean_sem(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// First step whose value reaches `threshold`.
pub fn first_reaching(steps: &[u64], values: &[f64], threshold: f64) -> Option<u64> {
    steps
        .iter()
        .zip(values)
        .find(|(_, v)| **v >= threshold)
        .map(|(s, _)| *s)
}

/// Per-seed steps-to-threshold on success rate.
pub fn seed_steps_to(rows: &[MetricsRow], threshold: f64) -> Option<u64> {
    rows.iter().find(|r| r.success_rate >= threshold).map(|r| r.step)
}

/// Median with "never reached" ranked above every finite value. `None` when
/// the median itself is a run that never reached the threshold.
pub fn median_steps(values: &[Option<u64>]) -> Option<u64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<u64> = values.iter().map(|x| x.unwrap_or(u64::MAX)).collect();
    v.sort_unstable();
    let n = v.len();
    let m = if n % 2 == 1 {
        v[n / 2]
    } else {
        let (a, b) = (v[n / 2 - 1], v[n / 2]);
        if a == u64::MAX || b == u64::MAX {
            u64::MAX
        } else {
            (a + b) / 2
        }
    };
    (m != u64::MAX).then_some(m)
}

/// `(base − ours) / base`; `None` if either never reached the threshold.
pub fn relative_efficiency(base: Option<u64>, ours: Option<u64>) -> Option<f64> {
    match (base, ours) {
        (Some(b), Some(o)) if b > 0 => Some((b as f64 - o as f64) / b as f64),
        _ => None,
    }
}

/// Per-step mean and SEM across seeds. Every seed must report the same steps.
pub fn aggregate(runs: &[Vec<MetricsRow>]) -> Result<RunSummary, HarnessError> {
    let first = runs.first().ok_or(HarnessError::MisalignedSteps("no runs".into()))?;
    let steps: Vec<u64> = first.iter().map(|r| r.step).collect();
    for (i, run) in runs.iter().enumerate() {
        let s: Vec<u64> = run.iter().map(|r| r.step).collect();
        if s != steps {
            return Err(HarnessError::MisalignedSteps(format!(
                "run {i} reports steps {s:?}, expected {steps:?}"
            )));
        }
    }
    let mut asr = Vec::with_capacity(steps.len());
    let mut sem = Vec::with_capacity(steps.len());
    for k in 0..steps.len() {
        let xs: Vec<f64> = runs.iter().map(|r| r[k].success_rate).collect();
        let (m, e) = mean_sem(&xs);
        asr.push(m);
        sem.push(e);
    }
    Ok(summary_from_curve(steps, asr, sem))
}

pub fn summary_from_curve(steps: Vec<u64>, asr: Vec<f64>, sem: Vec<f64>) -> RunSummary {
    let best_asr = asr.iter().cloned().fold(0.0, f64::max);
    let steps_to_threshold = THRESHOLDS
        .iter()
        .map(|t| (*t, first_reaching(&steps, &asr, *t)))
        .collect();
    RunSummary {
        steps,
        asr,
        sem,
        best_asr,
        steps_to_threshold,
    }
}

pub fn summary_csv(summary: &RunSummary, sampler: &str, scorer: &str) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for ((step, asr), sem) in summary.steps.iter().zip(&summary.asr).zip(&summary.sem) {
        writeln!(out, "{step},{asr},{sem},{sampler},{scorer}").expect("write to string");
    }
    out
}

/// Reads a `summary.csv` back into a curve plus its sampler and scorer labels.
pub fn read_summary_csv(path: &Path) -> Result<(RunSummary, String, String), HarnessError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let bad = |m: String| HarnessError::Format(format!("{}: {m}", path.display()));
    if lines.next() != Some(SUMMARY_HEADER) {
        return Err(bad("missing summary header".into()));
    }
    let (mut steps, mut asr, mut sem) = (Vec::new(), Vec::new(), Vec::new());
    let (mut sampler, mut scorer) = (String::new(), String::new());
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let f: Vec<&str> = line.splitn(5, ',').collect();
        if f.len() != 5 {
            return Err(bad(format!("line {}: expected 5 fields", n + 2)));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("line {}: {e}", n + 2)));
        steps.push(f[0].parse::<u64>().map_err(|e| bad(format!("line {}: {e}", n + 2)))?);
        asr.push(num(f[1])?);
        sem.push(num(f[2])?);
        sampler = f[3].to_string();
        scorer = f[4].to_string();
    }
    Ok((summary_from_curve(steps, asr, sem), sampler, scorer))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, step: u64, sr: f64) -> MetricsRow {
        MetricsRow {
            seed,
            step,
            success_rate: sr,
            mean_return: 0.0,
            mean_ep_len: 0.0,
            lambda_t: 0.0,
            buffer_fill: 0.0,
            scored_fraction: 0.0,
            positive_score_fraction: 0.0,
            queue_depth: 0,
            fallback_count: 0,
        }
    }

    #[test]
    fn sem_examples() {
        assert_eq!(mean_sem(&[1.0; 5]), (1.0, 0.0));
        let (m, e) = mean_sem(&[0.0, 1.0]);
        assert_eq!(m, 0.5);
        assert!((e - 0.5).abs() < 1e-12);
    }

    #[test]
    fn aggregate_and_thresholds() {
        let runs = vec![
            vec![row(0, 10, 0.2), row(0, 20, 0.9), row(0, 30, 1.0)],
            vec![row(1, 10, 0.4), row(1, 20, 0.5), row(1, 30, 1.0)],
        ];
        let s = aggregate(&runs).unwrap();
        assert_eq!(s.steps, vec![10, 20, 30]);
        assert!((s.asr[1] - 0.7).abs() < 1e-12);
        assert_eq!(s.best_asr, 1.0);
        assert_eq!(s.steps_to_threshold, vec![(0.5, Some(20)), (0.9, Some(30))]);
        let mis = vec![runs[0].clone(), runs[1][..2].to_vec()];
        assert!(matches!(aggregate(&mis), Err(HarnessError::MisalignedSteps(_))));
    }

    #[test]
    fn efficiency_examples() {
        assert_eq!(relative_efficiency(Some(100_000), Some(60_000)), Some(0.4));
        assert_eq!(relative_efficiency(None, Some(1)), None);
    }

    #[test]
    fn median_ranks_never_last() {
        assert_eq!(median_steps(&[Some(5), None, Some(1)]), Some(5));
        assert_eq!(median_steps(&[None, None, Some(1)]), None);
        assert_eq!(median_steps(&[Some(2), Some(4)]), Some(3));
    }

    #[test]
    fn csv_round_trip() {
        let s = summary_from_curve(vec![5, 10], vec![0.25, 0.5], vec![0.1, 0.0]);
        let text = summary_csv(&s, "PER", "ORACLE");
        assert!(text.starts_with("step,asr,sem,sampler,scorer\n5,0.25,0.1,PER,ORACLE\n"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("summary.csv");
        fs::write(&p, &text).unwrap();
        let (back, sampler, scorer) = read_summary_csv(&p).unwrap();
        assert_eq!(back, s);
        assert_eq!((sampler.as_str(), scorer.as_str()), ("PER", "ORACLE"));
    }
}
