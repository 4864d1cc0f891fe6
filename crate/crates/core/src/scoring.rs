//! Clip assembly and the scoring queues.
//!
//! The training thread pushes one frame per environment step into a
//! [`ClipBuffer`]; full or episode-ending clips become [`ClipRequest`]s on a
//! bounded input queue. A worker pops requests, scores them, and pushes
//! [`ScoreResult`]s onto an output channel that the training thread drains
//! without blocking, writing the score to every member transition.
//!
//! In [`ExecMode::Lockstep`] there is no thread: pending requests are scored
//! inline at drain time, which makes whole runs reproducible bit for bit.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::replay::{ReplayBuffer, SlotRef};
use crate::scorers::Scorer;

pub const DEFAULT_CLIP_LEN: usize = 32;
pub const DEFAULT_QUEUE_DEPTH: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct ClipRequest {
    pub clip_id: u64,
    pub slots: Vec<SlotRef>,
    pub frames: Vec<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreResult {
    pub clip_id: u64,
    pub slots: Vec<SlotRef>,
    pub score: f64,
}

#[derive(Debug)]
pub struct ClipBuffer {
    entries: Vec<(SlotRef, Vec<u8>)>,
    max_len: usize,
    next_clip_id: u64,
}

impl ClipBuffer {
    pub fn new(max_len: usize) -> Self {
        assert!(max_len >= 1, "clip length must be at least 1");
        ClipBuffer {
            entries: Vec::with_capacity(max_len),
            max_len,
            next_clip_id: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Emits the accumulated clip when it reaches `max_len` or the episode ends.
    pub fn push_frame(
        &mut self,
        slot: SlotRef,
        frame: Vec<u8>,
        terminated: bool,
        truncated: bool,
    ) -> Option<ClipRequest> {
        self.entries.push((slot, frame));
        if self.entries.len() < self.max_len && !terminated && !truncated {
            return None;
        }
        let (slots, frames) = self.entries.drain(..).unzip();
        let clip_id = self.next_clip_id;
        self.next_clip_id += 1;
        Some(ClipRequest { clip_id, slots, frames })
    }

    /// Drops a partial clip (used when an episode is abandoned mid-way).
    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CmaState {
    pub mean: f64,
    pub count: u64,
}

impl CmaState {
    pub fn update(self, score: f64) -> CmaState {
        let count = self.count + 1;
        let mean = if self.count == 0 {
            score
        } else {
            (self.mean * self.count as f64 + score) / count as f64
        };
        CmaState { mean, count }
    }

    /// Default priority for fresh insertions, clamped to `[0, 1]`. Before
    /// the first score arrives every insertion gets 1, so the prioritized
    /// branch starts out uniform instead of empty.
    pub fn default_priority(&self) -> f64 {
        if self.count == 0 {
            return 1.0;
        }
        self.mean.clamp(0.0, 1.0)
    }
}

enum InMsg {
    Clip(ClipRequest),
    Shutdown,
}

#[derive(Debug, Default)]
pub struct PipelineCounters {
    pub enqueued: AtomicU64,
    pub evicted: AtomicU64,
    pub scored: AtomicU64,
    pub dropped: AtomicU64,
    pub retries: AtomicU64,
    pub applied: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub enqueued: u64,
    pub evicted: u64,
    pub scored: u64,
    pub dropped: u64,
    pub retries: u64,
    pub applied: u64,
}

impl PipelineStats {
    /// Every enqueued clip was scored, evicted unscored, or dropped after retry.
    pub fn conserved(&self) -> bool {
        self.enqueued == self.scored + self.evicted + self.dropped
    }
}

impl PipelineCounters {
    pub fn snapshot(&self) -> PipelineStats {
        PipelineStats {
            enqueued: self.enqueued.load(Ordering::SeqCst),
            evicted: self.evicted.load(Ordering::SeqCst),
            scored: self.scored.load(Ordering::SeqCst),
            dropped: self.dropped.load(Ordering::SeqCst),
            retries: self.retries.load(Ordering::SeqCst),
            applied: self.applied.load(Ordering::SeqCst),
        }
    }
}

/// Bounded FIFO of clip requests. When full, the oldest unscored request is
/// evicted to make room. The shutdown marker is never evicted.
pub struct InputQueue {
    inner: Mutex<VecDeque<InMsg>>,
    ready: Condvar,
    depth: usize,
    counters: Arc<PipelineCounters>,
}

impl InputQueue {
    pub fn new(depth: usize, counters: Arc<PipelineCounters>) -> Self {
        assert!(depth >= 1, "queue depth must be at least 1");
        InputQueue {
            inner: Mutex::new(VecDeque::with_capacity(depth + 1)),
            ready: Condvar::new(),
            depth,
            counters,
        }
    }

    pub fn push(&self, req: ClipRequest) {
        let mut q = self.inner.lock().expect("input queue poisoned");
        let clips = q.iter().filter(|m| matches!(m, InMsg::Clip(_))).count();
        if clips >= self.depth {
            if let Some(pos) = q.iter().position(|m| matches!(m, InMsg::Clip(_))) {
                q.remove(pos);
                self.counters.evicted.fetch_add(1, Ordering::SeqCst);
            }
        }
        q.push_back(InMsg::Clip(req));
        self.counters.enqueued.fetch_add(1, Ordering::SeqCst);
        drop(q);
        self.ready.notify_one();
    }

    pub fn request_shutdown(&self) {
        self.inner
            .lock()
            .expect("input queue poisoned")
            .push_back(InMsg::Shutdown);
        self.ready.notify_all();
    }

    pub fn depth(&self) -> usize {
        self.inner
            .lock()
            .expect("input queue poisoned")
            .iter()
            .filter(|m| matches!(m, InMsg::Clip(_)))
            .count()
    }

    fn pop(&self, block: bool) -> Option<InMsg> {
        let mut q = self.inner.lock().expect("input queue poisoned");
        loop {
            if let Some(m) = q.pop_front() {
                return Some(m);
            }
            if !block {
                return None;
            }
            q = self.ready.wait(q).expect("input queue poisoned");
        }
    }
}

fn score_with_retry(scorer: &mut dyn Scorer, req: ClipRequest, counters: &PipelineCounters) -> Option<ScoreResult> {
    let mut attempt = scorer.score(&req);
    if let Err(e) = &attempt {
        debug!("clip {} failed ({e}); retrying", req.clip_id);
        counters.retries.fetch_add(1, Ordering::SeqCst);
        attempt = scorer.score(&req);
    }
    match attempt {
        Ok(score) if (0.0..=1.0).contains(&score) => {
            counters.scored.fetch_add(1, Ordering::SeqCst);
            Some(ScoreResult {
                clip_id: req.clip_id,
                slots: req.slots,
                score,
            })
        }
        other => {
            warn!("dropping clip {} after retry: {:?}", req.clip_id, other);
            counters.dropped.fetch_add(1, Ordering::SeqCst);
            None
        }
    }
}

/// Serves the input queue until a shutdown marker is popped. Requests ahead
/// of the marker are all scored first.
pub fn worker_loop(input: &InputQueue, out: &Sender<ScoreResult>, scorer: &mut dyn Scorer) {
    while let Some(msg) = input.pop(true) {
        match msg {
            InMsg::Shutdown => break,
            InMsg::Clip(req) => {
                if let Some(res) = score_with_retry(scorer, req, &input.counters) {
                    if out.send(res).is_err() {
                        break;
                    }
                }
            }
        }
    }
}

/// Pops every available result without blocking and writes each clip's
/// score to all of its transitions. Returns the number of clips applied.
pub fn drain_and_apply(results: &Receiver<ScoreResult>, buffer: &mut ReplayBuffer, cma: &mut CmaState) -> usize {
    let mut applied = 0;
    loop {
        match results.try_recv() {
            Ok(res) => {
                for slot in &res.slots {
                    // Stale slots are counted inside the buffer.
                    let _ = buffer.set_semantic_score(*slot, res.score);
                }
                *cma = cma.update(res.score);
                applied += 1;
            }
            Err(TryRecvError::Empty) | Err(TryRecvError::Disconnected) => return applied,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    Lockstep,
    Async,
}

enum Backend {
    Lockstep(Box<dyn Scorer>),
    Async(Option<JoinHandle<()>>),
}

/// Owns the queues, the worker (or the inline scorer in lockstep mode) and
/// the running CMA of scores.
pub struct ScoringPipeline {
    input: Arc<InputQueue>,
    results_tx: Sender<ScoreResult>,
    results: Receiver<ScoreResult>,
    backend: Backend,
    counters: Arc<PipelineCounters>,
    pub cma: CmaState,
}

impl ScoringPipeline {
    pub fn new(mode: ExecMode, scorer: Box<dyn Scorer>, depth: usize) -> Self {
        let counters = Arc::new(PipelineCounters::default());
        let input = Arc::new(InputQueue::new(depth, counters.clone()));
        let (tx, rx) = mpsc::channel();
        let backend = match mode {
            ExecMode::Lockstep => Backend::Lockstep(scorer),
            ExecMode::Async => {
                let q = input.clone();
                let out = tx.clone();
                let mut scorer = scorer;
                let handle = thread::Builder::new()
                    .name("clip-scorer".into())
                    .spawn(move || worker_loop(&q, &out, scorer.as_mut()))
                    .expect("spawn scoring worker");
                Backend::Async(Some(handle))
            }
        };
        ScoringPipeline {
            input,
            results_tx: tx,
            results: rx,
            backend,
            counters,
            cma: CmaState::default(),
        }
    }

    pub fn submit(&self, req: ClipRequest) {
        self.input.push(req);
    }

    pub fn queue_depth(&self) -> usize {
        self.input.depth()
    }

    pub fn stats(&self) -> PipelineStats {
        self.counters.snapshot()
    }

    fn run_inline(&mut self) {
        if let Backend::Lockstep(scorer) = &mut self.backend {
            while let Some(msg) = self.input.pop(false) {
                if let InMsg::Clip(req) = msg {
                    if let Some(res) = score_with_retry(scorer.as_mut(), req, &self.counters) {
                        let _ = self.results_tx.send(res);
                    }
                }
            }
        }
    }

    /// Applies every finished score to `buffer`. Never waits on the worker.
    pub fn drain_and_apply(&mut self, buffer: &mut ReplayBuffer) -> usize {
        self.run_inline();
        let n = drain_and_apply(&self.results, buffer, &mut self.cma);
        self.counters.applied.fetch_add(n as u64, Ordering::SeqCst);
        n
    }

    /// Lets the worker finish everything queued, applies the remaining
    /// results, and returns the final counters.
    pub fn shutdown(mut self, buffer: &mut ReplayBuffer) -> PipelineStats {
        match &mut self.backend {
            Backend::Lockstep(_) => self.run_inline(),
            Backend::Async(handle) => {
                self.input.request_shutdown();
                if let Some(h) = handle.take() {
                    if h.join().is_err() {
                        warn!("scoring worker panicked");
                    }
                }
            }
        }
        self.drain_and_apply(buffer);
        self.stats()
    }
}

impl Drop for ScoringPipeline {
    fn drop(&mut self) {
        if let Backend::Async(handle) = &mut self.backend {
            if let Some(h) = handle.take() {
                self.input.request_shutdown();
                let _ = h.join();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{Action, StateKey};
    use crate::replay::{PriorityMode, ReplayConfig, Transition};
    use crate::scorers::{ConstantScorer, EventTag, ScoreError};

    fn slot(i: usize) -> SlotRef {
        SlotRef {
            index: i,
            generation: 0,
        }
    }

    fn frame() -> Vec<u8> {
        EventTag::default().to_payload()
    }

    fn request(id: u64, n: usize) -> ClipRequest {
        ClipRequest {
            clip_id: id,
            slots: (0..n).map(slot).collect(),
            frames: vec![frame(); n],
        }
    }

    fn buffer(n: usize) -> ReplayBuffer {
        let mut b = ReplayBuffer::new(ReplayConfig::new(64, 1.0, PriorityMode::VlmOnly)).unwrap();
        for i in 0..n {
            b.insert(
                Transition {
                    state: StateKey(i as u64),
                    action: Action::Left,
                    reward: 0.0,
                    next_state: StateKey(0),
                    terminated: false,
                    truncated: false,
                    episode_step: i as u32,
                    insert_time: i as u64,
                },
                0.5,
            );
        }
        b
    }

    #[test]
    fn clip_emits_at_length() {
        let mut cb = ClipBuffer::new(32);
        for i in 0..31 {
            assert!(cb.push_frame(slot(i), frame(), false, false).is_none());
        }
        let c = cb.push_frame(slot(31), frame(), false, false).unwrap();
        assert_eq!(c.slots.len(), 32);
        assert_eq!(c.frames.len(), 32);
        assert!(cb.is_empty());
        assert_eq!(c.clip_id, 0);
    }

    #[test]
    fn clip_flushes_early_on_episode_end() {
        let mut cb = ClipBuffer::new(32);
        for i in 0..4 {
            assert!(cb.push_frame(slot(i), frame(), false, false).is_none());
        }
        let c = cb.push_frame(slot(4), frame(), true, false).unwrap();
        assert_eq!(c.slots.len(), 5);
        // Next clip starts empty with a fresh id.
        let c2 = cb.push_frame(slot(5), frame(), false, true).unwrap();
        assert_eq!(c2.slots, vec![slot(5)]);
        assert_eq!(c2.clip_id, 1);
    }

    #[test]
    fn cma_examples() {
        assert_eq!(CmaState::default().update(1.0), CmaState { mean: 1.0, count: 1 });
        assert_eq!(
            CmaState { mean: 0.75, count: 2 }.update(0.0),
            CmaState { mean: 0.5, count: 3 }
        );
        assert_eq!(
            CmaState { mean: 0.5, count: 1 }.update(1.0),
            CmaState { mean: 0.75, count: 2 }
        );
        let mut c = CmaState::default();
        for i in 0..1000 {
            c = c.update((i % 2) as f64);
        }
        // Closed form: 500 ones over 1000 scores.
        assert!((c.mean - 0.5).abs() <= 1e-3);
        assert_eq!(CmaState::default().default_priority(), 1.0);
        assert_eq!(CmaState { mean: 0.0, count: 4 }.default_priority(), 0.0);
    }

    struct FailOnce {
        failed: bool,
    }

    impl Scorer for FailOnce {
        fn score(&mut self, _c: &ClipRequest) -> Result<f64, ScoreError> {
            if !self.failed {
                self.failed = true;
                return Err(ScoreError::Failed("transient".into()));
            }
            Ok(1.0)
        }

        fn name(&self) -> &str {
            "fail-once"
        }
    }

    struct AlwaysFail;

    impl Scorer for AlwaysFail {
        fn score(&mut self, _c: &ClipRequest) -> Result<f64, ScoreError> {
            Err(ScoreError::Failed("down".into()))
        }

        fn name(&self) -> &str {
            "down"
        }
    }

    fn run_worker(reqs: Vec<ClipRequest>, scorer: &mut dyn Scorer) -> (Vec<ScoreResult>, PipelineStats) {
        let counters = Arc::new(PipelineCounters::default());
        let q = InputQueue::new(64, counters.clone());
        for r in reqs {
            q.push(r);
        }
        q.request_shutdown();
        let (tx, rx) = mpsc::channel();
        worker_loop(&q, &tx, scorer);
        (rx.try_iter().collect(), counters.snapshot())
    }

    #[test]
    fn worker_scores_request() {
        let (res, _) = run_worker(vec![request(0, 3)], &mut ConstantScorer(1.0));
        assert_eq!(res.len(), 1);
        assert_eq!(res[0].score, 1.0);
    }

    #[test]
    fn worker_retries_once() {
        let (res, stats) = run_worker(vec![request(0, 1)], &mut FailOnce { failed: false });
        assert_eq!(res.len(), 1);
        assert_eq!(stats.retries, 1);
        let (res, stats) = run_worker(vec![request(0, 1), request(1, 1)], &mut AlwaysFail);
        assert!(res.is_empty());
        assert_eq!(stats.dropped, 2);
        assert!(stats.conserved());
    }

    #[test]
    fn shutdown_drains_queued_work_in_order() {
        let (res, stats) = run_worker((0..3).map(|i| request(i, 2)).collect(), &mut ConstantScorer(0.0));
        assert_eq!(res.iter().map(|r| r.clip_id).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(stats.scored, 3);
    }

    #[test]
    fn full_queue_evicts_oldest() {
        let counters = Arc::new(PipelineCounters::default());
        let q = InputQueue::new(2, counters.clone());
        for i in 0..5 {
            q.push(request(i, 1));
        }
        assert_eq!(q.depth(), 2);
        q.request_shutdown();
        let (tx, rx) = mpsc::channel();
        worker_loop(&q, &tx, &mut ConstantScorer(1.0));
        let ids: Vec<u64> = rx.try_iter().map(|r| r.clip_id).collect();
        assert_eq!(ids, vec![3, 4]);
        let s = counters.snapshot();
        assert_eq!(s.evicted, 3);
        assert!(s.conserved());
    }

    #[test]
    fn drain_fans_out_and_updates_cma_once() {
        let mut b = buffer(32);
        let (tx, rx) = mpsc::channel();
        let mut cma = CmaState::default();
        assert_eq!(drain_and_apply(&rx, &mut b, &mut cma), 0);
        assert_eq!(cma, CmaState::default());
        tx.send(ScoreResult {
            clip_id: 0,
            slots: (0..32).map(|i| b.slot(i)).collect(),
            score: 0.9,
        })
        .unwrap();
        assert_eq!(drain_and_apply(&rx, &mut b, &mut cma), 1);
        assert!((0..32).all(|i| b.record(i).semantic_score == Some(1.0)));
        assert_eq!(cma, CmaState { mean: 0.9, count: 1 });
    }

    #[test]
    fn lockstep_pipeline_scores_at_drain() {
        let mut b = buffer(4);
        let mut p = ScoringPipeline::new(ExecMode::Lockstep, Box::new(ConstantScorer(1.0)), 8);
        p.submit(ClipRequest {
            clip_id: 0,
            slots: (0..4).map(|i| b.slot(i)).collect(),
            frames: vec![frame(); 4],
        });
        assert_eq!(p.queue_depth(), 1);
        assert_eq!(p.drain_and_apply(&mut b), 1);
        assert_eq!(b.record(3).semantic_score, Some(1.0));
        let stats = p.shutdown(&mut b);
        assert_eq!(stats.applied, 1);
        assert!(stats.conserved());
    }

    #[test]
    fn async_pipeline_delivers_everything_by_shutdown() {
        let mut b = buffer(8);
        let mut p = ScoringPipeline::new(ExecMode::Async, Box::new(ConstantScorer(1.0)), 64);
        for i in 0..8 {
            p.submit(ClipRequest {
                clip_id: i,
                slots: vec![b.slot(i as usize)],
                frames: vec![frame()],
            });
        }
        p.drain_and_apply(&mut b);
        let stats = p.shutdown(&mut b);
        assert_eq!(stats.scored, 8);
        assert_eq!(stats.applied, 8);
        assert!((0..8).all(|i| b.record(i).semantic_score == Some(1.0)));
    }
}
