//! Client side of the out-of-process scorer protocol.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use super::wire::{Frame, Record};
use super::{ScoreError, Scorer};
use crate::scoring::ClipRequest;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DROP_GRACE: Duration = Duration::from_secs(2);
pub const DEFAULT_PROMPT: &str = "Does this clip contain a clear instance of goal satisfaction \
anywhere in it? If no visible success occurs, answer No. Do not guess. Output exactly \
Answer: Yes or Answer: No.";

/// One connection, one request in flight. Lines are read on a helper thread
/// so that a silent service surfaces as [`ScoreError::Timeout`].
pub struct ExternalScorer {
    writer: Box<dyn Write + Send>,
    lines: Receiver<io::Result<String>>,
    timeout: Duration,
    prompt: String,
    // Responses still owed for requests that timed out; discarded on arrival.
    abandoned: HashMap<u64, usize>,
    child: Option<Child>,
    closed: bool,
}

impl ExternalScorer {
    pub fn from_streams<R, W>(reader: R, writer: W) -> Self
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        thread::Builder::new()
            .name("scorer-reader".into())
            .spawn(move || {
                let mut reader = BufReader::new(reader);
                loop {
                    let mut line = String::new();
                    match reader.read_line(&mut line) {
                        Ok(0) => break,
                        Ok(_) => {
                            if tx.send(Ok(line)).is_err() {
                                break;
                            }
                        }
                        Err(e) => {
                            let _ = tx.send(Err(e));
                            break;
                        }
                    }
                }
            })
            .expect("spawn reader thread");
        ExternalScorer {
            writer: Box::new(writer),
            lines: rx,
            timeout: DEFAULT_TIMEOUT,
            prompt: DEFAULT_PROMPT.to_string(),
            abandoned: HashMap::new(),
            child: None,
            closed: false,
        }
    }

    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        Ok(Self::from_streams(reader, stream))
    }

    /// Spawns `program` and talks to it over its stdin/stdout.
    pub fn spawn(program: &str, args: &[String]) -> io::Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut scorer = Self::from_streams(stdout, stdin);
        scorer.child = Some(child);
        Ok(scorer)
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.prompt = prompt.into();
        self
    }

    fn send(&mut self, record: &Record) -> Result<(), ScoreError> {
        self.writer
            .write_all(record.to_line().as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| ScoreError::ConnectionLost(e.to_string()))
    }

    fn recv(&mut self, deadline: Instant) -> Result<Record, ScoreError> {
        let remaining = deadline.saturating_duration_since(Instant::now());
        match self.lines.recv_timeout(remaining) {
            Ok(Ok(line)) => {
                Record::parse(&line).map_err(|e| ScoreError::ProtocolViolation(format!("unparseable record: {e}")))
            }
            Ok(Err(e)) => Err(ScoreError::ConnectionLost(e.to_string())),
            Err(RecvTimeoutError::Timeout) => Err(ScoreError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(ScoreError::ConnectionLost("stream closed".into())),
        }
    }

    /// Sends the shutdown record and waits for `bye`.
    pub fn shutdown(&mut self) -> Result<(), ScoreError> {
        if self.closed {
            return Ok(());
        }
        self.closed = true;
        self.send(&Record::Shutdown)?;
        let deadline = Instant::now() + self.timeout;
        loop {
            match self.recv(deadline)? {
                Record::Bye => break,
                Record::ScoreResponse { clip_id, .. } if self.take_abandoned(clip_id) => {}
                other => return Err(ScoreError::ProtocolViolation(format!("expected bye, got {other:?}"))),
            }
        }
        if let Some(child) = self.child.as_mut() {
            let _ = child.wait();
        }
        Ok(())
    }

    fn take_abandoned(&mut self, clip_id: u64) -> bool {
        match self.abandoned.get_mut(&clip_id) {
            Some(n) => {
                *n -= 1;
                if *n == 0 {
                    self.abandoned.remove(&clip_id);
                }
                true
            }
            None => false,
        }
    }
}

impl Scorer for ExternalScorer {
    fn score(&mut self, clip: &ClipRequest) -> Result<f64, ScoreError> {
        let request = Record::ScoreRequest {
            clip_id: clip.clip_id,
            prompt: self.prompt.clone(),
            frames: clip.frames.iter().map(|f| Frame::from_payload(f)).collect(),
        };
        self.send(&request)?;
        let deadline = Instant::now() + self.timeout;
        loop {
            let record = match self.recv(deadline) {
                Err(ScoreError::Timeout(d)) => {
                    *self.abandoned.entry(clip.clip_id).or_insert(0) += 1;
                    return Err(ScoreError::Timeout(d));
                }
                other => other?,
            };
            match record {
                Record::ScoreResponse { clip_id, score } if clip_id == clip.clip_id => {
                    if !(0.0..=1.0).contains(&score) {
                        return Err(ScoreError::ProtocolViolation(format!("score {score} outside [0, 1]")));
                    }
                    return Ok(score);
                }
                Record::ScoreResponse { clip_id, .. } if self.take_abandoned(clip_id) => continue,
                Record::ScoreResponse { clip_id, .. } => {
                    return Err(ScoreError::ProtocolViolation(format!(
                        "response echoes clip {clip_id}, expected {}",
                        clip.clip_id
                    )))
                }
                other => return Err(ScoreError::ProtocolViolation(format!("unexpected record {other:?}"))),
            }
        }
    }

    fn name(&self) -> &str {
        "external"
    }
}

/// Attempts the shutdown handshake (bounded by [`DROP_GRACE`]) and kills a
/// spawned service that has not exited by then.
impl Drop for ExternalScorer {
    fn drop(&mut self) {
        self.timeout = self.timeout.min(DROP_GRACE);
        if let Err(e) = self.shutdown() {
            log::debug!("external scorer shutdown on drop: {e}");
        }
        if let Some(mut child) = self.child.take() {
            if !matches!(child.try_wait(), Ok(Some(_))) {
                let _ = child.kill();
                let _ = child.wait();
            }
        }
    }
}
