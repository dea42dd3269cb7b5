//! Streaming inference: READ/WRITE policies over a growing source prefix.
//!
//! A policy alternates between reading one stride of audio and writing one
//! target token. Written tokens are never revised. Latency is measured in
//! source milliseconds consumed at each WRITE.

mod log;
mod stream;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use log::{read_logs, write_logs, Action, DecisionLog, Event, LogFile, LogStatus};
pub use stream::{ModelStream, StreamModel, StreamSession};

use crate::data::{FrameSequence, EOS};
use crate::model::{greedy_search, log_softmax, Task};

/// Default READ granularity of the adaptive policy.
pub const DEFAULT_STRIDE_MS: u64 = 280;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("invalid policy config: {0}")]
    Config(String),
    #[error("segment starts at {got} ms but {expected} ms were consumed")]
    NotContiguous { expected: u64, got: u64 },
    #[error("segment frame duration {got} ms differs from the stream's {expected} ms")]
    FrameDuration { expected: u32, got: u32 },
    #[error("decision log {0:?} is unfinished")]
    UnfinishedLog(String),
    #[error("decision log line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("decision log: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    /// Fixed-stride wait-k.
    Prefix,
    /// Writes when the integrated source is `k` units ahead of the output.
    Adaptive,
    /// Reads everything, then writes.
    Offline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Lagging `k`; `None` waits for the whole source.
    pub k: Option<usize>,
    pub stride_ms: u64,
    #[serde(default = "default_task")]
    pub task: Task,
}

fn default_task() -> Task {
    Task::St
}

impl PolicyConfig {
    pub fn prefix(k: usize, stride_ms: u64) -> Self {
        Self {
            kind: PolicyKind::Prefix,
            k: Some(k),
            stride_ms,
            task: Task::St,
        }
    }

    pub fn adaptive(k: usize, stride_ms: u64) -> Self {
        Self {
            kind: PolicyKind::Adaptive,
            k: Some(k),
            stride_ms,
            task: Task::St,
        }
    }

    pub fn offline() -> Self {
        Self {
            kind: PolicyKind::Offline,
            k: None,
            stride_ms: DEFAULT_STRIDE_MS,
            task: Task::St,
        }
    }

    pub fn validate(&self, frame_ms: u32) -> Result<(), PolicyError> {
        if self.kind == PolicyKind::Offline {
            return Ok(());
        }
        if self.k == Some(0) {
            return Err(PolicyError::Config("k must be at least 1".into()));
        }
        if frame_ms == 0 || self.stride_ms == 0 || !self.stride_ms.is_multiple_of(u64::from(frame_ms)) {
            return Err(PolicyError::Config(format!(
                "stride {} ms must be a positive multiple of the {frame_ms} ms frame",
                self.stride_ms
            )));
        }
        Ok(())
    }
}

/// Progress of one streamed utterance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StreamingState {
    pub consumed_ms: u64,
    pub consumed_frames: usize,
    /// `|l_u|` after the last update.
    pub integrated_len: usize,
    /// Tokens written so far, EOS excluded.
    pub emitted: Vec<usize>,
    pub finished_source: bool,
}

/// A contiguous piece of source audio.
#[derive(Debug, Clone, Copy)]
pub struct Segment<'a> {
    pub start_ms: u64,
    pub frames: &'a FrameSequence,
    /// Whether the source ends with this segment.
    pub last: bool,
}

/// Feeds `segment` to the session and advances `state`. Earlier acoustic
/// states are never recomputed. An empty, non-final segment is a no-op.
pub fn incremental_update<S: StreamSession>(
    state: &mut StreamingState,
    session: &mut S,
    frame_ms: u32,
    segment: Segment<'_>,
) -> Result<(), PolicyError> {
    if segment.start_ms != state.consumed_ms {
        return Err(PolicyError::NotContiguous {
            expected: state.consumed_ms,
            got: segment.start_ms,
        });
    }
    if segment.frames.frame_ms != frame_ms {
        return Err(PolicyError::FrameDuration {
            expected: frame_ms,
            got: segment.frames.frame_ms,
        });
    }
    if state.finished_source {
        return if segment.frames.is_empty() {
            Ok(())
        } else {
            Err(PolicyError::Config("source already finished".into()))
        };
    }
    if !segment.frames.is_empty() {
        session.push(&segment.frames.frames);
        state.consumed_frames += segment.frames.len();
        state.consumed_ms += segment.frames.duration_ms();
    }
    if segment.last {
        session.finish();
        state.finished_source = true;
    }
    state.integrated_len = session.integrated_len();
    Ok(())
}

struct Run<'s, S> {
    session: S,
    source: &'s FrameSequence,
    frames_per_read: usize,
    state: StreamingState,
    log: DecisionLog,
    indicator: usize,
    max_len: usize,
}

impl<'s, S: StreamSession> Run<'s, S> {
    fn new<M: StreamModel<Session<'s> = S>>(
        model: &'s M,
        source: &'s FrameSequence,
        cfg: &PolicyConfig,
    ) -> Result<Self, PolicyError> {
        cfg.validate(source.frame_ms)?;
        let frames_per_read = match cfg.kind {
            PolicyKind::Offline => source.len().max(1),
            _ => (cfg.stride_ms / u64::from(source.frame_ms)) as usize,
        };
        let mut run = Self {
            session: model.open(source.frame_ms),
            source,
            frames_per_read,
            state: StreamingState::default(),
            log: DecisionLog::new(source.duration_ms()),
            indicator: cfg.task.indicator(),
            max_len: model.max_len(),
        };
        if source.is_empty() {
            run.session.finish();
            run.state.finished_source = true;
        }
        Ok(run)
    }

    fn read(&mut self) {
        let start = self.state.consumed_frames;
        let end = (start + self.frames_per_read).min(self.source.len());
        let piece = self.source.slice(start, end);
        let segment = Segment {
            start_ms: self.state.consumed_ms,
            frames: &piece,
            last: end == self.source.len(),
        };
        incremental_update(
            &mut self.state,
            &mut self.session,
            self.source.frame_ms,
            segment,
        )
        .expect("reads are contiguous");
        self.log.read(self.state.consumed_ms);
    }

    /// Predicts the next token. Returns `None` (and writes nothing) when EOS
    /// comes before the source is exhausted.
    fn write(&mut self) -> Option<usize> {
        let mut prefix = Vec::with_capacity(self.state.emitted.len() + 1);
        prefix.push(self.indicator);
        prefix.extend_from_slice(&self.state.emitted);
        let tok = argmax(&log_softmax(&self.session.next_logits(&prefix)));
        if tok == EOS && !self.state.finished_source {
            return None;
        }
        self.log.write(self.state.consumed_ms, tok);
        if tok == EOS {
            self.log.status = LogStatus::Complete;
        } else {
            self.state.emitted.push(tok);
        }
        Some(tok)
    }

    fn done(&mut self) -> bool {
        if self.log.status != LogStatus::Open {
            return true;
        }
        if self.state.emitted.len() >= self.max_len {
            self.log.status = LogStatus::Truncated;
            return true;
        }
        false
    }

    fn finish(self) -> (Vec<usize>, DecisionLog) {
        (self.state.emitted, self.log)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Fixed-stride prefix decision: read `k` strides, then alternate one WRITE
/// and one READ; once the source is exhausted, write until EOS.
pub fn run_prefix_policy<'s, M: StreamModel>(
    model: &'s M,
    source: &'s FrameSequence,
    cfg: &PolicyConfig,
) -> Result<(Vec<usize>, DecisionLog), PolicyError> {
    if cfg.kind != PolicyKind::Prefix {
        return Err(PolicyError::Config(format!(
            "expected a prefix config, got {:?}",
            cfg.kind
        )));
    }
    let mut run = Run::new(model, source, cfg)?;
    let mut reads = 0usize;
    while !run.done() {
        let due = cfg.k.map_or(usize::MAX, |k| k + run.state.emitted.len());
        if (!run.state.finished_source && reads < due) || run.write().is_none() {
            run.read();
            reads += 1;
        }
    }
    Ok(run.finish())
}

/// Incremental encoding-decoding: write whenever the integrated source is at
/// least `k` units ahead of the output (or the source is exhausted), else
/// read one stride.
pub fn run_adaptive_policy<'s, M: StreamModel>(
    model: &'s M,
    source: &'s FrameSequence,
    cfg: &PolicyConfig,
) -> Result<(Vec<usize>, DecisionLog), PolicyError> {
    if cfg.kind != PolicyKind::Adaptive {
        return Err(PolicyError::Config(format!(
            "expected an adaptive config, got {:?}",
            cfg.kind
        )));
    }
    let mut run = Run::new(model, source, cfg)?;
    while !run.done() {
        let ahead = cfg
            .k
            .is_some_and(|k| run.state.integrated_len >= run.state.emitted.len() + k);
        if run.state.finished_source || ahead {
            if run.write().is_none() {
                run.read();
            }
        } else {
            run.read();
        }
    }
    Ok(run.finish())
}

/// Reads the whole source, then writes greedily.
pub fn run_offline_policy<'s, M: StreamModel>(
    model: &'s M,
    source: &'s FrameSequence,
) -> (Vec<usize>, DecisionLog) {
    let mut run =
        Run::new(model, source, &PolicyConfig::offline()).expect("offline config is valid");
    if !run.state.finished_source {
        run.read();
    }
    let mut log = std::mem::replace(&mut run.log, DecisionLog::new(0));
    let consumed = run.state.consumed_ms;
    let hyp = greedy_search(
        |prefix| run.session.next_logits(prefix),
        run.indicator,
        run.max_len,
    );
    for &t in &hyp.tokens {
        log.write(consumed, t);
    }
    if hyp.finished {
        log.write(consumed, EOS);
        log.status = LogStatus::Complete;
    } else {
        log.status = LogStatus::Truncated;
    }
    (hyp.tokens, log)
}

/// Dispatches on `cfg.kind`.
pub fn run_policy<'s, M: StreamModel>(
    model: &'s M,
    source: &'s FrameSequence,
    cfg: &PolicyConfig,
) -> Result<(Vec<usize>, DecisionLog), PolicyError> {
    match cfg.kind {
        PolicyKind::Prefix => run_prefix_policy(model, source, cfg),
        PolicyKind::Adaptive => run_adaptive_policy(model, source, cfg),
        PolicyKind::Offline => Ok(run_offline_policy(model, source)),
    }
}
