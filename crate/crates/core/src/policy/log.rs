//! Decision-log records.
//!
//! ```text
//! # config {"kind":"prefix","k":5,"stride_ms":400,"task":"st"}
//! # run {...}                       (optional, free-form JSON)
//! #utt	<id>	<total_ms>	<reference>
//! READ	400
//! WRITE	2000	17
//! #end	complete
//! ```

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{PolicyConfig, PolicyError};
use crate::data::EOS;
use crate::metrics::DelayVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Read,
    /// Token id; EOS included.
    Write(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub action: Action,
    /// Source audio consumed when the event happened.
    pub consumed_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogStatus {
    Open,
    /// Ended by a WRITE of EOS.
    Complete,
    /// Cut at the length limit.
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionLog {
    pub utt_id: String,
    pub total_ms: u64,
    pub reference: String,
    pub events: Vec<Event>,
    pub status: LogStatus,
}

impl DecisionLog {
    pub fn new(total_ms: u64) -> Self {
        Self {
            utt_id: String::new(),
            total_ms,
            reference: String::new(),
            events: Vec::new(),
            status: LogStatus::Open,
        }
    }

    pub fn with_source(mut self, utt_id: impl Into<String>, reference: impl Into<String>) -> Self {
        self.utt_id = utt_id.into();
        self.reference = reference.into();
        self
    }

    pub fn read(&mut self, consumed_ms: u64) {
        self.events.push(Event {
            action: Action::Read,
            consumed_ms,
        });
    }

    pub fn write(&mut self, consumed_ms: u64, token: usize) {
        self.events.push(Event {
            action: Action::Write(token),
            consumed_ms,
        });
    }

    /// Written tokens, EOS excluded.
    pub fn tokens(&self) -> Vec<usize> {
        self.writes().map(|(_, t)| t).collect()
    }

    /// `d_i` for every written non-EOS token.
    pub fn delays(&self) -> Vec<u64> {
        self.writes().map(|(d, _)| d).collect()
    }

    pub fn delay_vector(&self, ref_len: usize) -> DelayVector {
        DelayVector::new(
            self.delays().into_iter().map(|d| d as f64).collect(),
            self.total_ms as f64,
            ref_len,
        )
    }

    fn writes(&self) -> impl Iterator<Item = (u64, usize)> + '_ {
        self.events.iter().filter_map(|e| match e.action {
            Action::Write(t) if t != EOS => Some((e.consumed_ms, t)),
            _ => None,
        })
    }

    /// Serializes one record. Open logs and fields holding tabs or newlines
    /// are rejected.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), PolicyError> {
        if self.status == LogStatus::Open {
            return Err(PolicyError::UnfinishedLog(self.utt_id.clone()));
        }
        for field in [&self.utt_id, &self.reference] {
            if field.contains(['\t', '\n', '\r']) {
                return Err(PolicyError::Format(format!(
                    "field {field:?} contains a tab or newline"
                )));
            }
        }
        let io = |e: std::io::Error| PolicyError::Format(e.to_string());
        writeln!(
            w,
            "#utt\t{}\t{}\t{}",
            self.utt_id, self.total_ms, self.reference
        )
        .map_err(io)?;
        for e in &self.events {
            match e.action {
                Action::Read => writeln!(w, "READ\t{}", e.consumed_ms),
                Action::Write(t) => writeln!(w, "WRITE\t{}\t{t}", e.consumed_ms),
            }
            .map_err(io)?;
        }
        let end = if self.status == LogStatus::Complete {
            "complete"
        } else {
            "truncated"
        };
        writeln!(w, "#end\t{end}").map_err(io)
    }
}

/// A parsed decision-log file.
#[derive(Debug, Clone, PartialEq)]
pub struct LogFile {
    pub config: PolicyConfig,
    pub run: Option<serde_json::Value>,
    pub logs: Vec<DecisionLog>,
}

/// Writes the config header, optional run metadata, then every record.
pub fn write_logs<W: Write>(
    mut w: W,
    config: &PolicyConfig,
    run: Option<&serde_json::Value>,
    logs: &[DecisionLog],
) -> Result<(), PolicyError> {
    let io = |e: std::io::Error| PolicyError::Format(e.to_string());
    let json = serde_json::to_string(config).expect("config serializes");
    writeln!(w, "# config {json}").map_err(io)?;
    if let Some(run) = run {
        writeln!(
            w,
            "# run {}",
            serde_json::to_string(run).expect("json value serializes")
        )
        .map_err(io)?;
    }
    for log in logs {
        log.write_to(&mut w)?;
    }
    w.flush().map_err(|e| PolicyError::Format(e.to_string()))
}

/// Parses the output of [`write_logs`].
pub fn read_logs<R: BufRead>(r: R) -> Result<LogFile, PolicyError> {
    let bad = |line: usize, message: &str| PolicyError::Parse {
        line,
        message: message.to_string(),
    };
    let mut config = None;
    let mut run = None;
    let mut logs = Vec::new();
    let mut current: Option<DecisionLog> = None;
    for (i, line) in r.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| bad(n, &e.to_string()))?;
        if let Some(json) = line.strip_prefix("# config ") {
            if config.is_some() || n != 1 {
                return Err(bad(n, "config header must be the first line"));
            }
            config = Some(serde_json::from_str(json).map_err(|e| bad(n, &e.to_string()))?);
            continue;
        }
        if let Some(json) = line.strip_prefix("# run ") {
            if config.is_none() || run.is_some() || !logs.is_empty() || current.is_some() {
                return Err(bad(n, "run metadata must follow the config header"));
            }
            run = Some(serde_json::from_str(json).map_err(|e| bad(n, &e.to_string()))?);
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match fields.as_slice() {
            ["#utt", id, total, reference] => {
                if current.is_some() {
                    return Err(bad(n, "record started before the previous one ended"));
                }
                let total = total.parse().map_err(|_| bad(n, "bad total_ms"))?;
                current = Some(DecisionLog::new(total).with_source(*id, *reference));
            }
            ["READ", ms] => {
                let log = current
                    .as_mut()
                    .ok_or_else(|| bad(n, "event outside a record"))?;
                log.read(ms.parse().map_err(|_| bad(n, "bad consumed_ms"))?);
            }
            ["WRITE", ms, tok] => {
                let log = current
                    .as_mut()
                    .ok_or_else(|| bad(n, "event outside a record"))?;
                let ms = ms.parse().map_err(|_| bad(n, "bad consumed_ms"))?;
                log.write(ms, tok.parse().map_err(|_| bad(n, "bad token id"))?);
            }
            ["#end", status] => {
                let mut log = current
                    .take()
                    .ok_or_else(|| bad(n, "#end outside a record"))?;
                log.status = match *status {
                    "complete" => LogStatus::Complete,
                    "truncated" => LogStatus::Truncated,
                    _ => return Err(bad(n, "status must be complete or truncated")),
                };
                logs.push(log);
            }
            _ => return Err(bad(n, "unrecognized line")),
        }
    }
    if current.is_some() {
        return Err(PolicyError::UnfinishedLog(
            current.map(|l| l.utt_id).unwrap_or_default(),
        ));
    }
    let config = config.ok_or_else(|| bad(0, "missing config header"))?;
    Ok(LogFile { config, run, logs })
}
