//! Computation-unaware latency metrics over per-token source delays.
//!
//! Delays are milliseconds of source audio consumed when each target token was
//! written. The rate term is `source_ms / ref_len`, using the reference length.

use serde::{Deserialize, Serialize};

/// Per-utterance delays, as recovered from a decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayVector {
    /// `d_i` for each emitted (non-EOS) token.
    pub delays: Vec<f64>,
    /// Total source duration `D`.
    pub source_ms: f64,
    /// Reference token count `|Y*|`.
    pub ref_len: usize,
}

impl DelayVector {
    pub fn new(delays: Vec<f64>, source_ms: f64, ref_len: usize) -> Self {
        Self {
            delays,
            source_ms,
            ref_len,
        }
    }

    pub fn hyp_len(&self) -> usize {
        self.delays.len()
    }

    fn rate(&self) -> Option<f64> {
        (self.ref_len > 0 && self.source_ms > 0.0).then(|| self.source_ms / self.ref_len as f64)
    }

    /// Index (1-based) of the first token written after the whole source was
    /// read, or the hypothesis length when none was.
    pub fn tau(&self) -> usize {
        self.delays
            .iter()
            .position(|&d| d == self.source_ms)
            .map_or(self.delays.len(), |i| i + 1)
    }
}

/// `Σ d_i / (D · |Y|)`; `None` for an empty hypothesis.
pub fn average_proportion(v: &DelayVector) -> Option<f64> {
    if v.delays.is_empty() || v.source_ms <= 0.0 {
        return None;
    }
    Some(v.delays.iter().sum::<f64>() / (v.source_ms * v.delays.len() as f64))
}

/// `(1/τ) Σ_{i≤τ} (d_i − (i−1)·r)`.
pub fn average_lagging(v: &DelayVector) -> Option<f64> {
    if v.delays.is_empty() {
        return None;
    }
    let r = v.rate()?;
    let tau = v.tau();
    let total: f64 = v.delays[..tau]
        .iter()
        .enumerate()
        .map(|(i, d)| d - i as f64 * r)
        .sum();
    Some(total / tau as f64)
}

/// `(1/|Y|) Σ_i (g′_i − (i−1)·r)` with `g′_1 = d_1`, `g′_i = max(d_i, g′_{i−1} + r)`.
pub fn differentiable_average_lagging(v: &DelayVector) -> Option<f64> {
    if v.delays.is_empty() {
        return None;
    }
    let r = v.rate()?;
    let mut prev = f64::NEG_INFINITY;
    let mut total = 0.0;
    for (i, &d) in v.delays.iter().enumerate() {
        let g = if i == 0 { d } else { d.max(prev + r) };
        total += g - i as f64 * r;
        prev = g;
    }
    Some(total / v.delays.len() as f64)
}
