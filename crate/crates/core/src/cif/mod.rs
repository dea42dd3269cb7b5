//! Continuous integrate-and-fire (CIF).
//!
//! CIF turns frame-rate acoustic states into token-rate embeddings. The last
//! channel of each state is a weight logit; the remaining channels carry the
//! content that gets integrated. A running accumulator sums the per-frame
//! weights and fires once per unit of accumulated mass, closing a segment of
//! whole frames each time.
//!
//! Frames are never split at a firing boundary: every frame contributes its
//! full weight to the segment it belongs to, and the accumulator keeps the
//! remainder above the threshold for the next segment.
//!
//! The plain functions here operate on concrete values. [`graph`] holds the
//! differentiable counterparts used during training.

pub mod graph;
mod walk;

use std::ops::Range;

use crate::numerics::Tensor;

pub use walk::{fire_segments, Accumulator, Firing, FIRE_THRESHOLD, FIRE_TOLERANCE};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CifError {
    #[error("acoustic states need at least one frame and two channels, got shape {0:?}")]
    BadStates(Vec<usize>),
    #[error("weights sum to zero; no alignment is possible")]
    Degenerate,
    #[error("target unit count must be at least 1")]
    ZeroTarget,
    #[error("expected {expected} weights, got {got}")]
    WeightCount { expected: usize, got: usize },
}

/// Encoder output: `T × d` states where channel `d − 1` holds the weight logit.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticStates {
    values: Tensor,
    /// Duration covered by one state row, in milliseconds.
    pub frame_ms: f64,
}

impl AcousticStates {
    pub fn new(values: Tensor, frame_ms: f64) -> Result<Self, CifError> {
        let shape = values.shape();
        if shape.len() != 2 || shape[0] < 1 || shape[1] < 2 {
            return Err(CifError::BadStates(shape.to_vec()));
        }
        Ok(Self { values, frame_ms })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[1]
    }

    /// Channels `0..d−1` of row `t`.
    pub fn content(&self, t: usize) -> &[f64] {
        let row = self.values.row(t);
        &row[..row.len() - 1]
    }

    pub fn logit(&self, t: usize) -> f64 {
        let row = self.values.row(t);
        row[row.len() - 1]
    }
}

/// Result of integrating one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FiringSchedule {
    /// Raw per-frame weights `α`.
    pub weights: Vec<f64>,
    /// The weights the walk actually integrated (scaled in training, rescaled
    /// for inference, raw online).
    pub scaled_weights: Vec<f64>,
    /// `Σα`, the predicted unit count.
    pub n_hat: f64,
    /// Frame range of each fired unit; an empty range marks a repeat fire on
    /// a frame whose weight alone crossed the threshold more than once.
    pub segments: Vec<Range<usize>>,
    /// Frame on which each unit fired.
    pub fire_frames: Vec<usize>,
}

impl FiringSchedule {
    pub fn fired_count(&self) -> usize {
        self.segments.len()
    }
}

/// Integrated token-rate embeddings, `U × (d − 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratedSequence {
    pub embeddings: Tensor,
}

impl IntegratedSequence {
    pub fn len(&self) -> usize {
        self.embeddings.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `α_t = sigmoid(h[t, d−1])`.
pub fn compute_weights(states: &AcousticStates) -> Vec<f64> {
    (0..states.frames())
        .map(|t| sigmoid(states.logit(t)))
        .collect()
}

/// Training-time scaling `α′ = (n*/n̂)·α` with `n̂ = Σα`; returns `(α′, n̂)`.
pub fn scale_weights(weights: &[f64], n_star: usize) -> Result<(Vec<f64>, f64), CifError> {
    if n_star == 0 {
        return Err(CifError::ZeroTarget);
    }
    let n_hat: f64 = weights.iter().sum();
    if n_hat <= 0.0 {
        return Err(CifError::Degenerate);
    }
    let factor = n_star as f64 / n_hat;
    Ok((weights.iter().map(|a| a * factor).collect(), n_hat))
}

/// Inference-time rescale `α_eff = (round(n̂)/n̂)·α`, so the walk fires
/// exactly `round(n̂)` times. A zero-mass or sub-half input yields all zeros.
pub fn inference_rescale(weights: &[f64]) -> Vec<f64> {
    let n_hat: f64 = weights.iter().sum();
    let target = n_hat.round();
    if n_hat <= 0.0 || target == 0.0 {
        return vec![0.0; weights.len()];
    }
    let factor = target / n_hat;
    weights.iter().map(|a| a * factor).collect()
}

/// `|n* − n̂|`.
pub fn quantity_loss(n_hat: f64, n_star: usize) -> f64 {
    (n_star as f64 - n_hat).abs()
}

/// `∂|n* − n̂| / ∂n̂`, with subgradient 0 at the kink.
pub fn quantity_loss_grad(n_hat: f64, n_star: usize) -> f64 {
    let diff = n_hat - n_star as f64;
    if diff > 0.0 {
        1.0
    } else if diff < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Runs the integrate-and-fire walk over `effective` weights. Mass left below
/// the threshold after the last frame does not fire.
pub fn integrate_and_fire(
    states: &AcousticStates,
    effective: &[f64],
) -> Result<(IntegratedSequence, FiringSchedule), CifError> {
    integrate_impl(states, effective, false)
}

/// Like [`integrate_and_fire`] for a finished utterance: a trailing residue of
/// at least one half fires a final unit.
pub fn integrate_and_fire_final(
    states: &AcousticStates,
    effective: &[f64],
) -> Result<(IntegratedSequence, FiringSchedule), CifError> {
    integrate_impl(states, effective, true)
}

fn integrate_impl(
    states: &AcousticStates,
    effective: &[f64],
    flush: bool,
) -> Result<(IntegratedSequence, FiringSchedule), CifError> {
    let t = states.frames();
    if effective.len() != t {
        return Err(CifError::WeightCount {
            expected: t,
            got: effective.len(),
        });
    }
    let firing = fire_segments(effective, flush);
    let width = states.dim() - 1;
    let mut data = vec![0.0; firing.segments.len() * width];
    for (u, seg) in firing.segments.iter().enumerate() {
        let dst = &mut data[u * width..(u + 1) * width];
        for f in seg.clone() {
            for (d, h) in dst.iter_mut().zip(states.content(f)) {
                *d += effective[f] * h;
            }
        }
    }
    let weights = compute_weights(states);
    let n_hat = weights.iter().sum();
    let schedule = FiringSchedule {
        weights,
        scaled_weights: effective.to_vec(),
        n_hat,
        segments: firing.segments,
        fire_frames: firing.fire_frames,
    };
    let embeddings = Tensor::new(vec![schedule.fired_count(), width], data);
    Ok((IntegratedSequence { embeddings }, schedule))
}

/// Maps integrated embeddings to model width: `l · W` with `W` of shape
/// `(d − 1) × d_model`.
pub fn project(l: &IntegratedSequence, w: &Tensor) -> Tensor {
    let (rows_w, d_model) = (w.shape()[0], w.shape()[1]);
    let width = l.embeddings.shape()[1];
    assert_eq!(
        width, rows_w,
        "projection expects {width} input rows, got {rows_w}"
    );
    let u = l.len();
    let mut out = vec![0.0; u * d_model];
    for i in 0..u {
        let src = l.embeddings.row(i);
        let dst = &mut out[i * d_model..(i + 1) * d_model];
        for (k, s) in src.iter().enumerate() {
            for (d, wv) in dst.iter_mut().zip(w.row(k)) {
                *d += s * wv;
            }
        }
    }
    Tensor::new(vec![u, d_model], out)
}
