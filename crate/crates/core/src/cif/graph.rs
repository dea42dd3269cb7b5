//! Differentiable CIF on the autodiff tape.

use std::ops::Range;

use super::{fire_segments, CifError};
use crate::numerics::{Graph, Var};

/// Per-frame weights `sigmoid(h[:, d−1])` as a length-`T` vector node.
pub fn weights(g: &mut Graph, states: Var) -> Var {
    let shape = g.shape(states).to_vec();
    let (t, d) = (shape[0], shape[1]);
    let logit = g.slice_cols(states, d - 1, d);
    let logit = g.reshape(logit, &[t]);
    g.sigmoid(logit)
}

/// Content channels `h[:, 0..d−1]`.
pub fn content(g: &mut Graph, states: Var) -> Var {
    let d = g.shape(states)[1];
    g.slice_cols(states, 0, d - 1)
}

/// `(α′, n̂)` with `α′ = α · n*/n̂`, differentiable through `n̂`.
pub fn scale(g: &mut Graph, alpha: Var, n_star: usize) -> Result<(Var, Var), CifError> {
    if n_star == 0 {
        return Err(CifError::ZeroTarget);
    }
    let n_hat = g.sum(alpha);
    if g.value(n_hat).item() <= 0.0 {
        return Err(CifError::Degenerate);
    }
    let inv = g.reciprocal(n_hat);
    let factor = g.scale(inv, n_star as f64);
    Ok((g.scale_by(alpha, factor), n_hat))
}

/// `|n* − n̂|` as a scalar node.
pub fn quantity_loss(g: &mut Graph, n_hat: Var, n_star: usize) -> Var {
    let target = g.constant(crate::numerics::Tensor::scalar(n_star as f64));
    let diff = g.sub(n_hat, target);
    g.abs(diff)
}

/// Integrated embeddings `l_u = Σ_{t∈S_u} w_t · content_t` for segments found
/// by walking the current values of `effective` (a flushed walk).
pub fn integrate(g: &mut Graph, content: Var, effective: Var) -> (Var, Vec<Range<usize>>) {
    let firing = fire_segments(g.value(effective).data(), true);
    let l = g.segment_sum(content, effective, &firing.segments);
    (l, firing.segments)
}
