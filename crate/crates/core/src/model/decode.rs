use serde::{Deserialize, Serialize};

use super::{Model, ModelError};
use crate::cif::IntegratedSequence;
use crate::data::EOS;
use crate::numerics::{Graph, Tensor, Var};

/// A decoded sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Emitted tokens, without indicator or EOS.
    pub tokens: Vec<usize>,
    /// Sum of token log-probabilities, EOS included when emitted.
    pub score: f64,
    /// `false` when decoding stopped at the length limit.
    pub finished: bool,
}

impl Hypothesis {
    fn steps(&self) -> usize {
        self.tokens.len() + usize::from(self.finished)
    }

    /// Per-step average log-probability.
    pub fn normalized_score(&self) -> f64 {
        self.score / self.steps().max(1) as f64
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    logits.iter().map(|x| x - lse).collect()
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

/// Greedy decoding against any next-token scorer; `next` receives the prefix
/// including the start token and returns logits. At most `max_len` steps.
pub fn greedy_search(
    mut next: impl FnMut(&[usize]) -> Vec<f64>,
    start: usize,
    max_len: usize,
) -> Hypothesis {
    let mut prefix = vec![start];
    let mut score = 0.0;
    for _ in 0..max_len {
        let lp = log_softmax(&next(&prefix));
        let tok = argmax(&lp);
        score += lp[tok];
        if tok == EOS {
            return Hypothesis {
                tokens: prefix[1..].to_vec(),
                score,
                finished: true,
            };
        }
        prefix.push(tok);
    }
    Hypothesis {
        tokens: prefix[1..].to_vec(),
        score,
        finished: false,
    }
}

/// Beam search ranked by length-normalized log-probability.
///
/// Each step expands every live beam, keeps the `beam_size` best candidates
/// by cumulative score (ties to the earlier beam, then the lower token id),
/// and retires those ending in EOS. Search stops once `beam_size`
/// hypotheses have finished or after `max_len` steps.
pub fn beam_search(
    mut next: impl FnMut(&[usize]) -> Vec<f64>,
    start: usize,
    beam_size: usize,
    max_len: usize,
) -> Hypothesis {
    assert!(beam_size >= 1, "beam size must be at least 1");
    let mut alive: Vec<(Vec<usize>, f64)> = vec![(vec![start], 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (bi, (prefix, score)) in alive.iter().enumerate() {
            let lp = log_softmax(&next(prefix));
            candidates.extend(lp.iter().enumerate().map(|(tok, l)| (score + l, bi, tok)));
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut next_alive = Vec::new();
        for &(score, bi, tok) in candidates.iter().take(beam_size) {
            let prefix = &alive[bi].0;
            if tok == EOS {
                finished.push(Hypothesis {
                    tokens: prefix[1..].to_vec(),
                    score,
                    finished: true,
                });
            } else {
                let mut p = prefix.clone();
                p.push(tok);
                next_alive.push((p, score));
            }
        }
        alive = next_alive;
        if alive.is_empty() || finished.len() >= beam_size {
            break;
        }
    }
    finished.extend(alive.into_iter().map(|(p, score)| Hypothesis {
        tokens: p[1..].to_vec(),
        score,
        finished: false,
    }));
    let mut best = 0;
    for (i, h) in finished.iter().enumerate() {
        if h.normalized_score() > finished[best].normalized_score() {
            best = i;
        }
    }
    finished.swap_remove(best)
}

/// Inference graph with the model's parameters bound once as constants.
/// Each computation records onto the graph and is then truncated away.
pub struct Session<'m> {
    model: &'m Model,
    graph: Graph,
    params: Vec<Var>,
    base: usize,
}

impl<'m> Session<'m> {
    pub fn new(model: &'m Model) -> Self {
        let mut graph = Graph::new();
        let params = model.bind(&mut graph, false);
        let base = graph.len();
        Self {
            model,
            graph,
            params,
            base,
        }
    }

    pub fn semantic_encode(
        &mut self,
        integrated: &IntegratedSequence,
    ) -> Result<Tensor, ModelError> {
        if integrated.is_empty() {
            return Err(ModelError::EmptySource);
        }
        self.graph.truncate(self.base);
        let l = self.graph.constant(integrated.embeddings.clone());
        let h = self.model.semantic_graph(&mut self.graph, &self.params, l);
        Ok(self.graph.value(h).clone())
    }

    /// Logits for the token following `prefix` (which starts with the task
    /// indicator). A memory with zero rows means no source units.
    pub fn next_logits(&mut self, memory: &Tensor, prefix: &[usize]) -> Vec<f64> {
        self.graph.truncate(self.base);
        let m =
            (memory.rows() > 0 && memory.numel() > 0).then(|| self.graph.constant(memory.clone()));
        let logits = self
            .model
            .decoder_graph(&mut self.graph, &self.params, m, prefix);
        let t = self.graph.value(logits);
        t.row(t.rows() - 1).to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_softmax_normalizes() {
        let lp = log_softmax(&[1.0, 2.0, 3.0]);
        let total: f64 = lp.iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(log_softmax(&[1000.0, 0.0])[0], 0.0);
    }

    #[test]
    fn greedy_stops_at_eos_and_at_limit() {
        let h = greedy_search(
            |p| {
                if p.len() < 3 {
                    vec![0.0, 0.0, 0.0, 0.0, 5.0]
                } else {
                    vec![0.0, 9.0, 0.0, 0.0, 0.0]
                }
            },
            2,
            10,
        );
        assert_eq!(h.tokens, vec![4, 4]);
        assert!(h.finished);
        let h = greedy_search(|_| vec![0.0, 0.0, 0.0, 0.0, 5.0], 2, 3);
        assert_eq!(h.tokens, vec![4, 4, 4]);
        assert!(!h.finished);
    }
}
