//! Translation quality (corpus BLEU) and streaming latency (AL, AP, DAL).

mod bleu;
mod latency;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use bleu::corpus_bleu;
pub use latency::{
    average_lagging, average_proportion, differentiable_average_lagging, DelayVector,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{hypotheses} hypotheses but {references} references")]
    LengthMismatch {
        hypotheses: usize,
        references: usize,
    },
    #[error("malformed score row: {0}")]
    BadRow(String),
}

/// Corpus-level quality and latency for one policy configuration.
///
/// Latency values are means over utterances whose metric is defined (a
/// non-empty hypothesis); BLEU is computed on pooled corpus counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub bleu: f64,
    pub al: f64,
    pub ap: f64,
    pub dal: f64,
    pub n_utterances: usize,
}

impl LatencyReport {
    pub fn compute<H: AsRef<str>, R: AsRef<str>>(
        hypotheses: &[H],
        references: &[R],
        delays: &[DelayVector],
    ) -> Result<Self, MetricsError> {
        if delays.len() != hypotheses.len() {
            return Err(MetricsError::LengthMismatch {
                hypotheses: hypotheses.len(),
                references: delays.len(),
            });
        }
        let bleu = corpus_bleu(hypotheses, references)?;
        let mean = |f: fn(&DelayVector) -> Option<f64>| {
            let vals: Vec<f64> = delays.iter().filter_map(f).collect();
            if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        };
        Ok(Self {
            bleu,
            al: mean(average_lagging),
            ap: mean(average_proportion),
            dal: mean(differentiable_average_lagging),
            n_utterances: delays.len(),
        })
    }
}

/// One row of the plot-ready score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub policy: String,
    /// Lagging `k`; `None` prints as `inf`.
    pub k: Option<usize>,
    /// Read granularity; `None` prints as `-`.
    pub stride_ms: Option<u64>,
    pub report: LatencyReport,
}

pub const SCORE_HEADER: &str = "policy\tk\tstride_ms\tBLEU\tAL\tAP\tDAL";

impl ScoreRow {
    pub fn to_tsv(&self) -> String {
        let k = self.k.map_or("inf".to_string(), |k| k.to_string());
        let s = self.stride_ms.map_or("-".to_string(), |s| s.to_string());
        let r = &self.report;
        let mut out = String::new();
        write!(
            out,
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.6}\t{:.4}",
            self.policy, k, s, r.bleu, r.al, r.ap, r.dal
        )
        .unwrap();
        out
    }

    /// Parses a row; the utterance count is not part of the table and reads back as 0.
    pub fn parse_tsv(line: &str) -> Result<Self, MetricsError> {
        let bad = || MetricsError::BadRow(line.to_string());
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        Ok(Self {
            policy: f[0].to_string(),
            k: if f[1] == "inf" {
                None
            } else {
                Some(f[1].parse().map_err(|_| bad())?)
            },
            stride_ms: if f[2] == "-" {
                None
            } else {
                Some(f[2].parse().map_err(|_| bad())?)
            },
            report: LatencyReport {
                bleu: num(f[3])?,
                al: num(f[4])?,
                ap: num(f[5])?,
                dal: num(f[6])?,
                n_utterances: 0,
            },
        })
    }
}

/// Levenshtein distance between token sequences.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Position-wise token accuracy pooled over a corpus: matches at equal
/// positions divided by the longer of hypothesis and reference.
pub fn token_accuracy<T: PartialEq>(hypotheses: &[Vec<T>], references: &[Vec<T>]) -> f64 {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (h, r) in hypotheses.iter().zip(references) {
        correct += h.iter().zip(r).filter(|(a, b)| a == b).count();
        total += h.len().max(r.len());
    }
    if total == 0 {
        1.0
    } else {
        correct as f64 / total as f64
    }
}
