use std::collections::HashMap;

use super::MetricsError;

const MAX_ORDER: usize = 4;

/// Corpus-level BLEU-4 (0 to 100) over whitespace-tokenized, case-sensitive text.
///
/// Counts are pooled over the corpus before precisions are taken. An n-gram
/// order with no matches gets the exponential ("exp") smoothing precision
/// `1 / (2^k · total_n)`, `k` counting such orders so far; a corpus with no
/// matching n-grams at all scores 0.
pub fn corpus_bleu<H: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[H],
    references: &[R],
) -> Result<f64, MetricsError> {
    if hypotheses.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    if hypotheses.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    let mut correct = [0usize; MAX_ORDER];
    let mut total = [0usize; MAX_ORDER];
    let (mut sys_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        let h: Vec<&str> = h.as_ref().split_whitespace().collect();
        let r: Vec<&str> = r.as_ref().split_whitespace().collect();
        sys_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let hc = ngram_counts(&h, n);
            let rc = ngram_counts(&r, n);
            total[n - 1] += h.len().saturating_sub(n - 1);
            correct[n - 1] += hc
                .iter()
                .map(|(g, c)| (*c).min(*rc.get(g).unwrap_or(&0)))
                .sum::<usize>();
        }
    }
    Ok(bleu_from_counts(&correct, &total, sys_len, ref_len))
}

fn ngram_counts<'a, 'b>(tokens: &'b [&'a str], n: usize) -> HashMap<&'b [&'a str], usize> {
    let mut map = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *map.entry(w).or_insert(0) += 1;
        }
    }
    map
}

fn bleu_from_counts(
    correct: &[usize; MAX_ORDER],
    total: &[usize; MAX_ORDER],
    sys_len: usize,
    ref_len: usize,
) -> f64 {
    let bp = if sys_len < ref_len {
        if sys_len == 0 {
            0.0
        } else {
            (1.0 - ref_len as f64 / sys_len as f64).exp()
        }
    } else {
        1.0
    };
    if correct.iter().all(|&c| c == 0) {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut smooth = 1.0;
    for n in 0..MAX_ORDER {
        if total[n] == 0 {
            // no n-grams of this order at all: precision is zero
            return 0.0;
        }
        let p = if correct[n] == 0 {
            smooth *= 2.0;
            100.0 / (smooth * total[n] as f64)
        } else {
            100.0 * correct[n] as f64 / total[n] as f64
        };
        log_sum += p.ln();
    }
    bp * (log_sum / MAX_ORDER as f64).exp()
}
