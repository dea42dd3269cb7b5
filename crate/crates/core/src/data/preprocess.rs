/// Sequences longer than this many tokens are dropped.
pub const MAX_TOKENS: usize = 250;

/// Maps 16-bit PCM samples to `[-1, 1)` by dividing by 2^15.
pub fn normalize_waveform(raw: &[i16]) -> Vec<f64> {
    raw.iter().map(|&s| f64::from(s) / 32768.0).collect()
}

/// Whether a tokenized pair survives length filtering: both sides at most
/// [`MAX_TOKENS`] long and a source/target ratio inside `[2/3, 3/2]`.
pub fn filter_pair(src_len: usize, tgt_len: usize) -> bool {
    if src_len > MAX_TOKENS || tgt_len > MAX_TOKENS || src_len == 0 || tgt_len == 0 {
        return false;
    }
    // exact rational comparison: 2/3 <= s/t <= 3/2
    let (s, t) = (src_len as u64, tgt_len as u64);
    3 * s >= 2 * t && 2 * s <= 3 * t
}
