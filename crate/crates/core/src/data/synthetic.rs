use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{FrameSequence, Utterance, Vocab, FIRST_CONTENT};
use crate::numerics::Tensor;

/// Parameters of a synthetic speech-translation corpus.
///
/// Each source token is "spoken" as its fixed random unit embedding repeated
/// for a uniformly drawn number of frames, plus Gaussian noise. The
/// translation applies a fixed token permutation, optionally swapping
/// neighbouring pairs to introduce local reordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub vocab_size: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    /// Inclusive range of source tokens per utterance.
    pub tokens_per_utterance: (usize, usize),
    /// Inclusive range of frames rendered per token.
    pub frames_per_token: (usize, usize),
    pub d_feat: usize,
    pub noise_std: f64,
    pub frame_ms: u32,
    pub reorder: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            vocab_size: 50,
            n_train: 2000,
            n_dev: 100,
            n_test: 200,
            tokens_per_utterance: (4, 12),
            frames_per_token: (2, 8),
            d_feat: 16,
            noise_std: 0.1,
            frame_ms: 40,
            reorder: false,
            seed: 7,
        }
    }
}

/// A generated corpus with its generation tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub spec: SyntheticSpec,
    /// `vocab_size × d_feat` rendering embeddings (unit rows).
    pub embeddings: Tensor,
    /// Source token id → target token id.
    pub mapping: Vec<usize>,
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

impl Corpus {
    pub fn vocab(&self) -> Vocab {
        Vocab::new(self.spec.vocab_size)
    }
}

fn mix(seed: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(index.wrapping_mul(0x94D0_49BB_1331_11EB));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_TABLES: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_DEV: u64 = 3;
const STREAM_TEST: u64 = 4;

fn validate(spec: &SyntheticSpec) {
    assert!(
        spec.vocab_size > FIRST_CONTENT + 1,
        "need at least two content tokens"
    );
    let (lo, hi) = spec.frames_per_token;
    assert!(
        lo >= 1 && lo <= hi,
        "frames_per_token must satisfy 1 <= lo <= hi"
    );
    let (tl, th) = spec.tokens_per_utterance;
    assert!(
        tl >= 1 && tl <= th,
        "tokens_per_utterance must satisfy 1 <= lo <= hi"
    );
    assert!(spec.d_feat >= 1 && spec.frame_ms > 0 && spec.noise_std >= 0.0);
}

/// Generates train/dev/test splits. Identical specs give identical corpora.
pub fn generate_corpus(spec: &SyntheticSpec) -> Corpus {
    validate(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, STREAM_TABLES, 0));
    let embeddings = unit_embeddings(spec.vocab_size, spec.d_feat, &mut rng);
    let mut targets: Vec<usize> = (FIRST_CONTENT..spec.vocab_size).collect();
    targets.shuffle(&mut rng);
    let mut mapping: Vec<usize> = (0..FIRST_CONTENT).collect();
    mapping.extend(targets);

    let split = |stream: u64, prefix: &str, n: usize| -> Vec<Utterance> {
        (0..n)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, stream, i as u64));
                render_utterance(
                    format!("{prefix}{i:05}"),
                    spec,
                    &embeddings,
                    &mapping,
                    &mut rng,
                )
            })
            .collect()
    };
    Corpus {
        train: split(STREAM_TRAIN, "train", spec.n_train),
        dev: split(STREAM_DEV, "dev", spec.n_dev),
        test: split(STREAM_TEST, "test", spec.n_test),
        spec: spec.clone(),
        embeddings,
        mapping,
    }
}

fn unit_embeddings(vocab: usize, dim: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut data = Vec::with_capacity(vocab * dim);
    for _ in 0..vocab {
        let mut row: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        row.iter_mut().for_each(|x| *x /= norm);
        data.extend(row);
    }
    Tensor::new(vec![vocab, dim], data)
}

fn render_utterance(
    id: String,
    spec: &SyntheticSpec,
    embeddings: &Tensor,
    mapping: &[usize],
    rng: &mut ChaCha8Rng,
) -> Utterance {
    let n_tokens = rng.gen_range(spec.tokens_per_utterance.0..=spec.tokens_per_utterance.1);
    // Adjacent repeats would be acoustically indistinguishable from one long token.
    let mut transcript: Vec<usize> = Vec::with_capacity(n_tokens);
    while transcript.len() < n_tokens {
        let tok = rng.gen_range(FIRST_CONTENT..spec.vocab_size);
        if transcript.last() != Some(&tok) {
            transcript.push(tok);
        }
    }
    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE)).unwrap();
    let mut data = Vec::new();
    let mut boundaries = Vec::with_capacity(n_tokens);
    let mut frames = 0;
    for &tok in &transcript {
        let run = rng.gen_range(spec.frames_per_token.0..=spec.frames_per_token.1);
        for _ in 0..run {
            for &e in embeddings.row(tok) {
                let jitter = if spec.noise_std > 0.0 {
                    noise.sample(rng)
                } else {
                    0.0
                };
                // stored as f32 on disk, so keep values f32-representable
                data.push((e + jitter) as f32 as f64);
            }
        }
        frames += run;
        boundaries.push(frames);
    }
    let mut translation: Vec<usize> = transcript.iter().map(|&t| mapping[t]).collect();
    if spec.reorder {
        for pair in translation.chunks_mut(2) {
            pair.reverse();
        }
    }
    Utterance {
        id,
        frames: FrameSequence::new(Tensor::new(vec![frames, spec.d_feat], data), spec.frame_ms),
        transcript,
        translation,
        gold_boundaries: Some(boundaries),
    }
}
