//! Synthetic speech-translation corpora, preprocessing rules and manifests.

mod manifest;
mod preprocess;
mod synthetic;

use std::path::PathBuf;

use crate::numerics::Tensor;

pub use manifest::{
    decode_frames, encode_frames, load_manifest, read_frames_file, write_frames_file,
    write_manifest, ManifestReader,
};
pub use preprocess::{filter_pair, normalize_waveform, MAX_TOKENS};
pub use synthetic::{generate_corpus, Corpus, SyntheticSpec};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("frames file {path} not found")]
    MissingFrames { path: PathBuf },
    #[error("bad frames payload: {0}")]
    BadFrames(String),
    #[error("unknown token {0:?}")]
    UnknownToken(String),
}

pub const PAD: usize = 0;
pub const EOS: usize = 1;
/// Task indicator selecting transcription (ASR).
pub const SRC_LANG: usize = 2;
/// Task indicator selecting translation (ST).
pub const TGT_LANG: usize = 3;
/// First non-reserved token id.
pub const FIRST_CONTENT: usize = 4;

/// Closed vocabulary with reserved ids `0..4` and content tokens `w4, w5, …`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocab {
    pub size: usize,
}

impl Vocab {
    pub fn new(size: usize) -> Self {
        assert!(size > FIRST_CONTENT, "vocabulary needs content tokens");
        Self { size }
    }

    pub fn token_text(&self, id: usize) -> String {
        match id {
            PAD => "<pad>".into(),
            EOS => "</s>".into(),
            SRC_LANG => "[src]".into(),
            TGT_LANG => "[tgt]".into(),
            _ => format!("w{id}"),
        }
    }

    pub fn parse_token(&self, text: &str) -> Result<usize, DataError> {
        let id = match text {
            "<pad>" => PAD,
            "</s>" => EOS,
            "[src]" => SRC_LANG,
            "[tgt]" => TGT_LANG,
            _ => text
                .strip_prefix('w')
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n >= FIRST_CONTENT)
                .ok_or_else(|| DataError::UnknownToken(text.to_string()))?,
        };
        if id >= self.size {
            return Err(DataError::UnknownToken(text.to_string()));
        }
        Ok(id)
    }

    /// Space-joined token texts.
    pub fn render(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token_text(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn parse_line(&self, line: &str) -> Result<Vec<usize>, DataError> {
        line.split_whitespace()
            .map(|t| self.parse_token(t))
            .collect()
    }
}

/// Acoustic input: `T × d_feat` frames, each covering `frame_ms` milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Tensor,
    pub frame_ms: u32,
}

impl FrameSequence {
    pub fn new(frames: Tensor, frame_ms: u32) -> Self {
        assert_eq!(frames.shape().len(), 2, "frames must be a matrix");
        assert!(frame_ms > 0);
        Self { frames, frame_ms }
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn duration_ms(&self) -> u64 {
        self.len() as u64 * u64::from(self.frame_ms)
    }

    /// The first `n` frames.
    pub fn prefix(&self, n: usize) -> FrameSequence {
        self.slice(0, n)
    }

    /// Frames `start..end`, clamped to the sequence.
    pub fn slice(&self, start: usize, end: usize) -> FrameSequence {
        let end = end.min(self.len());
        FrameSequence {
            frames: self.frames.slice_rows(start.min(end), end),
            frame_ms: self.frame_ms,
        }
    }
}

/// One speech, transcript and translation triple. Token sequences hold content
/// tokens only; task indicators and EOS are added when batching.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub frames: FrameSequence,
    pub transcript: Vec<usize>,
    pub translation: Vec<usize>,
    /// Exclusive end frame of each transcript token, when known.
    pub gold_boundaries: Option<Vec<usize>>,
}
