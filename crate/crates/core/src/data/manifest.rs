//! Manifest TSV and frames binary formats.
//!
//! Frames payload (little-endian): `u32 T`, `u32 d_feat`, then `T·d_feat`
//! `f32` values in row-major order. A manifest column holds either a path to
//! such a file, relative to the manifest's directory, or the payload inline as
//! `hex:` followed by lowercase base-16 bytes.
//!
//! Manifest lines are `id<TAB>frames<TAB>transcript<TAB>translation`, token
//! sequences space-separated. A `# frame_ms=<n>` line must precede the first
//! record; other `#` lines are ignored.

use std::fs::File;
use std::io::{BufRead, BufReader, Lines, Write};
use std::path::{Path, PathBuf};

use super::{DataError, FrameSequence, Utterance, Vocab};
use crate::numerics::Tensor;

pub fn encode_frames(frames: &FrameSequence) -> Vec<u8> {
    let (t, d) = (frames.len(), frames.dim());
    let mut out = Vec::with_capacity(8 + 4 * t * d);
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for v in frames.frames.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_frames(bytes: &[u8], frame_ms: u32) -> Result<FrameSequence, DataError> {
    if bytes.len() < 8 {
        return Err(DataError::BadFrames(format!(
            "{} bytes is shorter than the header",
            bytes.len()
        )));
    }
    let t = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != 4 * t * d {
        return Err(DataError::BadFrames(format!(
            "header says {t}x{d} frames but payload holds {} bytes",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Ok(FrameSequence::new(Tensor::new(vec![t, d], data), frame_ms))
}

pub fn write_frames_file(path: &Path, frames: &FrameSequence) -> Result<(), DataError> {
    std::fs::write(path, encode_frames(frames)).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_frames_file(path: &Path, frame_ms: u32) -> Result<FrameSequence, DataError> {
    let bytes = std::fs::read(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            DataError::MissingFrames {
                path: path.to_path_buf(),
            }
        } else {
            DataError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    decode_frames(&bytes, frame_ms)
}

/// Writes `utterances` as a manifest at `path`. Unless `inline`, frames go to
/// `frames/<id>.bin` next to the manifest.
pub fn write_manifest(
    path: &Path,
    utterances: &[Utterance],
    vocab: Vocab,
    inline: bool,
) -> Result<(), DataError> {
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().unwrap_or(Path::new("."));
    let frame_ms = utterances.first().map_or(0, |u| u.frames.frame_ms);
    if !inline && !utterances.is_empty() {
        let fdir = dir.join("frames");
        std::fs::create_dir_all(&fdir).map_err(|source| DataError::Io {
            path: fdir.clone(),
            source,
        })?;
    }
    let mut out = std::io::BufWriter::new(File::create(path).map_err(io)?);
    if !utterances.is_empty() {
        writeln!(out, "# frame_ms={frame_ms}").map_err(io)?;
    }
    for u in utterances {
        assert_eq!(
            u.frames.frame_ms, frame_ms,
            "mixed frame durations in one manifest"
        );
        assert!(
            !u.id.contains(['\t', '\n']),
            "utterance id contains a separator"
        );
        let frames_col = if inline {
            format!("hex:{}", hex::encode(encode_frames(&u.frames)))
        } else {
            let rel = format!("frames/{}.bin", u.id);
            write_frames_file(&dir.join(&rel), &u.frames)?;
            rel
        };
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            u.id,
            frames_col,
            vocab.render(&u.transcript),
            vocab.render(&u.translation)
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Streaming manifest reader; each item is one utterance or a line-numbered error.
pub struct ManifestReader {
    lines: Lines<BufReader<File>>,
    dir: PathBuf,
    vocab: Vocab,
    frame_ms: Option<u32>,
    line_no: usize,
}

pub fn load_manifest(path: &Path, vocab: Vocab) -> Result<ManifestReader, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(ManifestReader {
        lines: BufReader::new(file).lines(),
        dir: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        vocab,
        frame_ms: None,
        line_no: 0,
    })
}

impl ManifestReader {
    fn parse_record(&self, line: &str) -> Result<Utterance, DataError> {
        let malformed = |message: String| DataError::Malformed {
            line: self.line_no,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(malformed(format!(
                "expected 4 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let frame_ms = self
            .frame_ms
            .ok_or_else(|| malformed("record before the `# frame_ms=` header".into()))?;
        let frames = if let Some(payload) = fields[1].strip_prefix("hex:") {
            let bytes = hex::decode(payload)
                .map_err(|e| malformed(format!("invalid inline hex frames: {e}")))?;
            decode_frames(&bytes, frame_ms).map_err(|e| malformed(e.to_string()))?
        } else {
            read_frames_file(&self.dir.join(fields[1]), frame_ms)?
        };
        let tokens = |s: &str| {
            self.vocab
                .parse_line(s)
                .map_err(|e| malformed(e.to_string()))
        };
        Ok(Utterance {
            id: fields[0].to_string(),
            frames,
            transcript: tokens(fields[2])?,
            translation: tokens(fields[3])?,
            gold_boundaries: None,
        })
    }
}

impl Iterator for ManifestReader {
    type Item = Result<Utterance, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(source) => {
                    return Some(Err(DataError::Io {
                        path: self.dir.clone(),
                        source,
                    }))
                }
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some(v) = meta.trim().strip_prefix("frame_ms=") {
                    match v.trim().parse::<u32>() {
                        Ok(ms) if ms > 0 => self.frame_ms = Some(ms),
                        _ => {
                            return Some(Err(DataError::Malformed {
                                line: self.line_no,
                                message: format!("bad frame_ms value {v:?}"),
                            }))
                        }
                    }
                }
                continue;
            }
            return Some(self.parse_record(&line));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_payload_layout() {
        let fs = FrameSequence::new(Tensor::new(vec![1, 2], vec![1.0, -0.5]), 40);
        let bytes = encode_frames(&fs);
        assert_eq!(&bytes[..8], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &1.0f32.to_le_bytes());
        assert_eq!(decode_frames(&bytes, 40).unwrap(), fs);
        assert!(decode_frames(&bytes[..10], 40).is_err());
    }
}
