use std::ops::Range;

pub const FIRE_THRESHOLD: f64 = 1.0;
/// Firing uses `acc ≥ 1 − FIRE_TOLERANCE` so weights that sum to an integer
/// fire deterministically despite rounding.
pub const FIRE_TOLERANCE: f64 = 1e-9;

/// Segments produced by a complete walk.
#[derive(Debug, Clone, PartialEq)]
pub struct Firing {
    pub segments: Vec<Range<usize>>,
    pub fire_frames: Vec<usize>,
    /// Mass left in the accumulator after the last frame (before any flush).
    pub residue: f64,
}

/// Online integrate-and-fire state; frames are pushed one at a time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Accumulator {
    acc: f64,
    open_start: usize,
    frames: usize,
    segments: Vec<Range<usize>>,
    fire_frames: Vec<usize>,
    flushed: bool,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Integrates one frame weight, returning how many units fired on it.
    pub fn push(&mut self, weight: f64) -> usize {
        assert!(!self.flushed, "push after flush");
        let t = self.frames;
        self.frames += 1;
        self.acc += weight;
        let mut fired = 0;
        while self.acc >= FIRE_THRESHOLD - FIRE_TOLERANCE {
            self.acc -= FIRE_THRESHOLD;
            let seg = if fired == 0 {
                self.open_start..t + 1
            } else {
                t + 1..t + 1
            };
            self.segments.push(seg);
            self.fire_frames.push(t);
            fired += 1;
        }
        if fired > 0 {
            self.open_start = t + 1;
        }
        fired
    }

    /// Ends the stream: a residue of at least one half fires a final unit
    /// over the still-open frames. Returns whether it fired.
    pub fn flush(&mut self) -> bool {
        if self.flushed {
            return false;
        }
        self.flushed = true;
        if self.acc >= 0.5 {
            self.segments.push(self.open_start..self.frames);
            self.fire_frames.push(self.frames.saturating_sub(1));
            self.open_start = self.frames;
            self.acc = 0.0;
            true
        } else {
            false
        }
    }

    pub fn fired(&self) -> usize {
        self.segments.len()
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn residue(&self) -> f64 {
        self.acc
    }

    pub fn segments(&self) -> &[Range<usize>] {
        &self.segments
    }

    pub fn fire_frames(&self) -> &[usize] {
        &self.fire_frames
    }
}

/// Walks `weights` left to right. With `flush`, a trailing residue of at least
/// one half fires a final unit.
pub fn fire_segments(weights: &[f64], flush: bool) -> Firing {
    let mut acc = Accumulator::new();
    for w in weights {
        acc.push(*w);
    }
    let residue = acc.residue();
    if flush {
        acc.flush();
    }
    Firing {
        segments: acc.segments,
        fire_frames: acc.fire_frames,
        residue,
    }
}
