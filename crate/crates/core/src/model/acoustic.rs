//! Causal strided convolution front end standing in for a pretrained
//! speech encoder.
//!
//! Each input frame is extended with its spectral flux `‖x_t − x_{t−1}‖`
//! (`x_{−1} = 0`), a classic onset-detection feature. Two 1-D convolutions
//! (kernel 3, strides `s` and 1, GELU) and a linear layer then map to `d`
//! channels; the linear layer also sees the flux of the `s` frames the state
//! advances over. State `t` depends only on frames `≤ s·t`, so states
//! computed on a prefix never change when more audio arrives.

use rand::Rng;

use super::layers::Linear;
use super::params::ParamStore;
use super::{Model, ModelConfig};
use crate::cif::AcousticStates;
use crate::numerics::{gelu, Graph, Tensor, Var};

pub const KERNEL: usize = 3;
/// Total frame stride of the encoder.

#[derive(Debug, Clone)]
pub(crate) struct AcousticNet {
    stride: usize,
    conv1: Linear,
    conv2: Linear,
    out: Linear,
}

impl AcousticNet {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, cfg: &ModelConfig) -> Self {
        let (stride, channels) = (cfg.acoustic_stride, cfg.conv_channels);
        let conv1 = Linear::new(
            store,
            rng,
            "acoustic.conv1",
            KERNEL * (cfg.d_feat + 1),
            channels,
        );
        let conv2 = Linear::new(store, rng, "acoustic.conv2", KERNEL * channels, channels);
        let out = Linear::new(store, rng, "acoustic.out", channels + stride, cfg.d);
        Self {
            stride,
            conv1,
            conv2,
            out,
        }
    }

    /// Index of the bias entry feeding the weight logit channel.
    pub fn out_bias(&self) -> usize {
        self.out.b
    }

    /// `frames` is the flux-augmented input from [`with_flux`].
    pub fn forward(&self, g: &mut Graph, p: &[Var], frames: Var) -> Var {
        let width = g.shape(frames)[1];
        let f = g.slice_cols(frames, width - 1, width);
        let f = g.scale(f, SKIP_GAIN);
        let skip = g.causal_unfold(f, self.stride, self.stride);
        let u = g.causal_unfold(frames, KERNEL, self.stride);
        let h = self.conv1.forward(g, p, u);
        let h = g.gelu(h);
        let u = g.causal_unfold(h, KERNEL, 1);
        let h = self.conv2.forward(g, p, u);
        let h = g.gelu(h);
        let h = g.concat_cols(&[h, skip]);
        self.out.forward(g, p, h)
    }
}

const FLUX_GAIN: f64 = 4.0;
const SKIP_GAIN: f64 = 4.0;

fn flux(prev: Option<&[f64]>, cur: &[f64]) -> f64 {
    match prev {
        Some(p) => {
            FLUX_GAIN
                * p.iter()
                    .zip(cur)
                    .map(|(a, b)| (b - a) * (b - a))
                    .sum::<f64>()
                    .sqrt()
        }
        None => FLUX_GAIN * cur.iter().map(|b| b * b).sum::<f64>().sqrt(),
    }
}

/// Appends the spectral-flux column to `T × d_feat` frames.
pub fn with_flux(frames: &Tensor) -> Tensor {
    let (t, d) = (frames.rows(), frames.cols());
    let mut data = Vec::with_capacity(t * (d + 1));
    for i in 0..t {
        let prev = (i > 0).then(|| frames.row(i - 1));
        data.extend_from_slice(frames.row(i));
        data.push(flux(prev, frames.row(i)));
    }
    Tensor::new(vec![t, d + 1], data)
}

/// Row-by-row acoustic encoder fed with successive chunks of frames.
///
/// Each state row is computed exactly once, the first time its receptive
/// field is complete, so feeding the same audio in any chunking yields
/// bit-identical states.
#[derive(Debug, Clone)]
pub struct IncrementalEncoder<'m> {
    model: &'m Model,
    frame_ms: u32,
    frames: Vec<f64>,
    n_frames: usize,
    hidden: Vec<f64>,
    states: Vec<f64>,
    n_states: usize,
}

impl<'m> IncrementalEncoder<'m> {
    pub fn new(model: &'m Model, frame_ms: u32) -> Self {
        Self {
            model,
            frame_ms,
            frames: Vec::new(),
            n_frames: 0,
            hidden: Vec::new(),
            states: Vec::new(),
            n_states: 0,
        }
    }

    pub fn frames_consumed(&self) -> usize {
        self.n_frames
    }

    pub fn len(&self) -> usize {
        self.n_states
    }

    pub fn is_empty(&self) -> bool {
        self.n_states == 0
    }

    /// Appends `frames` (`n × d_feat`) and computes the newly completed states.
    /// Returns the number of new state rows.
    pub fn push(&mut self, frames: &Tensor) -> usize {
        let cfg = &self.model.config;
        if frames.numel() == 0 {
            return 0;
        }
        assert_eq!(frames.cols(), cfg.d_feat, "frame width mismatch");
        let df = cfg.d_feat;
        for i in 0..frames.rows() {
            let cur = frames.row(i);
            let f = {
                let n = self.n_frames;
                let prev =
                    (n > 0).then(|| &self.frames[(n - 1) * (df + 1)..(n - 1) * (df + 1) + df]);
                flux(prev, cur)
            };
            self.frames.extend_from_slice(cur);
            self.frames.push(f);
            self.n_frames += 1;
        }
        let target = self.n_frames.div_ceil(self.model.config.acoustic_stride);
        let before = self.n_states;
        while self.n_states < target {
            self.compute_row(self.n_states);
            self.n_states += 1;
        }
        self.n_states - before
    }

    fn compute_row(&mut self, r: usize) {
        let net = &self.model.layout.acoustic;
        let store = &self.model.params;
        let cfg = &self.model.config;
        let (df, ch, d, stride) = (
            cfg.d_feat + 1,
            cfg.conv_channels,
            cfg.d,
            cfg.acoustic_stride,
        );
        let mut window = vec![0.0; KERNEL * df];
        for j in 0..KERNEL {
            let t = (r * stride + j) as isize - (KERNEL as isize - 1);
            if t >= 0 {
                let t = t as usize;
                window[j * df..(j + 1) * df].copy_from_slice(&self.frames[t * df..(t + 1) * df]);
            }
        }
        let mut h1 = vec![0.0; ch];
        net.conv1.eval_row(store, &window, &mut h1);
        h1.iter_mut().for_each(|x| *x = gelu(*x));
        self.hidden.extend_from_slice(&h1);

        let mut window = vec![0.0; KERNEL * ch];
        for j in 0..KERNEL {
            let t = r as isize + j as isize - (KERNEL as isize - 1);
            if t >= 0 {
                let t = t as usize;
                window[j * ch..(j + 1) * ch].copy_from_slice(&self.hidden[t * ch..(t + 1) * ch]);
            }
        }
        let mut h2 = vec![0.0; ch];
        net.conv2.eval_row(store, &window, &mut h2);
        h2.iter_mut().for_each(|x| *x = gelu(*x));
        for j in 0..stride {
            let t = (r * stride + j) as isize - (stride as isize - 1);
            h2.push(if t >= 0 {
                SKIP_GAIN * self.frames[t as usize * df + df - 1]
            } else {
                0.0
            });
        }
        let mut out = vec![0.0; d];
        net.out.eval_row(store, &h2, &mut out);
        self.states.extend_from_slice(&out);
    }

    /// States computed so far, `len() × d`.
    pub fn states(&self) -> Tensor {
        Tensor::new(
            vec![self.n_states, self.model.config.d],
            self.states.clone(),
        )
    }

    /// States wrapped for CIF; `None` before the first state exists.
    pub fn acoustic_states(&self) -> Option<AcousticStates> {
        if self.n_states == 0 {
            return None;
        }
        AcousticStates::new(
            self.states(),
            f64::from(self.frame_ms) * self.model.config.acoustic_stride as f64,
        )
        .ok()
    }
}
