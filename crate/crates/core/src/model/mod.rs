//! End-to-end network: causal acoustic encoder, CIF, a shared transformer
//! semantic encoder and a decoder serving both transcription and translation,
//! selected by a task indicator token.

mod acoustic;
mod checkpoint;
mod decode;
mod gradcheck;
mod layers;
mod params;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use acoustic::{IncrementalEncoder, KERNEL as ACOUSTIC_KERNEL};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION,
};
pub use decode::{beam_search, greedy_search, log_softmax, Hypothesis, Session};
pub use gradcheck::{check_gradients, tiny_batch, GradCheck};
pub use layers::sinusoid;
pub use params::ParamStore;
pub use train::{Adam, AdamConfig, StepRecord, TrainConfig, Trainer};

use crate::cif::{self, AcousticStates, CifError, FiringSchedule, IntegratedSequence};
use crate::data::{FrameSequence, Utterance, EOS, PAD, SRC_LANG, TGT_LANG};
use crate::numerics::{Graph, Tensor, Var};
use layers::{DecoderLayer, EncoderLayer, Linear, Norm};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("utterance produced no integrated units")]
    EmptySource,
    #[error("utterance has no frames")]
    EmptyFrames,
    #[error("token id {id} is outside the vocabulary of {vocab}")]
    UnknownToken { id: usize, vocab: usize },
    #[error("text sequence must start with a task indicator and end with EOS")]
    BadSequence,
    #[error(transparent)]
    Cif(#[from] CifError),
    #[error("non-finite loss at step {step}: {breakdown:?}")]
    NonFinite {
        step: usize,
        breakdown: LossBreakdown,
    },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Network shape. [`Default`] is the desk-scale configuration used for the
/// synthetic task; [`ModelConfig::reference`] gives full-size values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_feat: usize,
    /// Acoustic state width; the last channel is the CIF weight logit.
    pub d: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Semantic encoder depth `N`.
    pub encoder_layers: usize,
    /// Decoder depth `M`.
    pub decoder_layers: usize,
    pub vocab_size: usize,
    /// Longest decoded output, EOS included.
    pub max_len: usize,
    pub conv_channels: usize,
    /// Frames per acoustic state.
    #[serde(default = "default_acoustic_stride")]
    pub acoustic_stride: usize,
    pub ffn_dim: usize,
    pub seed: u64,
}

fn default_acoustic_stride() -> usize {
    2
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_feat: 16,
            d: 49,
            d_model: 32,
            n_heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            vocab_size: 50,
            max_len: 64,
            conv_channels: 96,
            acoustic_stride: 1,
            ffn_dim: 64,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn reference() -> Self {
        Self {
            d_feat: 80,
            d: 769,
            d_model: 768,
            n_heads: 4,
            encoder_layers: 8,
            decoder_layers: 6,
            vocab_size: 10000,
            max_len: 250,
            conv_channels: 512,
            acoustic_stride: 2,
            ffn_dim: 3072,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.d < 2 {
            return bad("d must be at least 2");
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        if self.acoustic_stride == 0 {
            return bad("acoustic_stride must be positive");
        }
        if self.d_feat == 0 || self.conv_channels == 0 || self.ffn_dim == 0 {
            return bad("layer widths must be positive");
        }
        if self.vocab_size <= TGT_LANG + 1 {
            return bad("vocabulary must include content tokens beyond the reserved ids");
        }
        if self.max_len == 0 {
            return bad("max_len must be positive");
        }
        Ok(())
    }
}

/// Which output the shared decoder produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Asr,
    St,
}

impl Task {
    pub fn indicator(self) -> usize {
        match self {
            Task::Asr => SRC_LANG,
            Task::St => TGT_LANG,
        }
    }
}

/// Weights of the joint objective `α·l_qua + β·l_asr + γ·l_st`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

/// Which losses train the CIF weight logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightGradient {
    /// Quantity loss and, through the integrated embeddings, both
    /// cross-entropies.
    #[default]
    Joint,
    /// Quantity loss only; integration treats the scaled weights as constants.
    QuantityOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub weight_gradient: WeightGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_qua: f64,
    pub l_asr: f64,
    pub l_st: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossBreakdown {
    /// `|total − (α·l_qua + β·l_asr + γ·l_st)|`.
    pub fn decomposition_error(&self) -> f64 {
        let w = self.weights;
        (self.total - (w.alpha * self.l_qua + w.beta * self.l_asr + w.gamma * self.l_st)).abs()
    }

    pub fn is_finite(&self) -> bool {
        self.l_qua.is_finite()
            && self.l_asr.is_finite()
            && self.l_st.is_finite()
            && self.total.is_finite()
    }
}

/// Loss nodes recorded by [`Model::joint_loss`].
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub l_qua: Var,
    pub l_asr: Var,
    pub l_st: Var,
    pub total: Var,
    pub weights: LossWeights,
}

impl LossNodes {
    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        LossBreakdown {
            l_qua: g.value(self.l_qua).item(),
            l_asr: g.value(self.l_asr).item(),
            l_st: g.value(self.l_st).item(),
            total: g.value(self.total).item(),
            weights: self.weights,
        }
    }
}

/// One speech/transcript/translation triple. Text sequences are
/// `[indicator, tokens…, EOS]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub frames: Tensor,
    pub transcript: Vec<usize>,
    pub translation: Vec<usize>,
}

impl Sample {
    pub fn from_utterance(u: &Utterance) -> Self {
        let wrap = |ind: usize, body: &[usize]| {
            let mut v = Vec::with_capacity(body.len() + 2);
            v.push(ind);
            v.extend_from_slice(body);
            v.push(EOS);
            v
        };
        Self {
            frames: u.frames.frames.clone(),
            transcript: wrap(SRC_LANG, &u.transcript),
            translation: wrap(TGT_LANG, &u.translation),
        }
    }

    /// Target unit count `n*`: transcript tokens without indicator and EOS.
    pub fn n_star(&self) -> usize {
        self.transcript.len().saturating_sub(2)
    }
}

/// A list of samples; each is processed as its own subgraph and the losses
/// are pooled.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub samples: Vec<Sample>,
}

impl Batch {
    pub fn from_utterances<'a>(utts: impl IntoIterator<Item = &'a Utterance>) -> Self {
        Self {
            samples: utts.into_iter().map(Sample::from_utterance).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(frames, transcript, translation)` lengths per sample.
    pub fn lengths(&self) -> Vec<(usize, usize, usize)> {
        self.samples
            .iter()
            .map(|s| (s.frames.rows(), s.transcript.len(), s.translation.len()))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub acoustic: acoustic::AcousticNet,
    proj: usize,
    encoder: Vec<EncoderLayer>,
    enc_norm: Norm,
    embed: usize,
    decoder: Vec<DecoderLayer>,
    dec_norm: Norm,
    out: Linear,
}

/// Model weights plus the layout that interprets them.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub(crate) layout: Layout,
}

/// Initial CIF weight-logit bias, giving `α ≈ 0.4` per state before training.
const WEIGHT_LOGIT_BIAS: f64 = -0.4;

impl Model {
    /// Freshly initialized model; identical configs give identical weights.
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut store = ParamStore::new();
        let acoustic = acoustic::AcousticNet::new(&mut store, &mut rng, c);
        store.values_mut()[acoustic.out_bias()].data_mut()[c.d - 1] = WEIGHT_LOGIT_BIAS;
        let limit = (6.0 / (c.d - 1 + c.d_model) as f64).sqrt();
        let proj = store.add(
            "proj.w".into(),
            Tensor::uniform(&[c.d - 1, c.d_model], -limit, limit, &mut rng),
        );
        let encoder = (0..c.encoder_layers)
            .map(|i| {
                EncoderLayer::new(
                    &mut store,
                    &mut rng,
                    &format!("encoder.{i}"),
                    c.d_model,
                    c.n_heads,
                    c.ffn_dim,
                )
            })
            .collect();
        let enc_norm = Norm::new(&mut store, "encoder.norm", c.d_model);
        let embed = store.add(
            "embed".into(),
            Tensor::randn(&[c.vocab_size, c.d_model], 1.0, &mut rng),
        );
        let decoder = (0..c.decoder_layers)
            .map(|i| {
                DecoderLayer::new(
                    &mut store,
                    &mut rng,
                    &format!("decoder.{i}"),
                    c.d_model,
                    c.n_heads,
                    c.ffn_dim,
                )
            })
            .collect();
        let dec_norm = Norm::new(&mut store, "decoder.norm", c.d_model);
        let out = Linear::new(&mut store, &mut rng, "output", c.d_model, c.vocab_size);
        let layout = Layout {
            acoustic,
            proj,
            encoder,
            enc_norm,
            embed,
            decoder,
            dec_norm,
            out,
        };
        Ok(Self {
            config,
            params: store,
            layout,
        })
    }

    /// Records all parameters on `g`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params.bind(g, trainable)
    }

    /// Index of the output-layer bias, for tests that force particular logits.
    pub fn output_bias_index(&self) -> usize {
        self.layout.out.b
    }

    /// Acoustic states on the tape: `T × d_feat` frames to `ceil(T/2) × d`.
    pub fn acoustic_graph(&self, g: &mut Graph, p: &[Var], frames: &Tensor) -> Var {
        let x = g.constant(acoustic::with_flux(frames));
        self.layout.acoustic.forward(g, p, x)
    }

    /// Semantic encoder on the tape: integrated units `U × (d−1)` to `U × d_model`.
    pub fn semantic_graph(&self, g: &mut Graph, p: &[Var], integrated: Var) -> Var {
        let u = g.shape(integrated)[0];
        let x = g.matmul(integrated, p[self.layout.proj]);
        let pe = g.constant(sinusoid(u, self.config.d_model));
        let mut x = g.add(x, pe);
        for layer in &self.layout.encoder {
            x = layer.forward(g, p, x);
        }
        self.layout.enc_norm.forward(g, p, x)
    }

    /// Decoder logits (`inputs.len() × vocab`) for teacher-forced `inputs`.
    /// `memory = None` decodes without any source units.
    pub fn decoder_graph(
        &self,
        g: &mut Graph,
        p: &[Var],
        memory: Option<Var>,
        inputs: &[usize],
    ) -> Var {
        let x = g.embedding(p[self.layout.embed], inputs);
        let pe = g.constant(sinusoid(inputs.len(), self.config.d_model));
        let mut x = g.add(x, pe);
        for layer in &self.layout.decoder {
            x = layer.forward(g, p, x, memory);
        }
        let x = self.layout.dec_norm.forward(g, p, x);
        self.layout.out.forward(g, p, x)
    }

    pub fn check_tokens(&self, ids: &[usize]) -> Result<(), ModelError> {
        match ids.iter().find(|&&id| id >= self.config.vocab_size) {
            Some(&id) => Err(ModelError::UnknownToken {
                id,
                vocab: self.config.vocab_size,
            }),
            None => Ok(()),
        }
    }

    fn check_sequence(&self, seq: &[usize]) -> Result<(), ModelError> {
        self.check_tokens(seq)?;
        let ok = seq.len() >= 2
            && (seq[0] == SRC_LANG || seq[0] == TGT_LANG)
            && seq[seq.len() - 1] == EOS
            && !seq[1..seq.len() - 1]
                .iter()
                .any(|&t| t == PAD || t == EOS || t == SRC_LANG || t == TGT_LANG);
        if ok {
            Ok(())
        } else {
            Err(ModelError::BadSequence)
        }
    }

    /// Teacher-forced decoder logits and targets for `[indicator, …, EOS]`.
    pub fn decode_train_logits(
        &self,
        g: &mut Graph,
        p: &[Var],
        memory: Option<Var>,
        sequence: &[usize],
    ) -> Result<(Var, Vec<usize>), ModelError> {
        self.check_sequence(sequence)?;
        let n = sequence.len();
        let logits = self.decoder_graph(g, p, memory, &sequence[..n - 1]);
        Ok((logits, sequence[1..].to_vec()))
    }

    /// Per-token mean cross-entropy of `sequence` given `memory`.
    pub fn decode_train(
        &self,
        g: &mut Graph,
        p: &[Var],
        memory: Option<Var>,
        sequence: &[usize],
    ) -> Result<Var, ModelError> {
        let (logits, targets) = self.decode_train_logits(g, p, memory, sequence)?;
        Ok(g.cross_entropy(logits, &targets))
    }

    /// Joint objective over a batch. Cross-entropies are per-token means
    /// pooled over the batch; the quantity loss is the mean over samples.
    pub fn joint_loss(
        &self,
        g: &mut Graph,
        p: &[Var],
        batch: &Batch,
        config: LossConfig,
    ) -> Result<LossNodes, ModelError> {
        let weights = config.weights;
        assert!(!batch.is_empty(), "joint loss over an empty batch");
        let mut qua = Vec::with_capacity(batch.len());
        let (mut asr_logits, mut asr_targets) = (Vec::new(), Vec::new());
        let (mut st_logits, mut st_targets) = (Vec::new(), Vec::new());
        for s in &batch.samples {
            if s.frames.rows() == 0 {
                return Err(ModelError::EmptyFrames);
            }
            self.check_sequence(&s.transcript)?;
            self.check_sequence(&s.translation)?;
            let n_star = s.n_star();
            let h = self.acoustic_graph(g, p, &s.frames);
            let alpha = cif::graph::weights(g, h);
            let (scaled, n_hat) = cif::graph::scale(g, alpha, n_star)?;
            qua.push(cif::graph::quantity_loss(g, n_hat, n_star));
            let content = cif::graph::content(g, h);
            let scaled = match config.weight_gradient {
                WeightGradient::Joint => scaled,
                WeightGradient::QuantityOnly => g.constant(g.value(scaled).clone()),
            };
            let (l, _) = cif::graph::integrate(g, content, scaled);
            let hse = self.semantic_graph(g, p, l);
            let (lz, tz) = self.decode_train_logits(g, p, Some(hse), &s.transcript)?;
            let (ly, ty) = self.decode_train_logits(g, p, Some(hse), &s.translation)?;
            asr_logits.push(lz);
            asr_targets.extend(tz);
            st_logits.push(ly);
            st_targets.extend(ty);
        }
        let q_sum = if qua.len() == 1 {
            qua[0]
        } else {
            sum_all(g, &qua)
        };
        let l_qua = g.scale(q_sum, 1.0 / batch.len() as f64);
        let za = g.concat_rows(&asr_logits);
        let l_asr = g.cross_entropy(za, &asr_targets);
        let ya = g.concat_rows(&st_logits);
        let l_st = g.cross_entropy(ya, &st_targets);
        let wq = g.scale(l_qua, weights.alpha);
        let wa = g.scale(l_asr, weights.beta);
        let ws = g.scale(l_st, weights.gamma);
        let text = g.add(wa, ws);
        let total = g.add(wq, text);
        Ok(LossNodes {
            l_qua,
            l_asr,
            l_st,
            total,
            weights,
        })
    }

    /// Inference acoustic states, computed row by row as in streaming.
    pub fn acoustic_encode(&self, frames: &FrameSequence) -> Result<AcousticStates, ModelError> {
        let mut enc = IncrementalEncoder::new(self, frames.frame_ms);
        enc.push(&frames.frames);
        enc.acoustic_states().ok_or(ModelError::EmptyFrames)
    }

    /// Acoustic states via the training graph path.
    pub fn acoustic_encode_graph(&self, frames: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let h = self.acoustic_graph(&mut g, &p, frames);
        g.value(h).clone()
    }

    /// Offline CIF: weights rescaled to fire `round(n̂)` units, residue flushed.
    pub fn integrate_offline(
        &self,
        states: &AcousticStates,
    ) -> (IntegratedSequence, FiringSchedule) {
        let alpha = cif::compute_weights(states);
        let eff = cif::inference_rescale(&alpha);
        cif::integrate_and_fire_final(states, &eff).expect("weights match states")
    }

    /// Online CIF over a source prefix: raw weights, no flush.
    pub fn integrate_online(
        &self,
        states: &AcousticStates,
    ) -> (IntegratedSequence, FiringSchedule) {
        let alpha = cif::compute_weights(states);
        cif::integrate_and_fire(states, &alpha).expect("weights match states")
    }

    /// `h^SE` for integrated units; fails when there are none.
    pub fn semantic_encode(&self, integrated: &IntegratedSequence) -> Result<Tensor, ModelError> {
        Session::new(self).semantic_encode(integrated)
    }

    /// Source memory for decoding: `h^SE`, or a `0 × d_model` tensor when no
    /// unit fired.
    pub fn memory(&self, integrated: &IntegratedSequence) -> Tensor {
        self.semantic_encode(integrated)
            .unwrap_or_else(|_| self.empty_memory())
    }

    pub fn empty_memory(&self) -> Tensor {
        Tensor::new(vec![0, self.config.d_model], Vec::new())
    }

    /// Argmax decoding from `indicator` until EOS or `max_len` steps.
    pub fn greedy_decode(&self, memory: &Tensor, indicator: usize, max_len: usize) -> Hypothesis {
        let mut s = Session::new(self);
        greedy_search(|prefix| s.next_logits(memory, prefix), indicator, max_len)
    }

    /// Length-normalized beam search; `beam_size == 1` equals greedy decoding.
    pub fn beam_decode(
        &self,
        memory: &Tensor,
        indicator: usize,
        beam_size: usize,
        max_len: usize,
    ) -> Hypothesis {
        let mut s = Session::new(self);
        beam_search(
            |prefix| s.next_logits(memory, prefix),
            indicator,
            beam_size,
            max_len,
        )
    }

    /// Offline transcription or translation of a whole utterance.
    pub fn translate(
        &self,
        frames: &FrameSequence,
        task: Task,
        beam_size: usize,
    ) -> Result<Hypothesis, ModelError> {
        let states = self.acoustic_encode(frames)?;
        let (l, _) = self.integrate_offline(&states);
        let memory = self.memory(&l);
        let max_len = self.config.max_len;
        Ok(if beam_size <= 1 {
            self.greedy_decode(&memory, task.indicator(), max_len)
        } else {
            self.beam_decode(&memory, task.indicator(), beam_size, max_len)
        })
    }
}

fn sum_all(g: &mut Graph, vars: &[Var]) -> Var {
    let mut acc = vars[0];
    for v in &vars[1..] {
        acc = g.add(acc, *v);
    }
    acc
}
