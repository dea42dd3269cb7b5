use crate::cif::{self, Accumulator, AcousticStates, IntegratedSequence};
use crate::model::{IncrementalEncoder, Model, Session};
use crate::numerics::Tensor;

/// Incremental source-side state of one streamed utterance.
pub trait StreamSession {
    /// Appends source frames (`n × d_feat`).
    fn push(&mut self, frames: &Tensor);
    /// Marks the end of the source.
    fn finish(&mut self);
    /// Current integrated length `|l_u|`.
    fn integrated_len(&self) -> usize;
    /// Logits for the token after `prefix`, conditioned on the source read so far.
    fn next_logits(&mut self, prefix: &[usize]) -> Vec<f64>;
}

/// Anything the streaming policies can drive.
pub trait StreamModel {
    type Session<'a>: StreamSession
    where
        Self: 'a;

    fn open(&self, frame_ms: u32) -> Self::Session<'_>;
    /// Maximum number of decoding steps, EOS included.
    fn max_len(&self) -> usize;
}

impl StreamModel for Model {
    type Session<'a> = ModelStream<'a>;

    fn open(&self, frame_ms: u32) -> ModelStream<'_> {
        ModelStream::new(self, frame_ms)
    }

    fn max_len(&self) -> usize {
        self.config.max_len
    }
}

/// [`StreamSession`] over a [`Model`].
///
/// Before [`finish`](StreamSession::finish) the source units come from the
/// raw-weight walk advanced one new acoustic state at a time. Afterwards they
/// are the offline units of the whole utterance (rescaled weights, final
/// residue flushed).
pub struct ModelStream<'m> {
    model: &'m Model,
    encoder: IncrementalEncoder<'m>,
    session: Session<'m>,
    acc: Accumulator,
    width: usize,
    online: Vec<f64>,
    pending: Vec<f64>,
    offline: Option<IntegratedSequence>,
    memory: Option<(usize, bool, Tensor)>,
}

impl<'m> ModelStream<'m> {
    pub fn new(model: &'m Model, frame_ms: u32) -> Self {
        let width = model.config.d - 1;
        Self {
            model,
            encoder: IncrementalEncoder::new(model, frame_ms),
            session: Session::new(model),
            acc: Accumulator::new(),
            width,
            online: Vec::new(),
            pending: vec![0.0; width],
            offline: None,
            memory: None,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.offline.is_some()
    }

    pub fn acoustic_states(&self) -> Option<AcousticStates> {
        self.encoder.acoustic_states()
    }

    /// The integrated units currently conditioning the decoder.
    pub fn integrated(&self) -> IntegratedSequence {
        match &self.offline {
            Some(l) => l.clone(),
            None => IntegratedSequence {
                embeddings: Tensor::new(
                    vec![self.online.len() / self.width, self.width],
                    self.online.clone(),
                ),
            },
        }
    }

    fn integrate_new_rows(&mut self, start: usize) {
        let states = self.encoder.states();
        let d = self.model.config.d;
        for r in start..states.rows() {
            let row = states.row(r);
            let alpha = cif::sigmoid(row[d - 1]);
            for (p, h) in self.pending.iter_mut().zip(&row[..d - 1]) {
                *p += alpha * h;
            }
            let fired = self.acc.push(alpha);
            if fired > 0 {
                self.online.extend_from_slice(&self.pending);
                self.online
                    .extend(std::iter::repeat_n(0.0, (fired - 1) * self.width));
                self.pending.iter_mut().for_each(|p| *p = 0.0);
            }
        }
    }

    fn memory(&mut self) -> Tensor {
        let key = (self.integrated_len(), self.is_finished());
        if let Some((n, fin, m)) = &self.memory {
            if (*n, *fin) == key {
                return m.clone();
            }
        }
        let l = self.integrated();
        let m = if l.is_empty() {
            self.model.empty_memory()
        } else {
            self.session.semantic_encode(&l).expect("non-empty source")
        };
        self.memory = Some((key.0, key.1, m.clone()));
        m
    }
}

impl StreamSession for ModelStream<'_> {
    fn push(&mut self, frames: &Tensor) {
        assert!(!self.is_finished(), "push after the end of the source");
        let before = self.encoder.len();
        self.encoder.push(frames);
        self.integrate_new_rows(before);
    }

    fn finish(&mut self) {
        if self.is_finished() {
            return;
        }
        let l = match self.encoder.acoustic_states() {
            Some(states) => self.model.integrate_offline(&states).0,
            None => IntegratedSequence {
                embeddings: Tensor::new(vec![0, self.width], Vec::new()),
            },
        };
        self.offline = Some(l);
    }

    fn integrated_len(&self) -> usize {
        match &self.offline {
            Some(l) => l.len(),
            None => self.online.len() / self.width,
        }
    }

    fn next_logits(&mut self, prefix: &[usize]) -> Vec<f64> {
        let memory = self.memory();
        self.session.next_logits(&memory, prefix)
    }
}
