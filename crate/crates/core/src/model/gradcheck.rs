use serde::{Deserialize, Serialize};

use super::{Batch, LossConfig, Model, ModelConfig, ModelError};
use crate::data::{generate_corpus, SyntheticSpec};
use crate::numerics::Graph;

/// Worst disagreement between backpropagated and central-difference gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter and coordinate where it occurred.
    pub param: String,
    pub index: usize,
    pub coordinates: usize,
}

impl ModelConfig {
    /// Smallest useful configuration, for gradient checks.
    pub fn tiny(seed: u64) -> Self {
        Self {
            d_feat: 4,
            d: 5,
            d_model: 16,
            n_heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            vocab_size: 10,
            max_len: 8,
            conv_channels: 6,
            acoustic_stride: 2,
            ffn_dim: 16,
            seed,
        }
    }
}

/// Two short synthetic utterances matching [`ModelConfig::tiny`].
pub fn tiny_batch(seed: u64) -> Batch {
    let spec = SyntheticSpec {
        vocab_size: 10,
        n_train: 2,
        n_dev: 0,
        n_test: 0,
        tokens_per_utterance: (2, 3),
        frames_per_token: (2, 3),
        d_feat: 4,
        seed,
        ..SyntheticSpec::default()
    };
    Batch::from_utterances(&generate_corpus(&spec).train)
}

/// Compares the joint-loss gradient of every parameter coordinate against
/// `(L(θ+h) − L(θ−h)) / 2h`. Relative error is `|fd − g| / (max(|fd|, |g|) + 1e-6)`.
pub fn check_gradients(
    model: &Model,
    batch: &Batch,
    loss: LossConfig,
    h: f64,
) -> Result<GradCheck, ModelError> {
    let mut g = Graph::new();
    let p = model.bind(&mut g, true);
    let nodes = model.joint_loss(&mut g, &p, batch, loss)?;
    let grads = g
        .backward(nodes.total)
        .map_err(|e| ModelError::Config(e.to_string()))?;
    let eval = |m: &Model| -> Result<f64, ModelError> {
        let mut g = Graph::new();
        let p = m.bind(&mut g, false);
        let n = m.joint_loss(&mut g, &p, batch, loss)?;
        Ok(g.value(n.total).item())
    };
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        param: String::new(),
        index: 0,
        coordinates: 0,
    };
    let mut probe = model.clone();
    for (i, v) in p.iter().enumerate() {
        let n = model.params.value(i).numel();
        let analytic = grads
            .slice(*v)
            .map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
        for (j, gj) in analytic.iter().enumerate() {
            let orig = probe.params.value(i).data()[j];
            probe.params.values_mut()[i].data_mut()[j] = orig + h;
            let up = eval(&probe)?;
            probe.params.values_mut()[i].data_mut()[j] = orig - h;
            let down = eval(&probe)?;
            probe.params.values_mut()[i].data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - gj).abs() / (gj.abs().max(fd.abs()) + 1e-6);
            worst.coordinates += 1;
            if err > worst.max_rel_error {
                worst.max_rel_error = err;
                worst.param = model.params.names()[i].clone();
                worst.index = j;
            }
        }
    }
    Ok(worst)
}
