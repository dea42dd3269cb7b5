use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Batch, LossBreakdown, LossConfig, Model, ModelError, ParamStore, WeightGradient};
use crate::data::Utterance;
use crate::numerics::Graph;

/// Adam with an inverse-square-root schedule: linear warmup to `lr` over
/// `warmup_steps`, then decay proportional to `1/√step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            warmup_steps: 4000,
        }
    }
}

impl AdamConfig {
    /// Learning rate at 1-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup_steps.max(1) as f64;
        self.lr * (s / w).min((w / s).sqrt())
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: usize,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || {
            params
                .values()
                .iter()
                .map(|t| vec![0.0; t.numel()])
                .collect()
        };
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    /// Applies one update and returns the learning rate used.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[Vec<f64>]) -> f64 {
        self.t += 1;
        let c = &self.config;
        let lr = c.lr_at(self.t);
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (i, value) in params.values_mut().iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            for (j, w) in value.data_mut().iter_mut().enumerate() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                *w -= lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + c.eps);
            }
        }
        lr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Global gradient-norm clip.
    pub clip_norm: Option<f64>,
    pub loss: LossConfig,
    /// Seed for the per-epoch shuffle.
    pub seed: u64,
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            adam: AdamConfig {
                lr: 5e-3,
                warmup_steps: 250,
                ..AdamConfig::default()
            },
            clip_norm: Some(1.0),
            loss: LossConfig {
                weight_gradient: WeightGradient::QuantityOnly,
                ..LossConfig::default()
            },
            seed: 1,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

pub struct Trainer {
    pub config: TrainConfig,
    adam: Adam,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, model: &Model) -> Self {
        let adam = Adam::new(config.adam.clone(), &model.params);
        Self {
            config,
            adam,
            epoch: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.adam.steps()
    }

    /// One optimizer step on `batch`. A non-finite loss aborts before any
    /// parameter is touched.
    pub fn step(&mut self, model: &mut Model, batch: &Batch) -> Result<StepRecord, ModelError> {
        let mut g = Graph::new();
        let p = model.bind(&mut g, true);
        let nodes = model.joint_loss(&mut g, &p, batch, self.config.loss)?;
        let loss = nodes.breakdown(&g);
        if !loss.is_finite() {
            return Err(ModelError::NonFinite {
                step: self.adam.steps() + 1,
                breakdown: loss,
            });
        }
        let grads = g
            .backward(nodes.total)
            .map_err(|e| ModelError::Config(e.to_string()))?;
        let mut flat: Vec<Vec<f64>> = p
            .iter()
            .zip(model.params.values())
            .map(|(v, t)| {
                grads
                    .slice(*v)
                    .map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec)
            })
            .collect();
        let grad_norm = flat.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        if !grad_norm.is_finite() {
            return Err(ModelError::NonFinite {
                step: self.adam.steps() + 1,
                breakdown: loss,
            });
        }
        if let Some(max) = self.config.clip_norm {
            if grad_norm > max {
                let s = max / grad_norm;
                flat.iter_mut().flatten().for_each(|x| *x *= s);
            }
        }
        let lr = self.adam.update(&mut model.params, &flat);
        Ok(StepRecord {
            step: self.adam.steps(),
            epoch: self.epoch,
            lr,
            loss,
            grad_norm,
        })
    }

    /// Trains over `data` for the configured epochs. `on_step` sees every
    /// record and may return `false` to stop early.
    pub fn fit(
        &mut self,
        model: &mut Model,
        data: &[Utterance],
        mut on_step: impl FnMut(&StepRecord) -> bool,
    ) -> Result<Vec<StepRecord>, ModelError> {
        let mut records = Vec::new();
        let bs = self.config.batch_size.max(1);
        for epoch in 0..self.config.epochs {
            self.epoch = epoch;
            let mut order: Vec<usize> = (0..data.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(
                self.config
                    .seed
                    .wrapping_mul(0x9E37_79B9)
                    .wrapping_add(epoch as u64),
            );
            order.shuffle(&mut rng);
            for chunk in order.chunks(bs) {
                if self
                    .config
                    .max_steps
                    .is_some_and(|m| self.adam.steps() >= m)
                {
                    return Ok(records);
                }
                let batch = Batch::from_utterances(chunk.iter().map(|&i| &data[i]));
                let rec = self.step(model, &batch)?;
                let go_on = on_step(&rec);
                records.push(rec);
                if !go_on {
                    return Ok(records);
                }
            }
        }
        Ok(records)
    }
}
