use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use cifst_core::model::{
    check_gradients, save_checkpoint, tiny_batch, LossConfig, Model, ModelConfig, ModelError,
    Trainer,
};

use crate::config::RunConfig;
use crate::corpus::{self, load_split};

pub const CHECKPOINT: &str = "model.ckpt";
pub const LOSSES: &str = "losses.tsv";
pub const NAN_SNAPSHOT: &str = "nan_snapshot.ckpt";
const LOSS_HEADER: &str = "step\tepoch\tlr\ttotal\tl_qua\tl_asr\tl_st\tgrad_norm";

pub fn train(
    data: &Path,
    out: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    epochs: Option<usize>,
    max_steps: Option<usize>,
) -> Result<()> {
    let mut cfg = RunConfig::load("train", config)?;
    let spec = corpus::corpus_spec(data)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let mut model_cfg = match cfg.model.take() {
        Some(m) if m.d_feat != spec.d_feat || m.vocab_size != spec.vocab_size => bail!(
            "model expects d_feat {} and vocab {}, but the corpus has {} and {}",
            m.d_feat,
            m.vocab_size,
            spec.d_feat,
            spec.vocab_size
        ),
        Some(m) => m,
        None => ModelConfig {
            d_feat: spec.d_feat,
            vocab_size: spec.vocab_size,
            ..ModelConfig::default()
        },
    };
    let mut train_cfg = cfg.train.take().unwrap_or_default();
    if config.is_none() || seed.is_some() {
        model_cfg.seed = cfg.seed;
        train_cfg.seed = cfg.seed;
    }
    if let Some(e) = epochs {
        train_cfg.epochs = e;
    }
    if max_steps.is_some() {
        train_cfg.max_steps = max_steps;
    }
    cfg.model = Some(model_cfg.clone());
    cfg.train = Some(train_cfg.clone());
    cfg.set_path("data", data);
    cfg.set_path("out", out);

    let split = load_split(data, "train")?;
    let mut model = Model::new(model_cfg)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let meta = cfg.to_json();
    let losses_path = out.join(LOSSES);
    let mut losses = BufWriter::new(
        File::create(&losses_path)
            .with_context(|| format!("creating {}", losses_path.display()))?,
    );
    writeln!(losses, "# run {}", serde_json::to_string(&meta)?)?;
    writeln!(losses, "{LOSS_HEADER}")?;

    let mut trainer = Trainer::new(train_cfg, &model);
    let mut write_err = None;
    let mut last_epoch = None;
    let result = trainer.fit(&mut model, &split.utterances, |r| {
        let l = &r.loss;
        let line = format!(
            "{}\t{}\t{:e}\t{}\t{}\t{}\t{}\t{}",
            r.step, r.epoch, r.lr, l.total, l.l_qua, l.l_asr, l.l_st, r.grad_norm
        );
        if let Err(e) = writeln!(losses, "{line}") {
            write_err = Some(e);
            return false;
        }
        if last_epoch != Some(r.epoch) {
            last_epoch = Some(r.epoch);
            eprintln!("epoch {} step {} total {:.4}", r.epoch, r.step, l.total);
        }
        true
    });
    losses.flush()?;
    if let Some(e) = write_err {
        return Err(e).context("writing loss curve");
    }
    match result {
        Ok(records) => {
            let ckpt = out.join(CHECKPOINT);
            save_checkpoint(&ckpt, &model, Some(&meta))?;
            match records.last() {
                Some(r) => println!(
                    "trained {} steps; final total {:.6} (qua {:.4} asr {:.4} st {:.4}); checkpoint {}",
                    r.step,
                    r.loss.total,
                    r.loss.l_qua,
                    r.loss.l_asr,
                    r.loss.l_st,
                    ckpt.display()
                ),
                None => println!("no training steps run; checkpoint {}", ckpt.display()),
            }
            Ok(())
        }
        Err(ModelError::NonFinite { step, breakdown }) => {
            let snap = out.join(NAN_SNAPSHOT);
            let mut meta = meta;
            meta["failure"] = serde_json::json!({ "step": step, "loss": breakdown });
            save_checkpoint(&snap, &model, Some(&meta))?;
            bail!(
                "non-finite loss at step {step} (qua {} asr {} st {}); parameters before the step saved to {}",
                breakdown.l_qua,
                breakdown.l_asr,
                breakdown.l_st,
                snap.display()
            )
        }
        Err(e) => Err(e.into()),
    }
}

pub fn grad_check(seed: u64, step: f64, tolerance: f64) -> Result<()> {
    let model = Model::new(ModelConfig::tiny(seed))?;
    let batch = tiny_batch(seed);
    let report = check_gradients(&model, &batch, LossConfig::default(), step)?;
    println!(
        "checked {} coordinates; max relative error {:.3e} at {}[{}]",
        report.coordinates, report.max_rel_error, report.param, report.index
    );
    if report.max_rel_error > tolerance {
        bail!(
            "gradient check failed: {:.3e} > {tolerance:e}",
            report.max_rel_error
        );
    }
    Ok(())
}
