use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cifst_core::data::{
    generate_corpus, load_manifest, write_manifest, SyntheticSpec, Utterance, Vocab,
};

use crate::config::{RunConfig, CORPUS_CONFIG};

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

pub fn manifest_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.tsv"))
}

pub fn generate(
    out: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    n_train: Option<usize>,
    n_test: Option<usize>,
    inline: bool,
) -> Result<()> {
    let mut cfg = RunConfig::load("generate-data", config)?;
    let mut spec = cfg.data.take().unwrap_or_default();
    if let Some(seed) = seed {
        cfg.seed = seed;
        spec.seed = seed;
    } else if config.is_none() {
        cfg.seed = spec.seed;
    }
    if let Some(n) = n_train {
        spec.n_train = n;
    }
    if let Some(n) = n_test {
        spec.n_test = n;
    }
    cfg.data = Some(spec.clone());
    cfg.set_path("out", out);

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let corpus = generate_corpus(&spec);
    let vocab = corpus.vocab();
    for (split, utts) in SPLITS
        .iter()
        .zip([&corpus.train, &corpus.dev, &corpus.test])
    {
        write_manifest(&manifest_path(out, split), utts, vocab, inline)?;
    }
    let json = serde_json::to_string_pretty(&cfg)?;
    std::fs::write(out.join(CORPUS_CONFIG), json + "\n")?;
    println!(
        "wrote {} train, {} dev, {} test utterances to {}",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        out.display()
    );
    Ok(())
}

/// A loaded corpus split with the generation spec it came from.
pub struct Split {
    pub spec: SyntheticSpec,
    pub vocab: Vocab,
    pub utterances: Vec<Utterance>,
}

pub fn corpus_spec(dir: &Path) -> Result<SyntheticSpec> {
    if !dir.is_dir() {
        bail!("corpus directory {} does not exist", dir.display());
    }
    let cfg = RunConfig::from_corpus(dir)?;
    cfg.data
        .with_context(|| format!("{} lacks a data section", dir.join(CORPUS_CONFIG).display()))
}

pub fn load_split(dir: &Path, split: &str) -> Result<Split> {
    let spec = corpus_spec(dir)?;
    let vocab = Vocab::new(spec.vocab_size);
    let path = manifest_path(dir, split);
    if !path.is_file() {
        bail!("manifest {} not found", path.display());
    }
    let utterances = load_manifest(&path, vocab)?
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(Split {
        spec,
        vocab,
        utterances,
    })
}
