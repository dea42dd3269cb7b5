use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use cifst_core::data::{load_manifest, Utterance, Vocab};
use cifst_core::metrics::{corpus_bleu, token_accuracy, LatencyReport, ScoreRow, SCORE_HEADER};
use cifst_core::model::{load_checkpoint, Model, Task};
use cifst_core::policy::{
    read_logs, run_policy, write_logs, DecisionLog, LogFile, PolicyConfig, PolicyKind,
    DEFAULT_STRIDE_MS,
};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::corpus::{corpus_spec, load_split};
use crate::{PolicyArg, SweepArg, TaskArg};

/// Read granularities swept with `--sweep stride`.
pub const STRIDE_GRID: [u64; 9] = [120, 200, 360, 400, 440, 600, 800, 1000, 40000];
/// Lagging values swept with `--sweep k`.
pub const K_GRID: [usize; 6] = [5, 7, 9, 10, 15, 20];
pub const SCORES: &str = "scores.tsv";

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Asr => Task::Asr,
            TaskArg::St => Task::St,
        }
    }
}

fn reference(u: &Utterance, task: Task) -> &[usize] {
    match task {
        Task::Asr => &u.transcript,
        Task::St => &u.translation,
    }
}

fn load_model(checkpoint: &Path, d_feat: usize, vocab_size: usize) -> Result<Model> {
    if !checkpoint.is_file() {
        bail!("checkpoint {} not found", checkpoint.display());
    }
    let (model, _) = load_checkpoint(checkpoint)?;
    let c = &model.config;
    if c.d_feat != d_feat || c.vocab_size != vocab_size {
        bail!(
            "checkpoint expects d_feat {} and vocab {}, but the corpus has {d_feat} and {vocab_size}",
            c.d_feat,
            c.vocab_size
        );
    }
    Ok(model)
}

pub fn translate(
    checkpoint: &Path,
    data: &Path,
    split: &str,
    task: TaskArg,
    beam: Option<usize>,
    out: &Path,
    config: Option<&Path>,
) -> Result<()> {
    let mut cfg = RunConfig::load("translate", config)?;
    let beam = beam.or(cfg.beam).unwrap_or(1);
    if beam == 0 {
        bail!("beam size must be at least 1");
    }
    cfg.beam = Some(beam);
    cfg.set_path("checkpoint", checkpoint);
    cfg.set_path("data", data);
    let task = Task::from(task);
    let split = load_split(data, split)?;
    let model = load_model(checkpoint, split.spec.d_feat, split.spec.vocab_size)?;
    cfg.model = Some(model.config.clone());

    let hyps = split
        .utterances
        .par_iter()
        .map(|u| model.translate(&u.frames, task, beam).map(|h| h.tokens))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<Vec<usize>> = split
        .utterances
        .iter()
        .map(|u| reference(u, task).to_vec())
        .collect();
    let hyp_text: Vec<String> = hyps.iter().map(|h| split.vocab.render(h)).collect();
    let ref_text: Vec<String> = refs.iter().map(|r| split.vocab.render(r)).collect();
    let bleu = corpus_bleu(&hyp_text, &ref_text)?;
    let acc = token_accuracy(&hyps, &refs);

    let mut w =
        BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    writeln!(w, "# run {}", serde_json::to_string(&cfg.to_json())?)?;
    writeln!(w, "id\thypothesis\treference")?;
    for ((u, h), r) in split.utterances.iter().zip(&hyp_text).zip(&ref_text) {
        writeln!(w, "{}\t{h}\t{r}", u.id)?;
    }
    w.flush()?;
    println!(
        "BLEU {bleu:.2}\ttoken accuracy {acc:.4}\t({} utterances)",
        hyps.len()
    );
    Ok(())
}

pub struct SimulateArgs {
    pub policy: Option<PolicyArg>,
    pub k: Option<String>,
    pub stride_ms: Option<u64>,
    pub task: Option<TaskArg>,
    pub sweep: Option<SweepArg>,
}

fn parse_k(s: &str) -> Result<Option<usize>> {
    if s == "inf" {
        return Ok(None);
    }
    let k: usize = s
        .parse()
        .with_context(|| format!("k must be a positive integer or `inf`, got {s:?}"))?;
    Ok(Some(k))
}

/// Merges flags over the config file's policy section.
fn resolve_policy(base: Option<PolicyConfig>, args: &SimulateArgs) -> Result<PolicyConfig> {
    let mut p = base.unwrap_or(PolicyConfig::adaptive(3, DEFAULT_STRIDE_MS));
    if let Some(kind) = args.policy {
        p.kind = match kind {
            PolicyArg::Prefix => PolicyKind::Prefix,
            PolicyArg::Adaptive => PolicyKind::Adaptive,
            PolicyArg::Offline => PolicyKind::Offline,
        };
    }
    if let Some(k) = &args.k {
        if p.kind == PolicyKind::Offline {
            bail!("--k does not apply to the offline policy");
        }
        p.k = parse_k(k)?;
    }
    if let Some(s) = args.stride_ms {
        if p.kind == PolicyKind::Offline {
            bail!("--stride-ms does not apply to the offline policy");
        }
        p.stride_ms = s;
    }
    if let Some(t) = args.task {
        p.task = t.into();
    }
    if p.kind == PolicyKind::Offline {
        p = PolicyConfig {
            task: p.task,
            ..PolicyConfig::offline()
        };
    }
    Ok(p)
}

fn sweep_points(base: PolicyConfig, sweep: Option<SweepArg>) -> Result<Vec<PolicyConfig>> {
    match sweep {
        None => Ok(vec![base]),
        Some(_) if base.kind == PolicyKind::Offline => {
            bail!("the offline policy has nothing to sweep")
        }
        Some(SweepArg::Stride) => Ok(STRIDE_GRID
            .iter()
            .map(|&s| PolicyConfig {
                stride_ms: s,
                ..base
            })
            .collect()),
        Some(SweepArg::K) => Ok(K_GRID
            .iter()
            .map(|&k| PolicyConfig { k: Some(k), ..base })
            .collect()),
    }
}

fn kind_name(kind: PolicyKind) -> &'static str {
    match kind {
        PolicyKind::Prefix => "prefix",
        PolicyKind::Adaptive => "adaptive",
        PolicyKind::Offline => "offline",
    }
}

fn log_name(p: &PolicyConfig) -> String {
    match p.kind {
        PolicyKind::Offline => "offline.log".to_string(),
        _ => {
            let k = p.k.map_or("inf".to_string(), |k| k.to_string());
            format!("{}_k{k}_s{}.log", kind_name(p.kind), p.stride_ms)
        }
    }
}

/// Scores one log file. References are whitespace-separated token strings.
pub fn score_logs(file: &LogFile) -> Result<ScoreRow> {
    if file.logs.is_empty() {
        bail!("no decision logs to score");
    }
    let open = Vocab::new(usize::MAX);
    let hyps: Vec<String> = file.logs.iter().map(|l| open.render(&l.tokens())).collect();
    let refs: Vec<&str> = file.logs.iter().map(|l| l.reference.as_str()).collect();
    let delays: Vec<_> = file
        .logs
        .iter()
        .map(|l| l.delay_vector(l.reference.split_whitespace().count()))
        .collect();
    let report = LatencyReport::compute(&hyps, &refs, &delays)?;
    let p = &file.config;
    Ok(ScoreRow {
        policy: kind_name(p.kind).to_string(),
        k: p.k,
        stride_ms: (p.kind != PolicyKind::Offline).then_some(p.stride_ms),
        report,
    })
}

fn write_scores(path: &Path, run: &serde_json::Value, rows: &[ScoreRow]) -> Result<()> {
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "# run {}", serde_json::to_string(run)?)?;
    writeln!(w, "{SCORE_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.to_tsv())?;
    }
    w.flush()?;
    Ok(())
}

fn simulate_point(
    model: &Model,
    utts: &[Utterance],
    vocab: &Vocab,
    p: &PolicyConfig,
) -> Result<Vec<DecisionLog>> {
    utts.par_iter()
        .map(|u| {
            let (_, log) = run_policy(model, &u.frames, p)?;
            Ok(log.with_source(u.id.clone(), vocab.render(reference(u, p.task))))
        })
        .collect()
}

pub fn simulate(
    checkpoint: &Path,
    data: &Path,
    split: &str,
    args: SimulateArgs,
    out: &Path,
    config: Option<&Path>,
) -> Result<()> {
    let mut cfg = RunConfig::load("simulate", config)?;
    let policy = resolve_policy(cfg.policy.take(), &args)?;
    let points = sweep_points(policy, args.sweep)?;
    let spec = corpus_spec(data)?;
    for p in &points {
        p.validate(spec.frame_ms)?;
    }
    cfg.policy = Some(policy);
    cfg.set_path("checkpoint", checkpoint);
    cfg.set_path("data", data);
    cfg.set_path("out", out);

    let model = load_model(checkpoint, spec.d_feat, spec.vocab_size)?;
    let split = load_split(data, split)?;
    cfg.model = Some(model.config.clone());
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let run = cfg.to_json();
    let mut rows = Vec::new();
    for p in &points {
        let logs = simulate_point(&model, &split.utterances, &split.vocab, p)?;
        let path = out.join(log_name(p));
        let w = BufWriter::new(
            File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        );
        write_logs(w, p, Some(&run), &logs)?;
        let row = score_logs(&LogFile {
            config: *p,
            run: None,
            logs,
        })?;
        println!("{}", row.to_tsv());
        rows.push(row);
    }
    write_scores(&out.join(SCORES), &run, &rows)
}

fn read_log_file(path: &Path) -> Result<LogFile> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_logs(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

/// Replaces each log's reference with the manifest's. Ids must match exactly.
fn attach_references(
    file: &mut LogFile,
    refs: &BTreeMap<String, String>,
    origin: &Path,
) -> Result<()> {
    let log_ids: BTreeSet<&str> = file.logs.iter().map(|l| l.utt_id.as_str()).collect();
    let missing: Vec<&str> = log_ids
        .iter()
        .copied()
        .filter(|id| !refs.contains_key(*id))
        .collect();
    let unlogged: Vec<&str> = refs
        .keys()
        .map(String::as_str)
        .filter(|id| !log_ids.contains(id))
        .collect();
    if !missing.is_empty() || !unlogged.is_empty() {
        bail!(
            "{}: ids without a reference: [{}]; references without a log: [{}]",
            origin.display(),
            missing.join(", "),
            unlogged.join(", ")
        );
    }
    for log in &mut file.logs {
        log.reference = refs[&log.utt_id].clone();
    }
    Ok(())
}

pub fn score(
    logs: &[std::path::PathBuf],
    references: Option<&Path>,
    task: TaskArg,
    out: Option<&Path>,
) -> Result<()> {
    if logs.is_empty() {
        bail!("no decision logs given");
    }
    let task = Task::from(task);
    let refs = match references {
        Some(path) => {
            let vocab = Vocab::new(usize::MAX);
            let mut map = BTreeMap::new();
            for u in load_manifest(path, vocab)? {
                let u = u.with_context(|| format!("reading {}", path.display()))?;
                map.insert(u.id.clone(), vocab.render(reference(&u, task)));
            }
            Some(map)
        }
        None => None,
    };
    let mut run = RunConfig::new("score");
    if let Some(path) = references {
        run.set_path("references", path);
    }
    let mut rows = Vec::new();
    for path in logs {
        let mut file = read_log_file(path)?;
        if file.logs.is_empty() {
            bail!("{} holds no decision logs", path.display());
        }
        if let Some(map) = &refs {
            attach_references(&mut file, map, path)?;
        }
        let row = score_logs(&file)?;
        rows.push(row);
    }
    println!("{SCORE_HEADER}");
    for r in &rows {
        println!("{}", r.to_tsv());
    }
    if let Some(out) = out {
        write_scores(out, &run.to_json(), &rows)?;
    }
    Ok(())
}
