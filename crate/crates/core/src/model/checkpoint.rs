//! Text checkpoint format.
//!
//! ```text
//! cifst-checkpoint 1
//! config {"d_feat":16,...}
//! meta {...}                      (optional, free-form JSON)
//! param <name> <d0>x<d1>... <v0> <v1> ...
//! end
//! ```
//!
//! Values are written in Rust's shortest round-trip notation, so loading
//! restores every weight bit-exactly.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Model, ModelConfig, ModelError};
use crate::numerics::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "cifst-checkpoint";

pub fn write_checkpoint<W: Write>(
    mut w: W,
    model: &Model,
    meta: Option<&serde_json::Value>,
) -> std::io::Result<()> {
    writeln!(w, "{MAGIC} {CHECKPOINT_VERSION}")?;
    writeln!(
        w,
        "config {}",
        serde_json::to_string(&model.config).expect("config serializes")
    )?;
    if let Some(m) = meta {
        writeln!(
            w,
            "meta {}",
            serde_json::to_string(m).expect("json value serializes")
        )?;
    }
    for (name, t) in model.params.names().iter().zip(model.params.values()) {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        write!(w, "param {name} {}", shape.join("x"))?;
        for v in t.data() {
            write!(w, " {v:?}")?;
        }
        writeln!(w)?;
    }
    writeln!(w, "end")?;
    w.flush()
}

/// Reads a checkpoint, returning the model and its optional metadata.
pub fn read_checkpoint<R: BufRead>(
    r: R,
    origin: &str,
) -> Result<(Model, Option<serde_json::Value>), ModelError> {
    let err = |line: usize, message: String| ModelError::Checkpoint {
        path: origin.to_string(),
        message: format!("line {line}: {message}"),
    };
    let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = || -> Result<(usize, String), ModelError> {
        match lines.next() {
            Some((n, Ok(l))) => Ok((n, l)),
            Some((n, Err(e))) => Err(err(n, e.to_string())),
            None => Err(err(0, "unexpected end of file".into())),
        }
    };
    let (n, header) = next()?;
    match header.split_once(' ') {
        Some((MAGIC, v)) if v.trim() == CHECKPOINT_VERSION.to_string() => {}
        _ => {
            return Err(err(
                n,
                format!("expected `{MAGIC} {CHECKPOINT_VERSION}` header"),
            ))
        }
    }
    let (n, cfg_line) = next()?;
    let cfg_json = cfg_line
        .strip_prefix("config ")
        .ok_or_else(|| err(n, "expected config line".into()))?;
    let config: ModelConfig = serde_json::from_str(cfg_json).map_err(|e| err(n, e.to_string()))?;
    let mut model = Model::new(config)?;
    let mut meta = None;
    let mut seen = vec![false; model.params.len()];
    loop {
        let (n, line) = next()?;
        if line == "end" {
            break;
        }
        if let Some(m) = line.strip_prefix("meta ") {
            meta = Some(serde_json::from_str(m).map_err(|e| err(n, e.to_string()))?);
            continue;
        }
        let rest = line
            .strip_prefix("param ")
            .ok_or_else(|| err(n, "expected a param line".into()))?;
        let mut fields = rest.split(' ');
        let name = fields.next().unwrap_or_default();
        let idx = model
            .params
            .index_of(name)
            .ok_or_else(|| err(n, format!("unknown parameter {name}")))?;
        let shape: Vec<usize> = fields
            .next()
            .unwrap_or_default()
            .split('x')
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|e| err(n, format!("bad shape: {e}")))
            })
            .collect::<Result<_, _>>()?;
        let data: Vec<f64> = fields
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| err(n, format!("bad value {s:?}: {e}")))
            })
            .collect::<Result<_, _>>()?;
        let expected = model.params.value(idx).shape().to_vec();
        if shape != expected {
            return Err(err(
                n,
                format!("{name} has shape {shape:?}, config implies {expected:?}"),
            ));
        }
        if data.len() != shape.iter().product::<usize>() {
            return Err(err(
                n,
                format!("{name} holds {} values for shape {shape:?}", data.len()),
            ));
        }
        model.params.values_mut()[idx] = Tensor::new(shape, data);
        seen[idx] = true;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(err(
            0,
            format!("missing parameter {}", model.params.names()[i]),
        ));
    }
    Ok((model, meta))
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    meta: Option<&serde_json::Value>,
) -> Result<(), ModelError> {
    let io = |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    };
    let f = std::fs::File::create(path).map_err(io)?;
    write_checkpoint(BufWriter::new(f), model, meta).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, Option<serde_json::Value>), ModelError> {
    let f = std::fs::File::open(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_checkpoint(BufReader::new(f), &path.display().to_string())
}
