//! Text checkpoint format: a flat manifest of named parameter tensors with
//! shapes and row-major values, preceded by the vocabularies and subword
//! models needed to rebuild embedding tables. Values are written in the
//! shortest exact decimal form, so save/load round-trips bit for bit and
//! reruns produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::corpus::{SubwordModel, SubwordSpace, Vocabulary};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::train::{init_params, Task};

const MAGIC: &str = "xlalign-checkpoint v1";

/// Everything a checkpoint restores.
#[derive(Debug, Clone)]
pub struct LoadedCheckpoint {
    pub params: ModelParams,
    pub seed: u64,
    pub src_lang: String,
    pub tgt_lang: String,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub src_subword: SubwordModel,
    pub tgt_subword: SubwordModel,
}

pub fn save(path: impl AsRef<Path>, params: &ModelParams, task: &Task, seed: u64) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "seed {seed}").unwrap();
    writeln!(out, "dim {}", params.dim).unwrap();
    writeln!(out, "proj_dim {}", params.proj_dim).unwrap();
    writeln!(out, "langs {} {}", task.corpus.src_lang, task.corpus.tgt_lang).unwrap();
    for (lang, vocab) in [
        (&task.corpus.src_lang, &task.src_vocab),
        (&task.corpus.tgt_lang, &task.tgt_vocab),
    ] {
        writeln!(out, "vocab {lang} {}", vocab.size()).unwrap();
        writeln!(out, "{}", vocab.tokens().join(" ")).unwrap();
    }
    for (lang, model) in [
        (&task.corpus.src_lang, &task.src_subword),
        (&task.corpus.tgt_lang, &task.tgt_subword),
    ] {
        let text = model.to_text();
        writeln!(out, "subword {lang} {}", text.lines().count()).unwrap();
        out.push_str(&text);
    }
    for (name, tensor) in params.named() {
        let shape = tensor
            .shape()
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",");
        writeln!(out, "tensor {name} {shape}").unwrap();
        let values = tensor
            .to_vec()
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(out, "{values}").unwrap();
    }
    writeln!(out, "end").unwrap();
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<LoadedCheckpoint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));

    if lines.next() != Some(MAGIC) {
        return Err(bad("missing checkpoint header"));
    }
    let mut seed = 0u64;
    let mut dim = None;
    let mut proj_dim = None;
    let mut langs: Vec<String> = Vec::new();
    let mut vocabs: Vec<(String, Vocabulary)> = Vec::new();
    let mut subwords: Vec<(String, SubwordModel)> = Vec::new();
    let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();

    while let Some(line) = lines.next() {
        if line == "end" {
            break;
        }
        let mut parts = line.split(' ');
        match parts.next() {
            Some("seed") => {
                seed = parts
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad("bad seed line"))?
            }
            Some("dim") => {
                dim = Some(
                    parts
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad("bad dim line"))?,
                )
            }
            Some("proj_dim") => {
                proj_dim = Some(
                    parts
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad("bad proj_dim line"))?,
                )
            }
            Some("langs") => langs = parts.map(str::to_string).collect(),
            Some("vocab") => {
                let lang = parts.next().ok_or_else(|| bad("vocab line missing language"))?;
                let size: usize = parts
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad("vocab line missing size"))?;
                let tokens: Vec<String> = lines
                    .next()
                    .ok_or_else(|| bad("missing vocabulary tokens"))?
                    .split(' ')
                    .map(str::to_string)
                    .collect();
                if tokens.len() != size {
                    return Err(bad(&format!(
                        "vocabulary `{lang}` lists {} tokens but declares {size}",
                        tokens.len()
                    )));
                }
                vocabs.push((lang.to_string(), Vocabulary::from_tokens(lang, tokens)));
            }
            Some("subword") => {
                let lang = parts.next().ok_or_else(|| bad("subword line missing language"))?;
                let count: usize = parts
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad("subword line missing line count"))?;
                let mut body = String::new();
                for _ in 0..count {
                    body.push_str(lines.next().ok_or_else(|| bad("truncated subword model"))?);
                    body.push('\n');
                }
                subwords.push((lang.to_string(), SubwordModel::from_text(&body)?));
            }
            Some("tensor") => {
                let name = parts.next().ok_or_else(|| bad("tensor line missing name"))?;
                let shape: Vec<usize> = parts
                    .next()
                    .ok_or_else(|| bad("tensor line missing shape"))?
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().map_err(|_| bad("bad tensor shape")))
                    .collect::<Result<_>>()?;
                let values: Vec<f64> = lines
                    .next()
                    .ok_or_else(|| bad("missing tensor values"))?
                    .split(' ')
                    .map(|s| s.parse().map_err(|_| bad("bad tensor value")))
                    .collect::<Result<_>>()?;
                let numel: usize = shape.iter().product();
                if values.len() != numel {
                    return Err(bad(&format!(
                        "tensor `{name}` carries {} values for shape {shape:?}",
                        values.len()
                    )));
                }
                tensors.push((name.to_string(), shape, values));
            }
            other => return Err(bad(&format!("unknown checkpoint key {other:?}"))),
        }
    }

    let dim = dim.ok_or_else(|| bad("missing dim"))?;
    let proj_dim = proj_dim.ok_or_else(|| bad("missing proj_dim"))?;
    if langs.len() != 2 {
        return Err(bad("expected exactly two languages"));
    }
    let find_vocab = |lang: &str| -> Result<Vocabulary> {
        vocabs
            .iter()
            .find(|(l, _)| l == lang)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| bad(&format!("missing vocabulary for `{lang}`")))
    };
    let find_subword = |lang: &str| -> Result<SubwordModel> {
        subwords
            .iter()
            .find(|(l, _)| l == lang)
            .map(|(_, m)| m.clone())
            .ok_or_else(|| bad(&format!("missing subword model for `{lang}`")))
    };
    let (src_lang, tgt_lang) = (langs[0].clone(), langs[1].clone());
    let src_vocab = find_vocab(&src_lang)?;
    let tgt_vocab = find_vocab(&tgt_lang)?;
    let src_subword = find_subword(&src_lang)?;
    let tgt_subword = find_subword(&tgt_lang)?;

    let space = SubwordSpace::combine(&[&src_subword, &tgt_subword]);
    let specs = vec![
        (
            src_lang.clone(),
            src_vocab.size(),
            crate::corpus::subword_groups(&src_vocab, &space, 0, &src_subword),
        ),
        (
            tgt_lang.clone(),
            tgt_vocab.size(),
            crate::corpus::subword_groups(&tgt_vocab, &space, 1, &tgt_subword),
        ),
    ];
    let params = init_params(0, dim, proj_dim, &specs, space.size());

    let named = params.named();
    if named.len() != tensors.len() {
        return Err(bad(&format!(
            "checkpoint has {} tensors, config expects {}",
            tensors.len(),
            named.len()
        )));
    }
    for ((name, tensor), (got_name, got_shape, values)) in named.iter().zip(&tensors) {
        if name != got_name {
            return Err(bad(&format!("expected tensor `{name}`, found `{got_name}`")));
        }
        if tensor.shape() != *got_shape {
            return Err(bad(&format!(
                "tensor `{name}` shape {got_shape:?} does not match config {:?}",
                tensor.shape()
            )));
        }
        tensor.set_data(values.clone());
    }

    Ok(LoadedCheckpoint {
        params,
        seed,
        src_lang,
        tgt_lang,
        src_vocab,
        tgt_vocab,
        src_subword,
        tgt_subword,
    })
}
