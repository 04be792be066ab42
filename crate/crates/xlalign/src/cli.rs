//! Command-line wiring: corpus -> train -> eval with reproducible
//! configuration.
//!
//! Configuration resolves as flag > config file > built-in default, and every
//! command writes the fully resolved key=value manifest into its output
//! directory. A manifest is itself a valid `--config` file, so a run can be
//! reproduced from its own audit trail; unknown keys and flags are rejected,
//! never ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint;
use crate::corpus::{load_dictionary, load_parallel_corpus, SubwordModel};
use crate::error::{Error, Result};
use crate::eval::{
    align_sentence, build_embedding_table, emit_report, evaluate_p_at_1, format_alignment,
    parse_report, DEFAULT_CSLS_K,
};
use crate::train::{aggregate_runs, train, RunResult, SeedStats, Task, TrainConfig};

/// Everything a training run resolves to, corpus preparation included.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub train: TrainConfig,
    pub min_count: usize,
    pub subword_vocab: usize,
    pub src_lang: String,
    pub tgt_lang: String,
    pub char_level_langs: BTreeSet<String>,
    pub corpus: Option<PathBuf>,
    pub dict: Option<PathBuf>,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            train: TrainConfig::default(),
            min_count: 1,
            subword_vocab: 4000,
            src_lang: "src".to_string(),
            tgt_lang: "tgt".to_string(),
            char_level_langs: BTreeSet::new(),
            corpus: None,
            dict: None,
        }
    }
}

impl RunSpec {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |k: &str, v: &str| Error::Config(format!("invalid value `{v}` for `{k}`"));
        match key {
            "epochs" => self.train.epochs = value.parse().map_err(|_| bad(key, value))?,
            "batch_size" => self.train.batch_size = value.parse().map_err(|_| bad(key, value))?,
            "lr" => self.train.lr = value.parse().map_err(|_| bad(key, value))?,
            "tau" => self.train.contrastive.tau = value.parse().map_err(|_| bad(key, value))?,
            "lambda" => {
                self.train.contrastive.lambda = value.parse().map_err(|_| bad(key, value))?
            }
            "view" => self.train.contrastive.view = value.parse()?,
            "pooling" => self.train.contrastive.pooling = value.parse()?,
            "seeds" => {
                self.train.seeds = value
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.trim().parse().map_err(|_| bad(key, value)))
                    .collect::<Result<_>>()?
            }
            "dim" => self.train.dim = value.parse().map_err(|_| bad(key, value))?,
            "proj_dim" => self.train.proj_dim = value.parse().map_err(|_| bad(key, value))?,
            "grad_clip" => {
                self.train.grad_clip = match value {
                    "none" => None,
                    v => Some(v.parse().map_err(|_| bad(key, value))?),
                }
            }
            "contrastive" => {
                self.train.contrastive_enabled = value.parse().map_err(|_| bad(key, value))?
            }
            "min_count" => self.min_count = value.parse().map_err(|_| bad(key, value))?,
            "subword_vocab" => self.subword_vocab = value.parse().map_err(|_| bad(key, value))?,
            "src_lang" => self.src_lang = value.to_string(),
            "tgt_lang" => self.tgt_lang = value.to_string(),
            "char_level_langs" => {
                self.char_level_langs = value
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.trim().to_string())
                    .collect()
            }
            "corpus" => self.corpus = Some(PathBuf::from(value)),
            "dict" => {
                self.dict = if value.is_empty() { None } else { Some(PathBuf::from(value)) }
            }
            other => {
                return Err(Error::Config(format!("unknown config key `{other}`")));
            }
        }
        Ok(())
    }

    /// Sorted key=value rendering; valid as a config file.
    pub fn manifest(&self) -> String {
        let mut entries: BTreeMap<&str, String> = BTreeMap::new();
        entries.insert("epochs", self.train.epochs.to_string());
        entries.insert("batch_size", self.train.batch_size.to_string());
        entries.insert("lr", self.train.lr.to_string());
        entries.insert("tau", self.train.contrastive.tau.to_string());
        entries.insert("lambda", self.train.contrastive.lambda.to_string());
        entries.insert("view", self.train.contrastive.view.to_string());
        entries.insert("pooling", self.train.contrastive.pooling.to_string());
        entries.insert(
            "seeds",
            self.train
                .seeds
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        entries.insert("dim", self.train.dim.to_string());
        entries.insert("proj_dim", self.train.proj_dim.to_string());
        entries.insert(
            "grad_clip",
            self.train.grad_clip.map_or("none".to_string(), |c| c.to_string()),
        );
        entries.insert("contrastive", self.train.contrastive_enabled.to_string());
        entries.insert("min_count", self.min_count.to_string());
        entries.insert("subword_vocab", self.subword_vocab.to_string());
        entries.insert("src_lang", self.src_lang.clone());
        entries.insert("tgt_lang", self.tgt_lang.clone());
        entries.insert(
            "char_level_langs",
            self.char_level_langs.iter().cloned().collect::<Vec<_>>().join(","),
        );
        if let Some(c) = &self.corpus {
            entries.insert("corpus", c.display().to_string());
        }
        if let Some(d) = &self.dict {
            entries.insert("dict", d.display().to_string());
        }
        let mut out = String::new();
        for (k, v) in entries {
            writeln!(out, "{k}={v}").unwrap();
        }
        out
    }
}

/// Parse a flat key=value config file. Blank lines and `#` comments are
/// allowed; unknown keys are errors.
pub fn apply_config_file(spec: &mut RunSpec, path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::parse(path, i + 1, "expected `key=value`"));
        };
        spec.set(key.trim(), value.trim())
            .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
    }
    Ok(())
}

const COMMANDS: [&str; 5] = ["train", "eval", "align", "segment", "report"];

/// Flags each subcommand accepts, beyond the config-key overrides.
fn allowed_flags(command: &str) -> &'static [&'static str] {
    match command {
        "train" => &[
            "config", "corpus", "dict", "out", "seeds", "epochs", "lr", "batch-size", "tau",
            "lambda", "view", "pooling", "dim", "subword-vocab", "proj-dim", "min-count",
            "src-lang", "tgt-lang", "char-level-langs", "grad-clip", "contrastive",
        ],
        "eval" => &["config", "checkpoint", "dict", "out"],
        "align" => &["config", "checkpoint", "corpus", "out"],
        "segment" => &["corpus", "subword-vocab", "char-level", "out", "apply", "apply-out"],
        "report" => &["inputs", "out"],
        _ => &[],
    }
}

#[derive(Debug, Clone)]
pub struct ParsedArgs {
    pub command: String,
    flags: BTreeMap<String, String>,
}

impl ParsedArgs {
    pub fn flag(&self, name: &str) -> Option<&str> {
        self.flags.get(name).map(|s| s.as_str())
    }

    fn required(&self, name: &str) -> Result<&str> {
        self.flag(name)
            .ok_or_else(|| Error::Config(format!("`{}` requires --{name}", self.command)))
    }
}

/// Parse `<command> [--flag value]...`, rejecting unknown commands and flags.
pub fn parse_args(args: &[String]) -> Result<ParsedArgs> {
    let command = args
        .first()
        .ok_or_else(|| Error::Config(format!("missing command (one of {})", COMMANDS.join(", "))))?
        .clone();
    if !COMMANDS.contains(&command.as_str()) {
        return Err(Error::Config(format!(
            "unknown command `{command}` (expected one of {})",
            COMMANDS.join(", ")
        )));
    }
    let allowed = allowed_flags(&command);
    let mut flags = BTreeMap::new();
    let mut i = 1;
    while i < args.len() {
        let arg = &args[i];
        let Some(name) = arg.strip_prefix("--") else {
            return Err(Error::Config(format!("unexpected argument `{arg}`")));
        };
        if !allowed.contains(&name) {
            return Err(Error::Config(format!(
                "unknown flag --{name} for `{command}`"
            )));
        }
        let value = args
            .get(i + 1)
            .ok_or_else(|| Error::Config(format!("flag --{name} is missing a value")))?;
        flags.insert(name.to_string(), value.clone());
        i += 2;
    }
    Ok(ParsedArgs { command, flags })
}

/// Resolve flag > config file > default into a full run spec.
fn resolve_spec(args: &ParsedArgs) -> Result<RunSpec> {
    let mut spec = RunSpec::default();
    if let Some(config) = args.flag("config") {
        apply_config_file(&mut spec, Path::new(config))?;
    }
    for (flag, key) in [
        ("corpus", "corpus"),
        ("dict", "dict"),
        ("seeds", "seeds"),
        ("epochs", "epochs"),
        ("lr", "lr"),
        ("batch-size", "batch_size"),
        ("tau", "tau"),
        ("lambda", "lambda"),
        ("view", "view"),
        ("pooling", "pooling"),
        ("dim", "dim"),
        ("proj-dim", "proj_dim"),
        ("subword-vocab", "subword_vocab"),
        ("min-count", "min_count"),
        ("src-lang", "src_lang"),
        ("tgt-lang", "tgt_lang"),
        ("char-level-langs", "char_level_langs"),
        ("grad-clip", "grad_clip"),
        ("contrastive", "contrastive"),
    ] {
        if let Some(value) = args.flag(flag) {
            spec.set(key, value)?;
        }
    }
    Ok(spec)
}

fn ensure_out_dir(args: &ParsedArgs) -> Result<PathBuf> {
    let out = PathBuf::from(args.required("out")?);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    Ok(out)
}

fn write_manifest(out_dir: &Path, content: &str) -> Result<PathBuf> {
    let path = out_dir.join("manifest.txt");
    fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn write_loss_csv(out_dir: &Path, run: &RunResult) -> Result<PathBuf> {
    let path = out_dir.join(format!("loss_seed{}.csv", run.seed));
    let mut csv = String::from("epoch,loss\n");
    for (epoch, loss) in run.loss_curve.iter().enumerate() {
        writeln!(csv, "{},{loss}", epoch + 1).unwrap();
    }
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[derive(Debug)]
pub struct TrainOutputs {
    pub results: Vec<RunResult>,
    pub stats: Option<SeedStats>,
    pub out_dir: PathBuf,
}

pub fn cmd_train(args: &ParsedArgs) -> Result<TrainOutputs> {
    let spec = resolve_spec(args)?;
    let out_dir = ensure_out_dir(args)?;
    let corpus_path = spec
        .corpus
        .clone()
        .ok_or_else(|| Error::Config("`train` requires --corpus (or corpus= in config)".into()))?;

    let corpus = load_parallel_corpus(&corpus_path, &spec.src_lang, &spec.tgt_lang)?;
    println!("loaded {} sentence pairs from {}", corpus.len(), corpus_path.display());
    let dict = spec.dict.as_ref().map(load_dictionary).transpose()?;
    let task = Task::prepare(corpus, spec.min_count, spec.subword_vocab, &spec.char_level_langs)?;

    write_manifest(&out_dir, &spec.manifest())?;
    let results = train(&spec.train, &task, dict.as_ref(), Some(&out_dir))?;
    for run in &results {
        write_loss_csv(&out_dir, run)?;
    }
    let stats = match aggregate_runs(&results) {
        Ok(stats) => {
            emit_report(out_dir.join("report.csv"), &stats.scores)?;
            println!(
                "P@1 mean {:.4} std {:.4} over {} seeds",
                stats.mean,
                stats.std,
                stats.scores.len()
            );
            Some(stats)
        }
        Err(Error::EmptyResults) => None,
        Err(e) => return Err(e),
    };
    Ok(TrainOutputs { results, stats, out_dir })
}

pub fn cmd_eval(args: &ParsedArgs) -> Result<crate::eval::EvalReport> {
    let out_dir = ensure_out_dir(args)?;
    let ckpt_path = PathBuf::from(args.required("checkpoint")?);
    let dict_path = PathBuf::from(args.required("dict")?);
    let loaded = checkpoint::load(&ckpt_path)?;
    let dict = load_dictionary(&dict_path)?;

    let src = build_embedding_table(&loaded.params, &loaded.src_lang, &loaded.src_vocab);
    let tgt = build_embedding_table(&loaded.params, &loaded.tgt_lang, &loaded.tgt_vocab);
    let report = evaluate_p_at_1(&src, &tgt, &dict, DEFAULT_CSLS_K)?;

    let mut manifest = String::new();
    writeln!(manifest, "checkpoint={}", ckpt_path.display()).unwrap();
    writeln!(manifest, "csls_k={DEFAULT_CSLS_K}").unwrap();
    writeln!(manifest, "dict={}", dict_path.display()).unwrap();
    write_manifest(&out_dir, &manifest)?;
    emit_report(out_dir.join("report.csv"), &[(loaded.seed, report.p_at_1)])?;
    println!(
        "P@1 = {:.4} ({} hits / {} evaluated, {} skipped)",
        report.p_at_1, report.hits, report.evaluated, report.skipped
    );
    Ok(report)
}

pub fn cmd_align(args: &ParsedArgs) -> Result<PathBuf> {
    let out_dir = ensure_out_dir(args)?;
    let ckpt_path = PathBuf::from(args.required("checkpoint")?);
    let corpus_path = PathBuf::from(args.required("corpus")?);
    let loaded = checkpoint::load(&ckpt_path)?;
    let corpus = load_parallel_corpus(&corpus_path, &loaded.src_lang, &loaded.tgt_lang)?;

    let mut out = String::new();
    for (src_tokens, tgt_tokens) in &corpus.pairs {
        let src_ids: Vec<usize> = src_tokens.iter().map(|t| loaded.src_vocab.id(t)).collect();
        let tgt_ids: Vec<usize> = tgt_tokens.iter().map(|t| loaded.tgt_vocab.id(t)).collect();
        let pairs = align_sentence(
            &loaded.params,
            &loaded.src_lang,
            &src_ids,
            &loaded.tgt_lang,
            &tgt_ids,
            DEFAULT_CSLS_K,
        )?;
        writeln!(out, "{}", format_alignment(&pairs)).unwrap();
    }

    let mut manifest = String::new();
    writeln!(manifest, "checkpoint={}", ckpt_path.display()).unwrap();
    writeln!(manifest, "corpus={}", corpus_path.display()).unwrap();
    writeln!(manifest, "csls_k={DEFAULT_CSLS_K}").unwrap();
    write_manifest(&out_dir, &manifest)?;
    let path = out_dir.join("alignments.txt");
    fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    println!("aligned {} sentence pairs -> {}", corpus.len(), path.display());
    Ok(path)
}

pub fn cmd_segment(args: &ParsedArgs) -> Result<PathBuf> {
    let out_dir = ensure_out_dir(args)?;
    let corpus_path = PathBuf::from(args.required("corpus")?);
    let target: usize = args
        .flag("subword-vocab")
        .unwrap_or("4000")
        .parse()
        .map_err(|_| Error::Config("bad --subword-vocab value".into()))?;
    let char_level = match args.flag("char-level") {
        None => false,
        Some(v) => v
            .parse()
            .map_err(|_| Error::Config("bad --char-level value (expected true/false)".into()))?,
    };
    let text = fs::read_to_string(&corpus_path).map_err(|e| Error::io(&corpus_path, e))?;
    let model = SubwordModel::train(text.split_whitespace(), target, char_level)?;

    let mut manifest = String::new();
    writeln!(manifest, "char_level={char_level}").unwrap();
    writeln!(manifest, "corpus={}", corpus_path.display()).unwrap();
    writeln!(manifest, "subword_vocab={target}").unwrap();
    write_manifest(&out_dir, &manifest)?;
    let model_path = out_dir.join("subword_model.txt");
    fs::write(&model_path, model.to_text()).map_err(|e| Error::io(&model_path, e))?;
    println!(
        "trained subword model: {} symbols, {} merges -> {}",
        model.vocab_size(),
        model.merges.len(),
        model_path.display()
    );

    if let Some(apply) = args.flag("apply") {
        let apply_out = PathBuf::from(args.flag("apply-out").unwrap_or("segmented.txt"));
        let input = fs::read_to_string(apply).map_err(|e| Error::io(apply, e))?;
        let mut seg = String::new();
        for line in input.lines() {
            let pieces: Vec<String> = line
                .split_whitespace()
                .map(|w| model.segment_symbols(w).join(" "))
                .collect();
            writeln!(seg, "{}", pieces.join(" ")).unwrap();
        }
        fs::write(&apply_out, seg).map_err(|e| Error::io(&apply_out, e))?;
    }
    Ok(model_path)
}

pub fn cmd_report(args: &ParsedArgs) -> Result<SeedStats> {
    let out_dir = ensure_out_dir(args)?;
    let inputs = args.required("inputs")?;
    let mut scores: Vec<(u64, f64)> = Vec::new();
    let mut manifest = String::new();
    writeln!(manifest, "inputs={inputs}").unwrap();
    for path in inputs.split(',').filter(|s| !s.is_empty()) {
        scores.extend(parse_report(Path::new(path))?);
    }
    if scores.is_empty() {
        return Err(Error::EmptyResults);
    }
    scores.sort_by_key(|&(seed, _)| seed);
    write_manifest(&out_dir, &manifest)?;
    emit_report(out_dir.join("report.csv"), &scores)?;
    let values: Vec<f64> = scores.iter().map(|&(_, v)| v).collect();
    let (mean, std) = crate::train::mean_std(&values);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!("aggregated {} runs: mean {mean:.4} std {std:.4}", scores.len());
    Ok(SeedStats { scores, mean, std, min, max })
}

/// Dispatch a full argument vector (without the binary name).
pub fn run(args: &[String]) -> Result<()> {
    let parsed = parse_args(args)?;
    match parsed.command.as_str() {
        "train" => cmd_train(&parsed).map(drop),
        "eval" => cmd_eval(&parsed).map(drop),
        "align" => cmd_align(&parsed).map(drop),
        "segment" => cmd_segment(&parsed).map(drop),
        "report" => cmd_report(&parsed).map(drop),
        _ => unreachable!("parse_args validated the command"),
    }
}

pub const USAGE: &str = "\
usage: xlalign <command> [--flag value]...

commands:
  train    --corpus FILE --out DIR [--config FILE --dict FILE --seeds 0,1,2
           --epochs N --lr F --batch-size N --tau F --lambda F
           --view inter|inter-intra --pooling avg|max --dim N --proj-dim N
           --subword-vocab N --min-count N --src-lang S --tgt-lang T
           --char-level-langs L1,L2 --grad-clip F --contrastive true|false]
  eval     --checkpoint FILE --dict FILE --out DIR
  align    --checkpoint FILE --corpus FILE --out DIR
  segment  --corpus FILE --out DIR [--subword-vocab N --char-level true
           --apply FILE --apply-out FILE]
  report   --inputs CSV1,CSV2,... --out DIR
";
