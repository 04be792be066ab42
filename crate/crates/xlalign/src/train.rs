//! Optimization loop: Adam over the combined objective, seeded runs,
//! checkpointing and multi-seed aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use crate::autodiff::Tensor;
use crate::contrastive::{
    combined_loss, pool_reconstruction, pool_source, pool_target, ContrastiveConfig, SentenceRep,
};
use crate::corpus::{
    make_batches, subword_groups, Dictionary, ParallelCorpus, SubwordModel, SubwordSpace,
    Vocabulary,
};
use crate::error::{Error, Result};
use crate::eval::{build_embedding_table, evaluate_p_at_1, DEFAULT_CSLS_K};
use crate::model::{forward_batch, Direction, LstmParams, ModelParams, ProjectionHead};
use crate::rng::SplitMix64;

/// Run-level configuration. Defaults mirror the reference training recipe:
/// learning rate 2e-5, batch size 16, temperature 0.5, seeds 0, 1, 2.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seeds: Vec<u64>,
    pub dim: usize,
    pub proj_dim: usize,
    pub contrastive: ContrastiveConfig,
    pub grad_clip: Option<f64>,
    /// Switch for the base-model build: when false the contrastive term is
    /// never computed and the projection heads stay untouched.
    pub contrastive_enabled: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 16,
            lr: 2e-5,
            seeds: vec![0, 1, 2],
            dim: 64,
            proj_dim: 64,
            contrastive: ContrastiveConfig::default(),
            grad_clip: None,
            contrastive_enabled: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.dim == 0 || !self.dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "dim must be a positive even number, got {}",
                self.dim
            )));
        }
        if self.proj_dim == 0 {
            return Err(Error::Config("proj_dim must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        self.contrastive.validate()
    }

    pub fn use_contrastive(&self) -> bool {
        self.contrastive_enabled && self.contrastive.lambda > 0.0
    }
}

/// Per-language initialization spec: (language id, vocabulary size, per-word
/// global subword-id groups).
pub type LangSpec = (String, usize, Vec<Vec<usize>>);

/// Corpus plus everything derived from it that a run needs.
#[derive(Debug, Clone)]
pub struct Task {
    pub corpus: ParallelCorpus,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub src_subword: SubwordModel,
    pub tgt_subword: SubwordModel,
}

impl Task {
    /// Build vocabularies and subword models from a loaded corpus.
    pub fn prepare(
        corpus: ParallelCorpus,
        min_count: usize,
        subword_vocab: usize,
        char_level_langs: &BTreeSet<String>,
    ) -> Result<Task> {
        if corpus.src_lang == corpus.tgt_lang {
            return Err(Error::Config(format!(
                "source and target language must differ, both are `{}`",
                corpus.src_lang
            )));
        }
        let src_vocab = Vocabulary::build(&corpus.src_lang, corpus.src_tokens(), min_count);
        let tgt_vocab = Vocabulary::build(&corpus.tgt_lang, corpus.tgt_tokens(), min_count);
        let src_subword = SubwordModel::train(
            corpus.src_tokens(),
            subword_vocab,
            char_level_langs.contains(&corpus.src_lang),
        )?;
        let tgt_subword = SubwordModel::train(
            corpus.tgt_tokens(),
            subword_vocab,
            char_level_langs.contains(&corpus.tgt_lang),
        )?;
        Ok(Task { corpus, src_vocab, tgt_vocab, src_subword, tgt_subword })
    }

    /// Per-language (name, vocab size, subword groups) in source-then-target
    /// order, plus the size of the shared subword space.
    pub fn lang_specs(&self) -> (Vec<LangSpec>, usize) {
        let space = SubwordSpace::combine(&[&self.src_subword, &self.tgt_subword]);
        let specs = vec![
            (
                self.corpus.src_lang.clone(),
                self.src_vocab.size(),
                subword_groups(&self.src_vocab, &space, 0, &self.src_subword),
            ),
            (
                self.corpus.tgt_lang.clone(),
                self.tgt_vocab.size(),
                subword_groups(&self.tgt_vocab, &space, 1, &self.tgt_subword),
            ),
        ];
        (specs, space.size())
    }

    pub fn vocab(&self, lang: &str) -> Option<&Vocabulary> {
        if lang == self.corpus.src_lang {
            Some(&self.src_vocab)
        } else if lang == self.corpus.tgt_lang {
            Some(&self.tgt_vocab)
        } else {
            None
        }
    }
}

/// Uniform initialization in [-0.1, 0.1] from the seeded generator, with
/// LSTM forget-gate biases pinned to 1.0. Tensors are created in the exact
/// order of `ModelParams::named`, so one seed fixes every value.
pub fn init_params(
    seed: u64,
    dim: usize,
    proj_dim: usize,
    langs: &[LangSpec],
    subword_count: usize,
) -> ModelParams {
    assert!(dim.is_multiple_of(2), "embedding width must be even, got {dim}");
    let mut rng = SplitMix64::new(seed);
    fn uniform(rng: &mut SplitMix64, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.uniform(-0.1, 0.1)).collect()
    }
    fn lstm(rng: &mut SplitMix64, input: usize, hidden: usize) -> LstmParams {
        let w_x = Tensor::param(&[4 * hidden, input], uniform(rng, 4 * hidden * input));
        let w_h = Tensor::param(&[4 * hidden, hidden], uniform(rng, 4 * hidden * hidden));
        let mut b = uniform(rng, 4 * hidden);
        for v in &mut b[hidden..2 * hidden] {
            *v = 1.0;
        }
        LstmParams { w_x, w_h, b: Tensor::param(&[4 * hidden], b), input, hidden }
    }

    fn head(rng: &mut SplitMix64, dim: usize, proj_dim: usize) -> ProjectionHead {
        ProjectionHead {
            w1: Tensor::param(&[proj_dim, dim], uniform(rng, proj_dim * dim)),
            b1: Tensor::param(&[proj_dim], uniform(rng, proj_dim)),
            w2: Tensor::param(&[proj_dim, proj_dim], uniform(rng, proj_dim * proj_dim)),
            b2: Tensor::param(&[proj_dim], uniform(rng, proj_dim)),
        }
    }

    let mut embeddings = BTreeMap::new();
    let mut groups = BTreeMap::new();
    let mut lang_names = Vec::new();
    for (lang, vocab_size, lang_groups) in langs {
        embeddings.insert(
            lang.clone(),
            Tensor::param(&[*vocab_size, dim], uniform(&mut rng, vocab_size * dim)),
        );
        groups.insert(lang.clone(), lang_groups.clone());
        lang_names.push(lang.clone());
    }
    let sub_rows = subword_count.max(1);
    let subword_emb = Tensor::param(&[sub_rows, dim], uniform(&mut rng, sub_rows * dim));
    let encoder_fwd = lstm(&mut rng, dim, dim / 2);
    let encoder_bwd = lstm(&mut rng, dim, dim / 2);
    let mut decoders = BTreeMap::new();
    for lang in &lang_names {
        for dir in Direction::BOTH {
            decoders.insert((lang.clone(), dir), lstm(&mut rng, dim, dim));
        }
    }
    let output_proj = Tensor::param(&[dim, dim], uniform(&mut rng, dim * dim));
    let proj_q = head(&mut rng, dim, proj_dim);
    let proj_k = head(&mut rng, dim, proj_dim);

    ModelParams {
        dim,
        proj_dim,
        langs: lang_names,
        embeddings,
        subword_emb,
        subword_groups: groups,
        encoder_fwd,
        encoder_bwd,
        decoders,
        output_proj,
        proj_q,
        proj_k,
    }
}

/// Adam moments, one slot per named parameter.
#[derive(Debug)]
pub struct AdamState {
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    slots: Vec<AdamSlot>,
}

#[derive(Debug)]
struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(lr: f64, named: &[(String, Tensor)]) -> AdamState {
        AdamState {
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            slots: named
                .iter()
                .map(|(_, t)| AdamSlot {
                    m: vec![0.0; t.numel()],
                    v: vec![0.0; t.numel()],
                })
                .collect(),
        }
    }
}

/// One Adam update over every named parameter. Each tensor must carry a
/// gradient from the preceding backward pass; a missing one is an error, not
/// a silent freeze.
pub fn adam_step(
    state: &mut AdamState,
    named: &[(String, Tensor)],
    grad_clip: Option<f64>,
) -> Result<()> {
    debug_assert_eq!(state.slots.len(), named.len());
    let mut grads = Vec::with_capacity(named.len());
    for (name, tensor) in named {
        let g = tensor
            .grad()
            .ok_or_else(|| Error::IncompleteBackward { param: name.clone() })?;
        grads.push(g);
    }
    if let Some(max_norm) = grad_clip {
        let total: f64 = grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        if total > max_norm {
            let scale = max_norm / total;
            for g in &mut grads {
                for x in g.iter_mut() {
                    *x *= scale;
                }
            }
        }
    }

    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    for (slot, ((_, tensor), grad)) in state.slots.iter_mut().zip(named.iter().zip(&grads)) {
        let mut data = tensor.to_vec();
        for i in 0..data.len() {
            let g = grad[i];
            slot.m[i] = state.beta1 * slot.m[i] + (1.0 - state.beta1) * g;
            slot.v[i] = state.beta2 * slot.v[i] + (1.0 - state.beta2) * g * g;
            let m_hat = slot.m[i] / bc1;
            let v_hat = slot.v[i] / bc2;
            data[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
        tensor.set_data(data);
    }
    Ok(())
}

/// Outcome of one seeded run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub p_at_1: Option<f64>,
    pub loss_curve: Vec<f64>,
    /// Mean unweighted contrastive component per epoch; empty when the
    /// contrastive objective is off.
    pub ctl_curve: Vec<f64>,
    pub checkpoint_path: Option<PathBuf>,
}

/// Shuffle seed for one epoch of one run: a fixed mix of the run seed and
/// the epoch index through the documented generator.
pub fn epoch_shuffle_seed(run_seed: u64, epoch: usize) -> u64 {
    SplitMix64::new(run_seed.wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
        .next_u64()
}

/// Train one model per configured seed. When a dictionary is supplied the
/// final type-level P@1 lands in each result; when an output directory is
/// supplied each run writes a checkpoint there.
pub fn train(
    cfg: &TrainConfig,
    task: &Task,
    dict: Option<&Dictionary>,
    out_dir: Option<&Path>,
) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    cfg.seeds
        .iter()
        .map(|&seed| run_one(cfg, task, seed, dict, out_dir))
        .collect()
}

fn run_one(
    cfg: &TrainConfig,
    task: &Task,
    seed: u64,
    dict: Option<&Dictionary>,
    out_dir: Option<&Path>,
) -> Result<RunResult> {
    let (lang_specs, subword_count) = task.lang_specs();
    let params = init_params(seed, cfg.dim, cfg.proj_dim, &lang_specs, subword_count);
    let with_contrastive = cfg.use_contrastive();
    let named = params.trainable(with_contrastive);
    let mut adam = AdamState::new(cfg.lr, &named);

    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut ctl_curve = Vec::with_capacity(if with_contrastive { cfg.epochs } else { 0 });
    for epoch in 1..=cfg.epochs {
        let batches = make_batches(
            &task.corpus,
            &task.src_vocab,
            &task.tgt_vocab,
            cfg.batch_size,
            epoch_shuffle_seed(seed, epoch),
        )?;
        let mut epoch_loss = 0.0;
        let mut epoch_ctl = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let fwd = forward_batch(&params, batch)?;
            let mut total = fwd.translate.nll.add(&fwd.reconstruct.nll);
            if with_contrastive {
                let pooling = cfg.contrastive.pooling;
                let xs: Vec<SentenceRep> = fwd
                    .enc
                    .iter()
                    .enumerate()
                    .map(|(i, e)| pool_source(e, pooling, i))
                    .collect();
                let ys: Vec<SentenceRep> = fwd
                    .translate
                    .l2r
                    .iter()
                    .enumerate()
                    .map(|(i, t)| pool_target(t, pooling, i))
                    .collect();
                let recs: Vec<SentenceRep> = fwd
                    .reconstruct
                    .l2r
                    .iter()
                    .enumerate()
                    .map(|(i, t)| pool_reconstruction(t, pooling, i))
                    .collect();
                let ctl = combined_loss(
                    &params,
                    Some((&xs, &ys)),
                    Some((&xs, &recs)),
                    &cfg.contrastive,
                )?;
                epoch_ctl += ctl.item();
                total = total.add(&ctl.scale(cfg.contrastive.lambda));
            }
            let loss_value = total.item();
            if !loss_value.is_finite() {
                return Err(Error::Divergence { seed, epoch, batch: bi });
            }
            for (_, tensor) in &named {
                tensor.clear_grad();
            }
            total.backward();
            adam_step(&mut adam, &named, cfg.grad_clip)?;
            epoch_loss += loss_value;
        }
        loss_curve.push(epoch_loss / batches.len() as f64);
        if with_contrastive {
            ctl_curve.push(epoch_ctl / batches.len() as f64);
        }
    }

    let p_at_1 = match dict {
        Some(dict) => {
            let src = build_embedding_table(&params, &task.corpus.src_lang, &task.src_vocab);
            let tgt = build_embedding_table(&params, &task.corpus.tgt_lang, &task.tgt_vocab);
            Some(evaluate_p_at_1(&src, &tgt, dict, DEFAULT_CSLS_K)?.p_at_1)
        }
        None => None,
    };
    let checkpoint_path = match out_dir {
        Some(dir) => {
            let path = dir.join(format!("checkpoint_seed{seed}.txt"));
            crate::checkpoint::save(&path, &params, task, seed)?;
            Some(path)
        }
        None => None,
    };

    Ok(RunResult { seed, p_at_1, loss_curve, ctl_curve, checkpoint_path })
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedStats {
    pub scores: Vec<(u64, f64)>,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Aggregate final scores across seeded runs.
pub fn aggregate_runs(results: &[RunResult]) -> Result<SeedStats> {
    let scores: Vec<(u64, f64)> = results
        .iter()
        .filter_map(|r| r.p_at_1.map(|p| (r.seed, p)))
        .collect();
    if scores.is_empty() {
        return Err(Error::EmptyResults);
    }
    let values: Vec<f64> = scores.iter().map(|&(_, v)| v).collect();
    let (mean, std) = mean_std(&values);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(SeedStats { scores, mean, std, min, max })
}
