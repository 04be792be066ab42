//! Contrastive sentence objectives over pooled encoder/decoder states.
//!
//! A source sentence's pooled encoder states form the query and its aligned
//! target sentence's pooled decoder states form the positive key; the other
//! batch members supply negatives, drawn either from the opposite side only
//! (inter view) or from both sides (inter+intra view). Scores are cosine
//! similarities of nonlinearly projected representations, and every loss is
//! evaluated in log-sum-exp form so small temperatures cannot overflow.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{DecoderTrace, EncoderStates, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Inter,
    InterIntra,
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            View::Inter => write!(f, "inter"),
            View::InterIntra => write!(f, "inter-intra"),
        }
    }
}

impl FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<View> {
        match s {
            "inter" => Ok(View::Inter),
            "inter-intra" => Ok(View::InterIntra),
            other => Err(Error::Config(format!(
                "unknown view `{other}` (expected `inter` or `inter-intra`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Average,
    Max,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pooling::Average => write!(f, "avg"),
            Pooling::Max => write!(f, "max"),
        }
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Pooling> {
        match s {
            "avg" => Ok(Pooling::Average),
            "max" => Ok(Pooling::Max),
            other => Err(Error::Config(format!(
                "unknown pooling `{other}` (expected `avg` or `max`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

/// The single source of truth for the contrastive defaults, temperature
/// included.
#[derive(Debug, Clone, Copy)]
pub struct ContrastiveConfig {
    pub tau: f64,
    pub view: View,
    pub pooling: Pooling,
    pub lambda: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            tau: 0.5,
            view: View::InterIntra,
            pooling: Pooling::Average,
            lambda: 1.0,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// One pooled sentence vector with its provenance in the batch.
#[derive(Debug, Clone)]
pub struct SentenceRep {
    pub vec: Tensor,
    pub side: Side,
    pub batch_index: usize,
}

fn pool(matrix: &Tensor, pooling: Pooling) -> Tensor {
    match pooling {
        Pooling::Average => matrix.pool_avg(),
        Pooling::Max => matrix.pool_max(),
    }
}

/// Pool a sentence's contextual encoder states. Only real token positions
/// enter the matrix, so padding never contributes.
pub fn pool_source(enc: &EncoderStates, pooling: Pooling, batch_index: usize) -> SentenceRep {
    SentenceRep { vec: pool(&enc.u, pooling), side: Side::Source, batch_index }
}

/// Pool the left-to-right decoder states over the target-word steps,
/// excluding the terminal end-of-sentence prediction step.
pub fn pool_target(trace: &DecoderTrace, pooling: Pooling, batch_index: usize) -> SentenceRep {
    let states = Tensor::stack_rows(&trace.hidden[..trace.target_len]);
    SentenceRep { vec: pool(&states, pooling), side: Side::Target, batch_index }
}

/// As `pool_target`, but labeled as a same-side representation (used for
/// reconstruction keys).
pub fn pool_reconstruction(
    trace: &DecoderTrace,
    pooling: Pooling,
    batch_index: usize,
) -> SentenceRep {
    let mut rep = pool_target(trace, pooling, batch_index);
    rep.side = Side::Source;
    rep
}

/// Cosine similarity between the projected query and projected key.
/// Temperature division happens inside the losses, not here.
pub fn score(params: &ModelParams, q: &SentenceRep, k: &SentenceRep) -> Result<Tensor> {
    let pq = params.proj_q.apply(&q.vec);
    let pk = params.proj_k.apply(&k.vec);
    for (name, v) in [("query", &pq), ("key", &pk)] {
        let norm: f64 = v.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 0.0 {
            return Err(Error::DegenerateVector {
                context: format!("projected {name} representation"),
            });
        }
    }
    Ok(pq.cosine(&pk))
}

/// Negative keys for batch element `i`. A source-side query takes the other
/// target reps under the inter view and additionally the other source reps
/// under inter+intra; a target-side query swaps the roles. The positive
/// partner (index i of the opposite side) is never included.
pub fn sample_negatives<'a>(
    source_reps: &'a [SentenceRep],
    target_reps: &'a [SentenceRep],
    i: usize,
    query_side: Side,
    view: View,
) -> Result<Vec<&'a SentenceRep>> {
    let n = source_reps.len();
    if n != target_reps.len() {
        return Err(Error::Shape(format!(
            "source/target rep counts differ: {n} vs {}",
            target_reps.len()
        )));
    }
    if n < 2 {
        return Err(Error::InsufficientNegatives { batch: n });
    }
    let (opposite, same) = match query_side {
        Side::Source => (target_reps, source_reps),
        Side::Target => (source_reps, target_reps),
    };
    let mut negs: Vec<&SentenceRep> =
        opposite.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, r)| r).collect();
    if view == View::InterIntra {
        negs.extend(same.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, r)| r));
    }
    Ok(negs)
}

/// Temperature-scaled softmax loss of one positive against a set of
/// negatives, computed as log-sum-exp minus the positive logit.
pub fn info_nce(positive: &Tensor, negatives: &[Tensor], tau: f64) -> Result<Tensor> {
    if negatives.is_empty() {
        return Err(Error::InsufficientNegatives { batch: 1 });
    }
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    let mut all = Vec::with_capacity(negatives.len() + 1);
    all.push(positive.clone());
    all.extend(negatives.iter().cloned());
    let logits = Tensor::stack_scalars(&all).scale(1.0 / tau);
    Ok(logits.log_sum_exp().add(&positive.scale(1.0 / tau).neg()))
}

/// Contrastive loss for the source sentence at batch index `i`: query is its
/// pooled encoder rep, positive key its target's pooled decoder rep, and
/// negatives follow the configured view.
pub fn ctl_source(
    params: &ModelParams,
    source_reps: &[SentenceRep],
    target_reps: &[SentenceRep],
    i: usize,
    cfg: &ContrastiveConfig,
) -> Result<Tensor> {
    let q = &source_reps[i];
    let positive = score(params, q, &target_reps[i])?;
    let negatives = sample_negatives(source_reps, target_reps, i, Side::Source, cfg.view)?
        .into_iter()
        .map(|k| score(params, q, k))
        .collect::<Result<Vec<_>>>()?;
    info_nce(&positive, &negatives, cfg.tau)
}

/// Mirror of `ctl_source` with the target sentence as the query.
pub fn ctl_target(
    params: &ModelParams,
    source_reps: &[SentenceRep],
    target_reps: &[SentenceRep],
    i: usize,
    cfg: &ContrastiveConfig,
) -> Result<Tensor> {
    let q = &target_reps[i];
    let positive = score(params, q, &source_reps[i])?;
    let negatives = sample_negatives(source_reps, target_reps, i, Side::Target, cfg.view)?
        .into_iter()
        .map(|k| score(params, q, k))
        .collect::<Result<Vec<_>>>()?;
    info_nce(&positive, &negatives, cfg.tau)
}

/// Batch translation loss: both query directions averaged over 2n terms.
pub fn translation_ctl_loss(
    params: &ModelParams,
    source_reps: &[SentenceRep],
    target_reps: &[SentenceRep],
    cfg: &ContrastiveConfig,
) -> Result<Tensor> {
    let n = source_reps.len();
    if n < 2 {
        return Err(Error::InsufficientNegatives { batch: n });
    }
    let mut terms = Vec::with_capacity(2 * n);
    for i in 0..n {
        terms.push(ctl_source(params, source_reps, target_reps, i, cfg)?);
        terms.push(ctl_target(params, source_reps, target_reps, i, cfg)?);
    }
    Ok(Tensor::stack_scalars(&terms).mean())
}

/// Batch reconstruction loss: one-sided, querying each pooled encoder rep
/// against its own reconstruction with the other reconstructions as
/// negatives.
pub fn reconstruction_ctl_loss(
    params: &ModelParams,
    queries: &[SentenceRep],
    reconstruction_reps: &[SentenceRep],
    cfg: &ContrastiveConfig,
) -> Result<Tensor> {
    let n = queries.len();
    if n != reconstruction_reps.len() {
        return Err(Error::Shape(format!(
            "query/reconstruction rep counts differ: {n} vs {}",
            reconstruction_reps.len()
        )));
    }
    if n < 2 {
        return Err(Error::InsufficientNegatives { batch: n });
    }
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let q = &queries[i];
        let positive = score(params, q, &reconstruction_reps[i])?;
        let negatives = reconstruction_reps
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, k)| score(params, q, k))
            .collect::<Result<Vec<_>>>()?;
        terms.push(info_nce(&positive, &negatives, cfg.tau)?);
    }
    Ok(Tensor::stack_scalars(&terms).mean())
}

/// Sum of the translation loss (when source and target languages differ) and
/// the reconstruction loss (when they coincide); a batch exercising both
/// modes contributes both.
pub fn combined_loss(
    params: &ModelParams,
    translate: Option<(&[SentenceRep], &[SentenceRep])>,
    reconstruct: Option<(&[SentenceRep], &[SentenceRep])>,
    cfg: &ContrastiveConfig,
) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    if let Some((xs, ys)) = translate {
        total = Some(translation_ctl_loss(params, xs, ys, cfg)?);
    }
    if let Some((qs, ks)) = reconstruct {
        let rec = reconstruction_ctl_loss(params, qs, ks, cfg)?;
        total = Some(match total {
            Some(t) => t.add(&rec),
            None => rec,
        });
    }
    Ok(total.unwrap_or_else(|| Tensor::scalar(0.0)))
}
