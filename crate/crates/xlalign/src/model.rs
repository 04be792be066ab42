//! Encoder-decoder architecture: subword-aware embeddings feed a bidirectional
//! LSTM encoder shared by all languages; each (language, direction) pair owns
//! a unidirectional LSTM decoder; attention and the output projection are
//! shared, and the output layer is tied to the target language's embedding
//! matrix.
//!
//! The same subword-aware embedding matrix serves as encoder input, decoder
//! input and tied output layer, so a language's word vectors receive gradient
//! from every role they play.

use std::collections::BTreeMap;

use crate::autodiff::Tensor;
use crate::corpus::{Batch, BOS, EOS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    L2R,
    R2L,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::L2R, Direction::R2L];

    pub fn tag(&self) -> &'static str {
        match self {
            Direction::L2R => "l2r",
            Direction::R2L => "r2l",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Translate,
    Reconstruct,
}

/// Fused-gate LSTM cell weights. Gate blocks are ordered input, forget,
/// cell, output inside the leading dimension.
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub w_x: Tensor, // [4H, D]
    pub w_h: Tensor, // [4H, H]
    pub b: Tensor,   // [4H]
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.w_x"), self.w_x.clone()),
            (format!("{prefix}.w_h"), self.w_h.clone()),
            (format!("{prefix}.b"), self.b.clone()),
        ]
    }
}

/// One step of the cell: returns (hidden, cell).
pub fn lstm_step(p: &LstmParams, x: &Tensor, h: &Tensor, c: &Tensor) -> (Tensor, Tensor) {
    let hsz = p.hidden;
    let pre = p.w_x.matvec(x).add(&p.w_h.matvec(h)).add(&p.b);
    let i = pre.slice(0, hsz).sigmoid();
    let f = pre.slice(hsz, 2 * hsz).sigmoid();
    let g = pre.slice(2 * hsz, 3 * hsz).tanh();
    let o = pre.slice(3 * hsz, 4 * hsz).sigmoid();
    let c_new = f.mul(c).add(&i.mul(&g));
    let h_new = o.mul(&c_new.tanh());
    (h_new, c_new)
}

/// Two affine layers with a ReLU between them.
#[derive(Debug, Clone)]
pub struct ProjectionHead {
    pub w1: Tensor, // [dp, d]
    pub b1: Tensor, // [dp]
    pub w2: Tensor, // [dp, dp]
    pub b2: Tensor, // [dp]
}

impl ProjectionHead {
    pub fn apply(&self, v: &Tensor) -> Tensor {
        let hidden = self.w1.matvec(v).add(&self.b1).relu();
        self.w2.matvec(&hidden).add(&self.b2)
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.w1"), self.w1.clone()),
            (format!("{prefix}.b1"), self.b1.clone()),
            (format!("{prefix}.w2"), self.w2.clone()),
            (format!("{prefix}.b2"), self.b2.clone()),
        ]
    }
}

/// All trainable weights plus the static word -> subword-id groups needed to
/// assemble subword-aware embeddings.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub dim: usize,
    pub proj_dim: usize,
    pub langs: Vec<String>,
    pub embeddings: BTreeMap<String, Tensor>, // E_lang: [V_lang, d]
    pub subword_emb: Tensor,                  // Z: [S, d]
    pub subword_groups: BTreeMap<String, Vec<Vec<usize>>>,
    pub encoder_fwd: LstmParams, // hidden d/2
    pub encoder_bwd: LstmParams, // hidden d/2
    pub decoders: BTreeMap<(String, Direction), LstmParams>, // hidden d
    pub output_proj: Tensor,     // W: [d, d]
    pub proj_q: ProjectionHead,
    pub proj_k: ProjectionHead,
}

impl ModelParams {
    /// Stable, documented parameter order: embeddings per language in
    /// construction order, subword table, encoder fwd/bwd, decoders per
    /// (language, direction), output projection, projection heads. Both
    /// initialization and the optimizer rely on this order.
    pub fn named(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for lang in &self.langs {
            out.push((format!("emb.{lang}"), self.embeddings[lang].clone()));
        }
        out.push(("subword.z".to_string(), self.subword_emb.clone()));
        out.extend(self.encoder_fwd.named("enc.fwd"));
        out.extend(self.encoder_bwd.named("enc.bwd"));
        for lang in &self.langs {
            for dir in Direction::BOTH {
                let key = (lang.clone(), dir);
                out.extend(self.decoders[&key].named(&format!("dec.{lang}.{}", dir.tag())));
            }
        }
        out.push(("attn.w".to_string(), self.output_proj.clone()));
        out.extend(self.proj_q.named("proj_q"));
        out.extend(self.proj_k.named("proj_k"));
        out
    }

    /// Trainable tensors for a run; the contrastive projection heads only
    /// train when the contrastive objective is active.
    pub fn trainable(&self, with_heads: bool) -> Vec<(String, Tensor)> {
        let mut named = self.named();
        if !with_heads {
            named.retain(|(name, _)| !name.starts_with("proj_"));
        }
        named
    }

    pub fn vocab_size(&self, lang: &str) -> usize {
        self.embeddings[lang].shape()[0]
    }

    fn decoder(&self, lang: &str, dir: Direction) -> Result<&LstmParams> {
        self.decoders.get(&(lang.to_string(), dir)).ok_or_else(|| {
            Error::Config(format!("no decoder for language `{lang}` direction {}", dir.tag()))
        })
    }
}

/// Subword-aware embedding matrix for one language: row w is
/// E[w] + mean of the subword embedding rows of w.
pub fn tilde_embeddings(params: &ModelParams, lang: &str) -> Tensor {
    let e = &params.embeddings[lang];
    let groups = &params.subword_groups[lang];
    e.add(&params.subword_emb.group_mean_rows(groups))
}

/// Subword-aware embedding of a single word id.
pub fn embed_static(params: &ModelParams, lang: &str, word_id: usize) -> Tensor {
    let e_row = params.embeddings[lang].row(word_id);
    let group = &params.subword_groups[lang][word_id];
    if group.is_empty() {
        e_row
    } else {
        e_row.add(&params.subword_emb.gather_rows(group).pool_avg())
    }
}

/// Static and contextual token states for one sentence.
#[derive(Debug, Clone)]
pub struct EncoderStates {
    pub r: Tensor, // [N, d]
    pub u: Tensor, // [N, d]
    pub len: usize,
}

/// Run the shared bidirectional encoder over a sentence's static embeddings.
/// Contextual state i concatenates the forward state at i with the backward
/// state at i; both chains start from zeros.
pub fn encode(params: &ModelParams, r: &Tensor) -> EncoderStates {
    let n = r.shape()[0];
    let half = params.dim / 2;
    let zero_h = Tensor::zeros(&[half]);
    let zero_c = Tensor::zeros(&[half]);

    let mut fwd = Vec::with_capacity(n);
    let (mut h, mut c) = (zero_h.clone(), zero_c.clone());
    for i in 0..n {
        let (nh, nc) = lstm_step(&params.encoder_fwd, &r.row(i), &h, &c);
        fwd.push(nh.clone());
        h = nh;
        c = nc;
    }
    let mut bwd = vec![Tensor::zeros(&[half]); n];
    let (mut h, mut c) = (zero_h, zero_c);
    for i in (0..n).rev() {
        let (nh, nc) = lstm_step(&params.encoder_bwd, &r.row(i), &h, &c);
        bwd[i] = nh.clone();
        h = nh;
        c = nc;
    }
    let rows: Vec<Tensor> = (0..n).map(|i| fwd[i].concat(&bwd[i])).collect();
    EncoderStates { r: r.clone(), u: Tensor::stack_rows(&rows), len: n }
}

/// Encode a sentence of word ids against a subword-aware embedding matrix.
pub fn encode_sentence(params: &ModelParams, emb: &Tensor, ids: &[usize]) -> EncoderStates {
    encode(params, &emb.gather_rows(ids))
}

/// Attention step: scores are dot products of the decoder state with each
/// contextual state, the context mixes contextual and static embeddings, and
/// the output is W applied to their sum with the decoder state.
pub fn attend(h: &Tensor, u: &Tensor, r: &Tensor, w: &Tensor) -> (Tensor, Tensor) {
    let alpha = u.matvec(h).softmax(0);
    let u_bar = alpha.vecmat(u);
    let r_bar = alpha.vecmat(r);
    let h_prime = w.matvec(&u_bar.add(&r_bar).add(h));
    (h_prime, alpha)
}

/// Per-step record of one decoding direction. `hidden` holds the raw LSTM
/// states (one per prediction step, target length + 1 of them), `attn` the
/// attention rows, `logits` the tied-output scores, and `golds` the ids each
/// step is trained to predict.
#[derive(Debug, Clone)]
pub struct DecoderTrace {
    pub direction: Direction,
    pub hidden: Vec<Tensor>,
    pub attn: Vec<Tensor>,
    pub logits: Vec<Tensor>,
    pub golds: Vec<usize>,
    pub target_len: usize,
}

/// Decode a target sentence against encoded source states. Left-to-right
/// consumes BOS, y_1..y_M and predicts y_1..y_M, EOS; right-to-left consumes
/// EOS, y_M..y_1 and predicts y_M..y_1, BOS.
pub fn decode(
    params: &ModelParams,
    lang: &str,
    direction: Direction,
    target_ids: &[usize],
    enc: &EncoderStates,
    emb_t: &Tensor,
) -> Result<DecoderTrace> {
    let cell = params.decoder(lang, direction)?;
    let m = target_ids.len();
    if m == 0 {
        return Err(Error::Shape("cannot decode an empty target sentence".into()));
    }
    let (inputs, golds): (Vec<usize>, Vec<usize>) = match direction {
        Direction::L2R => {
            let mut ins = vec![BOS];
            ins.extend_from_slice(target_ids);
            let mut gold = target_ids.to_vec();
            gold.push(EOS);
            (ins, gold)
        }
        Direction::R2L => {
            let mut ins = vec![EOS];
            ins.extend(target_ids.iter().rev().copied());
            let mut gold: Vec<usize> = target_ids.iter().rev().copied().collect();
            gold.push(BOS);
            (ins, gold)
        }
    };

    let d = params.dim;
    let mut h = Tensor::zeros(&[d]);
    let mut c = Tensor::zeros(&[d]);
    let mut trace = DecoderTrace {
        direction,
        hidden: Vec::with_capacity(m + 1),
        attn: Vec::with_capacity(m + 1),
        logits: Vec::with_capacity(m + 1),
        golds,
        target_len: m,
    };
    for &input_id in &inputs {
        let x = emb_t.row(input_id);
        let (nh, nc) = lstm_step(cell, &x, &h, &c);
        h = nh;
        c = nc;
        let (h_prime, alpha) = attend(&h, &enc.u, &enc.r, &params.output_proj);
        let logits = emb_t.matvec(&h_prime);
        trace.hidden.push(h.clone());
        trace.attn.push(alpha);
        trace.logits.push(logits);
    }
    Ok(trace)
}

/// Mean negative log-likelihood of the gold ids under the trace's logits.
pub fn nll_loss(trace: &DecoderTrace, golds: &[usize]) -> Result<Tensor> {
    if golds.len() != trace.logits.len() {
        return Err(Error::Shape(format!(
            "gold length {} does not match {} decoder steps",
            golds.len(),
            trace.logits.len()
        )));
    }
    let steps: Vec<Tensor> = trace
        .logits
        .iter()
        .zip(golds)
        .map(|(logits, &gold)| logits.log_softmax().get(gold).neg())
        .collect();
    Ok(Tensor::stack_scalars(&steps).mean())
}

/// Decoding results for one mode over a whole batch.
#[derive(Debug)]
pub struct ModeForward {
    pub nll: Tensor,
    pub l2r: Vec<DecoderTrace>,
    pub r2l: Vec<DecoderTrace>,
}

/// Shared-encoder forward over a batch: one encoder pass per source
/// sentence feeds both the translation and the reconstruction decoders.
#[derive(Debug)]
pub struct BatchForward {
    pub enc: Vec<EncoderStates>,
    pub translate: ModeForward,
    pub reconstruct: ModeForward,
}

fn decode_mode(
    params: &ModelParams,
    batch: &Batch,
    enc: &[EncoderStates],
    emb_src: &Tensor,
    emb_tgt: &Tensor,
    mode: Mode,
) -> Result<ModeForward> {
    let (lang, emb): (&str, &Tensor) = match mode {
        Mode::Translate => {
            if batch.src_lang == batch.tgt_lang {
                return Err(Error::Config(
                    "translate mode requires distinct source and target languages".into(),
                ));
            }
            (&batch.tgt_lang, emb_tgt)
        }
        Mode::Reconstruct => (&batch.src_lang, emb_src),
    };
    let mut l2r = Vec::with_capacity(batch.size());
    let mut r2l = Vec::with_capacity(batch.size());
    let mut losses = Vec::with_capacity(batch.size());
    for (i, enc_i) in enc.iter().enumerate() {
        let target: &[usize] = match mode {
            Mode::Translate => batch.tgt_sentence(i),
            Mode::Reconstruct => batch.src_sentence(i),
        };
        let tl = decode(params, lang, Direction::L2R, target, enc_i, emb)?;
        let tr = decode(params, lang, Direction::R2L, target, enc_i, emb)?;
        let nl = nll_loss(&tl, &tl.golds.clone())?;
        let nr = nll_loss(&tr, &tr.golds.clone())?;
        losses.push(nl.add(&nr).scale(0.5));
        l2r.push(tl);
        r2l.push(tr);
    }
    Ok(ModeForward { nll: Tensor::stack_scalars(&losses).mean(), l2r, r2l })
}

/// Encode every source sentence once, then decode the translation and the
/// reconstruction against the same encoder states.
pub fn forward_batch(params: &ModelParams, batch: &Batch) -> Result<BatchForward> {
    let emb_src = tilde_embeddings(params, &batch.src_lang);
    let emb_tgt = tilde_embeddings(params, &batch.tgt_lang);
    let enc: Vec<EncoderStates> = (0..batch.size())
        .map(|i| encode_sentence(params, &emb_src, batch.src_sentence(i)))
        .collect();
    let translate = decode_mode(params, batch, &enc, &emb_src, &emb_tgt, Mode::Translate)?;
    let reconstruct = decode_mode(params, batch, &enc, &emb_src, &emb_tgt, Mode::Reconstruct)?;
    Ok(BatchForward { enc, translate, reconstruct })
}

/// Single-mode forward pass over a batch (fresh encoder pass).
#[derive(Debug)]
pub struct PairForward {
    pub nll: Tensor,
    pub enc: Vec<EncoderStates>,
    pub l2r: Vec<DecoderTrace>,
    pub r2l: Vec<DecoderTrace>,
}

pub fn forward_pair(params: &ModelParams, batch: &Batch, mode: Mode) -> Result<PairForward> {
    let emb_src = tilde_embeddings(params, &batch.src_lang);
    let emb_tgt = tilde_embeddings(params, &batch.tgt_lang);
    let enc: Vec<EncoderStates> = (0..batch.size())
        .map(|i| encode_sentence(params, &emb_src, batch.src_sentence(i)))
        .collect();
    let fwd = decode_mode(params, batch, &enc, &emb_src, &emb_tgt, mode)?;
    Ok(PairForward { nll: fwd.nll, enc, l2r: fwd.l2r, r2l: fwd.r2l })
}
