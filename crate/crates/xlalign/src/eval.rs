//! CSLS-based retrieval, in-sentence word alignment, dictionary P@1 scoring
//! and paired significance testing.
//!
//! CSLS corrects cosine similarity for hubness by subtracting each vector's
//! mean similarity to its K nearest cross-lingual neighbors:
//! 2 cos(x, y) - mean_K cos(x, N_T(x)) - mean_K cos(N_S(y), y). K defaults
//! to 3 and is clipped to the candidate count; a vector is eligible as its
//! own neighbor. Dictionary retrieval draws neighborhoods from the same
//! candidate set it retrieves over (the non-special vocabulary rows), and
//! in-sentence alignment from the two sentences themselves.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::corpus::{Dictionary, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{encode_sentence, tilde_embeddings, ModelParams};
use crate::train::mean_std;

pub const DEFAULT_CSLS_K: usize = 3;

/// Type-level subword-aware embeddings for one language, materialized as
/// plain rows for retrieval.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub vocab: Vocabulary,
    pub dim: usize,
    rows: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(vocab: Vocabulary, dim: usize, rows: Vec<f64>) -> EmbeddingTable {
        assert_eq!(rows.len(), vocab.size() * dim, "embedding table size mismatch");
        EmbeddingTable { vocab, dim, rows }
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.rows[id * self.dim..(id + 1) * self.dim]
    }

    pub fn size(&self) -> usize {
        self.vocab.size()
    }
}

/// Materialize the word embedding plus mean-of-subwords rows for a language.
pub fn build_embedding_table(
    params: &ModelParams,
    lang: &str,
    vocab: &Vocabulary,
) -> EmbeddingTable {
    let d = params.dim;
    let e = params.embeddings[lang].to_vec();
    let z = params.subword_emb.to_vec();
    let groups = &params.subword_groups[lang];
    let mut rows = e;
    for (w, group) in groups.iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        let inv = 1.0 / group.len() as f64;
        for &s in group {
            for j in 0..d {
                rows[w * d + j] += z[s * d + j] * inv;
            }
        }
    }
    EmbeddingTable::new(vocab.clone(), d, rows)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm(a) * norm(b))
}

fn check_nonzero(v: &[f64], context: &str) -> Result<()> {
    if norm(v) <= 0.0 {
        return Err(Error::DegenerateVector { context: context.to_string() });
    }
    Ok(())
}

/// Mean cosine of `query` against its K nearest rows of `candidates`, with
/// K clipped to the candidate count. Ties prefer the lower index.
fn neighborhood_mean(query: &[f64], candidates: &[&[f64]], k: usize) -> f64 {
    let mut sims: Vec<(f64, usize)> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| (cos(query, c), i))
        .collect();
    sims.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let k = k.min(sims.len());
    sims[..k].iter().map(|(s, _)| s).sum::<f64>() / k as f64
}

/// Cross-domain similarity local scaling between two vectors, with
/// neighborhoods drawn from the supplied candidate sets.
pub fn csls(
    x: &[f64],
    y: &[f64],
    target_candidates: &[&[f64]],
    source_candidates: &[&[f64]],
    k: usize,
) -> Result<f64> {
    if target_candidates.is_empty() || source_candidates.is_empty() {
        return Err(Error::Config("CSLS requires nonempty candidate sets".into()));
    }
    if k == 0 {
        return Err(Error::Config("CSLS neighborhood size must be at least 1".into()));
    }
    check_nonzero(x, "CSLS query")?;
    check_nonzero(y, "CSLS key")?;
    for c in target_candidates.iter().chain(source_candidates.iter()) {
        check_nonzero(c, "CSLS candidate")?;
    }
    let r_t = neighborhood_mean(x, target_candidates, k);
    let r_s = neighborhood_mean(y, source_candidates, k);
    Ok(2.0 * cos(x, y) - r_t - r_s)
}

/// One aligned position pair within a sentence pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentPair {
    pub src_index: usize,
    pub tgt_index: usize,
    pub score: f64,
}

/// Align every source position to the target position with the highest CSLS
/// over contextual encoder states, neighborhoods drawn from within the two
/// sentences. Ties break toward the lower target index.
pub fn align_sentence(
    params: &ModelParams,
    src_lang: &str,
    src_ids: &[usize],
    tgt_lang: &str,
    tgt_ids: &[usize],
    k: usize,
) -> Result<Vec<AlignmentPair>> {
    if src_ids.is_empty() || tgt_ids.is_empty() {
        return Err(Error::Shape("cannot align an empty sentence".into()));
    }
    let d = params.dim;
    let u_src = encode_sentence(params, &tilde_embeddings(params, src_lang), src_ids)
        .u
        .to_vec();
    let u_tgt = encode_sentence(params, &tilde_embeddings(params, tgt_lang), tgt_ids)
        .u
        .to_vec();
    let src_rows: Vec<&[f64]> = u_src.chunks(d).collect();
    let tgt_rows: Vec<&[f64]> = u_tgt.chunks(d).collect();

    let mut pairs = Vec::with_capacity(src_rows.len());
    for (i, x) in src_rows.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for (j, y) in tgt_rows.iter().enumerate() {
            let s = csls(x, y, &tgt_rows, &src_rows, k)?;
            if best.is_none_or(|(bs, _)| s > bs) {
                best = Some((s, j));
            }
        }
        let (score, j) = best.unwrap();
        pairs.push(AlignmentPair { src_index: i, tgt_index: j, score });
    }
    Ok(pairs)
}

/// Pharaoh-style rendering: space-separated `srcIdx-tgtIdx` tokens.
pub fn format_alignment(pairs: &[AlignmentPair]) -> String {
    pairs
        .iter()
        .map(|p| format!("{}-{}", p.src_index, p.tgt_index))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Precision at 1 in percent.
    pub p_at_1: f64,
    pub hits: usize,
    pub evaluated: usize,
    pub skipped: usize,
}

/// For every dictionary source word present in the source vocabulary,
/// retrieve the CSLS-nearest target vocabulary word (specials excluded) and
/// count a hit when it belongs to the entry's translation set.
pub fn evaluate_p_at_1(
    src_table: &EmbeddingTable,
    tgt_table: &EmbeddingTable,
    dict: &Dictionary,
    k: usize,
) -> Result<EvalReport> {
    let first = Vocabulary::is_special(3) as usize * 4; // specials occupy ids 0..4
    let src_ids: Vec<usize> = (first..src_table.size()).collect();
    let tgt_ids: Vec<usize> = (first..tgt_table.size()).collect();
    if tgt_ids.is_empty() || src_ids.is_empty() {
        return Err(Error::NoEvaluableEntries);
    }
    let src_rows: Vec<&[f64]> = src_ids.iter().map(|&i| src_table.row(i)).collect();
    let tgt_rows: Vec<&[f64]> = tgt_ids.iter().map(|&i| tgt_table.row(i)).collect();
    for r in src_rows.iter().chain(tgt_rows.iter()) {
        check_nonzero(r, "retrieval candidate")?;
    }

    // The query-side hub term is constant per query, so the argmax needs
    // only the per-candidate hub penalties, precomputed once.
    let r_s: Vec<f64> = tgt_rows
        .iter()
        .map(|y| neighborhood_mean(y, &src_rows, k))
        .collect();

    let mut hits = 0;
    let mut evaluated = 0;
    let mut skipped = 0;
    for (word, translations) in &dict.entries {
        if !src_table.vocab.contains(word) || Vocabulary::is_special(src_table.vocab.id(word)) {
            skipped += 1;
            continue;
        }
        evaluated += 1;
        let x = src_table.row(src_table.vocab.id(word));
        let mut best: Option<(f64, usize)> = None;
        for (ci, y) in tgt_rows.iter().enumerate() {
            let s = 2.0 * cos(x, y) - r_s[ci];
            if best.is_none_or(|(bs, _)| s > bs) {
                best = Some((s, ci));
            }
        }
        let retrieved = tgt_table.vocab.token(tgt_ids[best.unwrap().1]);
        if translations.contains(retrieved) {
            hits += 1;
        }
    }
    if evaluated == 0 {
        return Err(Error::NoEvaluableEntries);
    }
    Ok(EvalReport {
        p_at_1: hits as f64 / evaluated as f64 * 100.0,
        hits,
        evaluated,
        skipped,
    })
}

/// Two-tailed paired t-test over per-dataset score differences. The t CDF is
/// evaluated through the regularized incomplete beta function (continued
/// fraction, accurate well past 1e-6). Zero variance with a nonzero mean is
/// treated as an infinite statistic (p = 0); all-zero differences are an
/// error.
pub fn paired_t_test(scores_a: &[f64], scores_b: &[f64]) -> Result<f64> {
    if scores_a.len() != scores_b.len() {
        return Err(Error::Shape(format!(
            "paired t-test needs equal lengths, got {} and {}",
            scores_a.len(),
            scores_b.len()
        )));
    }
    let n = scores_a.len();
    if n < 2 {
        return Err(Error::Config("paired t-test needs at least 2 pairs".into()));
    }
    let diffs: Vec<f64> = scores_a.iter().zip(scores_b).map(|(a, b)| a - b).collect();
    if diffs.iter().all(|&d| d == 0.0) {
        return Err(Error::DegenerateVariance);
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n as f64 - 1.0);
    if var == 0.0 {
        return Ok(0.0);
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let nu = (n - 1) as f64;
    // two-tailed p = I_{nu/(nu+t^2)}(nu/2, 1/2)
    Ok(incomplete_beta(nu / (nu + t * t), nu / 2.0, 0.5))
}

/// Lanczos log-gamma (g = 7, 9 coefficients), |error| < 1e-13 on x > 0.
#[allow(clippy::excessive_precision)]
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        return std::f64::consts::PI.ln() - (std::f64::consts::PI * x).sin().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEFFS[0];
    let t = x + 7.5;
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
fn incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (a * x.ln() + b * (1.0 - x).ln() + ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b))
        .exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    }
}

fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Report CSV: a `seed,p_at_1` header, one row per seed, then mean, std,
/// min and max summary rows. Values use the shortest exact decimal form so
/// the file round-trips bit for bit.
pub fn emit_report(path: impl AsRef<Path>, scores: &[(u64, f64)]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::EmptyResults);
    }
    let path = path.as_ref();
    let values: Vec<f64> = scores.iter().map(|&(_, v)| v).collect();
    let (mean, std) = mean_std(&values);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = String::from("seed,p_at_1\n");
    for (seed, value) in scores {
        writeln!(out, "{seed},{value}").unwrap();
    }
    writeln!(out, "mean,{mean}").unwrap();
    writeln!(out, "std,{std}").unwrap();
    writeln!(out, "min,{min}").unwrap();
    writeln!(out, "max,{max}").unwrap();
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read the per-seed data rows back out of a report CSV.
pub fn parse_report(path: impl AsRef<Path>) -> Result<Vec<(u64, f64)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if lineno == 1 {
            if line != "seed,p_at_1" {
                return Err(Error::parse(path, 1, "expected header `seed,p_at_1`"));
            }
            continue;
        }
        let Some((key, value)) = line.split_once(',') else {
            return Err(Error::parse(path, lineno, "expected `key,value`"));
        };
        if ["mean", "std", "min", "max"].contains(&key) {
            continue;
        }
        let seed: u64 = key
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad seed `{key}`")))?;
        let v: f64 = value
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad score `{value}`")))?;
        rows.push((seed, v));
    }
    if rows.is_empty() {
        return Err(Error::EmptyResults);
    }
    Ok(rows)
}
