//! Corpus and dictionary ingestion, subword segmentation, vocabularies and
//! padded training batches.
//!
//! File formats are line-oriented UTF-8: parallel corpora carry one sentence
//! pair per line with a single TAB between the two space-tokenized sides, and
//! dictionaries carry one `source<TAB>target` pair per line (repeats express
//! polysemy). Subword segmentation is a deterministic byte-pair-encoding
//! learned by greedy pair-frequency merges, with an exact character-level
//! bypass for languages like Chinese.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";

const SPECIAL_TOKENS: [&str; 4] = [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN];

/// Token <-> id maps for one language. Ids 0..3 are the fixed specials and
/// the rest are assigned densely in descending-frequency order.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    pub lang: String,
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Keep tokens with frequency >= min_count, ordered by descending
    /// frequency then lexicographically; everything else maps to UNK.
    pub fn build<'a>(
        lang: &str,
        tokens: impl IntoIterator<Item = &'a str>,
        min_count: usize,
    ) -> Vocabulary {
        assert!(min_count >= 1, "min_count must be at least 1");
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for tok in tokens {
            *counts.entry(tok).or_insert(0) += 1;
        }
        let mut kept: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|&(t, c)| c as usize >= min_count && !SPECIAL_TOKENS.contains(&t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut id_to_token: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(kept.into_iter().map(|(t, _)| t.to_string()));
        Vocabulary::from_tokens(lang, id_to_token)
    }

    /// Rebuild from an explicit id-ordered token list (checkpoint loading).
    pub fn from_tokens(lang: &str, id_to_token: Vec<String>) -> Vocabulary {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { lang: lang.to_string(), token_to_id, id_to_token }
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    /// Id of a token, falling back to UNK.
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIAL_TOKENS.len()
    }
}

/// Ordered byte-pair merge rules plus the symbol inventory they induce.
/// Symbol id 0 is the unknown-character fallback; characters and merge
/// outputs follow in deterministic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordModel {
    pub char_level: bool,
    pub merges: Vec<(String, String)>,
    symbols: Vec<String>,
    symbol_to_id: HashMap<String, usize>,
}

pub const SUB_UNK: usize = 0;

impl SubwordModel {
    /// Learn a BPE merge table from a token stream. Merges are chosen by
    /// highest pair frequency, ties broken toward the lexicographically
    /// smallest pair, until the content vocabulary (characters plus merge
    /// outputs) reaches `target_vocab_size` or no pairs remain. With
    /// `char_level` the model is the bare character inventory.
    pub fn train<'a>(
        tokens: impl IntoIterator<Item = &'a str>,
        target_vocab_size: usize,
        char_level: bool,
    ) -> Result<SubwordModel> {
        let mut word_counts: BTreeMap<Vec<String>, u64> = BTreeMap::new();
        let mut chars: BTreeSet<String> = BTreeSet::new();
        for tok in tokens {
            let symbols: Vec<String> = tok.chars().map(|c| c.to_string()).collect();
            if symbols.is_empty() {
                continue;
            }
            chars.extend(symbols.iter().cloned());
            *word_counts.entry(symbols).or_insert(0) += 1;
        }

        if char_level {
            return Ok(SubwordModel::assemble(true, chars, Vec::new()));
        }
        if target_vocab_size < chars.len() {
            return Err(Error::Config(format!(
                "subword target vocabulary {} is below the character inventory {}",
                target_vocab_size,
                chars.len()
            )));
        }

        let mut merges: Vec<(String, String)> = Vec::new();
        let mut vocab_count = chars.len();
        let mut words: Vec<(Vec<String>, u64)> = word_counts.into_iter().collect();
        while vocab_count < target_vocab_size {
            let mut pair_counts: BTreeMap<(String, String), u64> = BTreeMap::new();
            for (symbols, count) in &words {
                for window in symbols.windows(2) {
                    let key = (window[0].clone(), window[1].clone());
                    *pair_counts.entry(key).or_insert(0) += count;
                }
            }
            // BTreeMap iterates in sorted order, so strict > keeps the
            // lexicographically smallest pair among ties.
            let best = pair_counts
                .into_iter()
                .fold(None::<((String, String), u64)>, |acc, (pair, c)| match &acc {
                    Some((_, bc)) if *bc >= c => acc,
                    _ => Some((pair, c)),
                });
            let Some((pair, _)) = best else { break };
            for (symbols, _) in &mut words {
                apply_merge(symbols, &pair);
            }
            merges.push(pair);
            vocab_count += 1;
        }
        Ok(SubwordModel::assemble(false, chars, merges))
    }

    fn assemble(char_level: bool, chars: BTreeSet<String>, merges: Vec<(String, String)>) -> Self {
        let mut symbols = vec![UNK_TOKEN.to_string()];
        symbols.extend(chars);
        symbols.extend(merges.iter().map(|(a, b)| format!("{a}{b}")));
        let symbol_to_id = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        SubwordModel { char_level, merges, symbols, symbol_to_id }
    }

    pub fn vocab_size(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.symbols[id]
    }

    /// Deterministic segmentation: split to characters, map characters
    /// outside the inventory to the unknown symbol, then apply the merges in
    /// learned order.
    pub fn segment_symbols(&self, word: &str) -> Vec<String> {
        let mut symbols: Vec<String> = word
            .chars()
            .map(|c| {
                let s = c.to_string();
                if self.symbol_to_id.contains_key(&s) {
                    s
                } else {
                    UNK_TOKEN.to_string()
                }
            })
            .collect();
        if symbols.is_empty() {
            symbols.push(UNK_TOKEN.to_string());
        }
        for pair in &self.merges {
            apply_merge(&mut symbols, pair);
        }
        symbols
    }

    /// Segmentation as local symbol ids.
    pub fn segment(&self, word: &str) -> Vec<usize> {
        self.segment_symbols(word)
            .iter()
            .map(|s| self.symbol_to_id.get(s).copied().unwrap_or(SUB_UNK))
            .collect()
    }

    /// Line-oriented serialization: header lines with the char_level flag
    /// and vocab size, the character inventory, then one merge per line in
    /// learned order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let n_chars = self.symbols.len() - 1 - self.merges.len();
        writeln!(out, "char_level {}", self.char_level).unwrap();
        writeln!(out, "vocab_size {}", self.vocab_size()).unwrap();
        writeln!(
            out,
            "chars {}",
            self.symbols[1..1 + n_chars].join(" ")
        )
        .unwrap();
        for (a, b) in &self.merges {
            writeln!(out, "merge {a} {b}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<SubwordModel> {
        let mut char_level = None;
        let mut vocab_size = None;
        let mut chars: BTreeSet<String> = BTreeSet::new();
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(2, ' ');
            let key = parts.next().unwrap_or("");
            let rest = parts.next().unwrap_or("");
            match key {
                "char_level" => {
                    char_level = Some(rest.parse::<bool>().map_err(|_| {
                        Error::Checkpoint(format!("bad char_level flag at line {}", i + 1))
                    })?)
                }
                "vocab_size" => {
                    vocab_size = Some(rest.parse::<usize>().map_err(|_| {
                        Error::Checkpoint(format!("bad vocab_size at line {}", i + 1))
                    })?)
                }
                "chars" => chars.extend(rest.split(' ').map(|s| s.to_string())),
                "merge" => {
                    let mut mp = rest.splitn(2, ' ');
                    match (mp.next(), mp.next()) {
                        (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => {
                            merges.push((a.to_string(), b.to_string()))
                        }
                        _ => {
                            return Err(Error::Checkpoint(format!(
                                "bad merge rule at line {}",
                                i + 1
                            )))
                        }
                    }
                }
                other => {
                    return Err(Error::Checkpoint(format!(
                        "unknown subword-model key `{other}` at line {}",
                        i + 1
                    )))
                }
            }
        }
        let char_level =
            char_level.ok_or_else(|| Error::Checkpoint("missing char_level header".into()))?;
        let model = SubwordModel::assemble(char_level, chars, merges);
        if let Some(v) = vocab_size {
            if v != model.vocab_size() {
                return Err(Error::Checkpoint(format!(
                    "subword vocab size mismatch: header {} vs rebuilt {}",
                    v,
                    model.vocab_size()
                )));
            }
        }
        Ok(model)
    }
}

/// One left-to-right pass replacing adjacent (a, b) with the merged symbol.
fn apply_merge(symbols: &mut Vec<String>, pair: &(String, String)) {
    let merged = format!("{}{}", pair.0, pair.1);
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == pair.0 && symbols[i + 1] == pair.1 {
            symbols[i] = merged.clone();
            symbols.remove(i + 1);
        }
        i += 1;
    }
}

/// Union of several per-language subword inventories into one shared id
/// space. Identical symbol strings from different models share one global id
/// so the subword embedding table is shared across languages.
#[derive(Debug, Clone)]
pub struct SubwordSpace {
    symbols: Vec<String>,
    local_to_global: Vec<Vec<usize>>,
}

impl SubwordSpace {
    pub fn combine(models: &[&SubwordModel]) -> SubwordSpace {
        let mut symbols: Vec<String> = Vec::new();
        let mut by_symbol: HashMap<String, usize> = HashMap::new();
        let mut local_to_global = Vec::with_capacity(models.len());
        for model in models {
            let map = model
                .symbols
                .iter()
                .map(|s| {
                    *by_symbol.entry(s.clone()).or_insert_with(|| {
                        symbols.push(s.clone());
                        symbols.len() - 1
                    })
                })
                .collect();
            local_to_global.push(map);
        }
        SubwordSpace { symbols, local_to_global }
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    /// Global subword ids for a word segmented by the model at `model_idx`.
    pub fn segment(&self, model_idx: usize, model: &SubwordModel, word: &str) -> Vec<usize> {
        model
            .segment(word)
            .into_iter()
            .map(|local| self.local_to_global[model_idx][local])
            .collect()
    }
}

/// Per-vocabulary-entry global subword ids; specials get empty groups so
/// their embeddings carry no subword term.
pub fn subword_groups(
    vocab: &Vocabulary,
    space: &SubwordSpace,
    model_idx: usize,
    model: &SubwordModel,
) -> Vec<Vec<usize>> {
    vocab
        .tokens()
        .iter()
        .enumerate()
        .map(|(id, token)| {
            if Vocabulary::is_special(id) {
                Vec::new()
            } else {
                space.segment(model_idx, model, token)
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ParallelCorpus {
    pub pairs: Vec<(Vec<String>, Vec<String>)>,
    pub src_lang: String,
    pub tgt_lang: String,
}

impl ParallelCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn src_tokens(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().flat_map(|(s, _)| s.iter().map(|t| t.as_str()))
    }

    pub fn tgt_tokens(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().flat_map(|(_, t)| t.iter().map(|t| t.as_str()))
    }
}

/// One pair per line, source and target separated by a single TAB, both
/// sides space-tokenized. Blank lines are skipped.
pub fn load_parallel_corpus(
    path: impl AsRef<Path>,
    src_lang: &str,
    tgt_lang: &str,
) -> Result<ParallelCorpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let pairs = parse_parallel_text(&text, path)?;
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus { path: path.to_path_buf() });
    }
    Ok(ParallelCorpus {
        pairs,
        src_lang: src_lang.to_string(),
        tgt_lang: tgt_lang.to_string(),
    })
}

fn parse_parallel_text(
    text: &str,
    path: &Path,
) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 2 tab-separated fields, found {}", fields.len()),
            ));
        }
        let src: Vec<String> = fields[0].split_whitespace().map(str::to_string).collect();
        let tgt: Vec<String> = fields[1].split_whitespace().map(str::to_string).collect();
        if src.is_empty() || tgt.is_empty() {
            return Err(Error::parse(path, lineno, "empty sentence on one side"));
        }
        pairs.push((src, tgt));
    }
    Ok(pairs)
}

/// Polysemous source word -> set of translations.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dictionary {
    pub entries: BTreeMap<String, BTreeSet<String>>,
}

impl Dictionary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, src: &str, tgt: &str) {
        self.entries
            .entry(src.to_string())
            .or_default()
            .insert(tgt.to_string());
    }

    pub fn translations(&self, src: &str) -> Option<&BTreeSet<String>> {
        self.entries.get(src)
    }
}

/// One `source<TAB>target` word pair per line; repeated source words
/// aggregate into a translation set.
pub fn load_dictionary(path: impl AsRef<Path>) -> Result<Dictionary> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut dict = Dictionary::default();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 || fields[0].trim().is_empty() || fields[1].trim().is_empty() {
            return Err(Error::parse(
                path,
                lineno,
                "expected `source<TAB>target` with nonempty words",
            ));
        }
        dict.insert(fields[0].trim(), fields[1].trim());
    }
    Ok(dict)
}

/// Padded id matrices for one group of sentence pairs.
#[derive(Debug, Clone)]
pub struct Batch {
    pub src_ids: Vec<Vec<usize>>,
    pub tgt_ids: Vec<Vec<usize>>,
    pub src_lens: Vec<usize>,
    pub tgt_lens: Vec<usize>,
    pub src_lang: String,
    pub tgt_lang: String,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.src_ids.len()
    }

    /// Source sentence i without padding.
    pub fn src_sentence(&self, i: usize) -> &[usize] {
        &self.src_ids[i][..self.src_lens[i]]
    }

    pub fn tgt_sentence(&self, i: usize) -> &[usize] {
        &self.tgt_ids[i][..self.tgt_lens[i]]
    }
}

/// Shuffle the corpus with the seeded generator, chunk it, and pad each
/// chunk to its own max length. A trailing chunk of a single pair is merged
/// into the previous batch so contrastive negatives always exist.
pub fn make_batches(
    corpus: &ParallelCorpus,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Batch>> {
    if batch_size < 2 {
        return Err(Error::Config(format!(
            "batch_size must be at least 2, got {batch_size}"
        )));
    }
    if corpus.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: corpus.len() });
    }

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    SplitMix64::new(seed).shuffle(&mut order);

    let mut chunks: Vec<&[usize]> = order.chunks(batch_size).collect();
    let mut merged_tail: Vec<usize> = Vec::new();
    if chunks.len() >= 2 && chunks[chunks.len() - 1].len() < 2 {
        let tail = chunks.pop().unwrap();
        let prev = chunks.pop().unwrap();
        merged_tail.extend_from_slice(prev);
        merged_tail.extend_from_slice(tail);
        chunks.push(&merged_tail);
    }

    let mut batches = Vec::with_capacity(chunks.len());
    for chunk in chunks {
        let max_src = chunk.iter().map(|&i| corpus.pairs[i].0.len()).max().unwrap();
        let max_tgt = chunk.iter().map(|&i| corpus.pairs[i].1.len()).max().unwrap();
        let mut batch = Batch {
            src_ids: Vec::with_capacity(chunk.len()),
            tgt_ids: Vec::with_capacity(chunk.len()),
            src_lens: Vec::with_capacity(chunk.len()),
            tgt_lens: Vec::with_capacity(chunk.len()),
            src_lang: corpus.src_lang.clone(),
            tgt_lang: corpus.tgt_lang.clone(),
        };
        for &i in chunk {
            let (src, tgt) = &corpus.pairs[i];
            let mut s: Vec<usize> = src.iter().map(|t| src_vocab.id(t)).collect();
            let mut t: Vec<usize> = tgt.iter().map(|t| tgt_vocab.id(t)).collect();
            batch.src_lens.push(s.len());
            batch.tgt_lens.push(t.len());
            s.resize(max_src, PAD);
            t.resize(max_tgt, PAD);
            batch.src_ids.push(s);
            batch.tgt_ids.push(t);
        }
        batches.push(batch);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_temp(name: &str, content: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("xlalign-corpus-tests");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn parallel_line_splits_on_tab_and_whitespace() {
        let path = write_temp("pair.tsv", "xin chào\t你 好\n");
        let corpus = load_parallel_corpus(&path, "vi", "zh").unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.pairs[0].0, vec!["xin", "chào"]);
        assert_eq!(corpus.pairs[0].1, vec!["你", "好"]);
    }

    #[test]
    fn corpus_of_1503_lines_loads_1503_pairs() {
        let mut text = String::new();
        for i in 0..1503 {
            text.push_str(&format!("w{i} w{}\tv{i} v{}\n", i + 1, i + 1));
        }
        let path = write_temp("big.tsv", &text);
        let corpus = load_parallel_corpus(&path, "lo", "zh").unwrap();
        assert_eq!(corpus.len(), 1503);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let path = write_temp("bad.tsv", "a\tb\nx\ty\tz\n");
        let err = load_parallel_corpus(&path, "a", "b").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn blank_lines_skipped_and_empty_file_rejected() {
        let path = write_temp("blank.tsv", "\n\na b\tc d\n\n");
        assert_eq!(load_parallel_corpus(&path, "a", "b").unwrap().len(), 1);
        let empty = write_temp("empty.tsv", "\n   \n");
        assert!(matches!(
            load_parallel_corpus(&empty, "a", "b").unwrap_err(),
            Error::EmptyCorpus { .. }
        ));
    }

    #[test]
    fn bpe_learns_most_frequent_pair_first() {
        let tokens = ["aaab", "aaab"];
        let model = SubwordModel::train(tokens.iter().copied(), 5, false).unwrap();
        assert_eq!(model.merges[0], ("a".to_string(), "a".to_string()));
        // Full merge sequence for this corpus: aa, then ab, then aa+ab.
        assert_eq!(
            model.merges,
            vec![
                ("a".into(), "a".into()),
                ("a".into(), "b".into()),
                ("aa".into(), "ab".into()),
            ]
        );
        assert_eq!(model.segment_symbols("aaab"), vec!["aaab"]);
    }

    #[test]
    fn char_level_has_no_merges() {
        let model = SubwordModel::train(["你好"].iter().copied(), 100, true).unwrap();
        assert!(model.merges.is_empty());
        assert_eq!(model.segment_symbols("你好"), vec!["你", "好"]);
    }

    #[test]
    fn target_size_equal_to_inventory_yields_no_merges() {
        let model = SubwordModel::train(["abc", "cab"].iter().copied(), 3, false).unwrap();
        assert!(model.merges.is_empty());
    }

    #[test]
    fn target_below_inventory_is_config_error() {
        let err = SubwordModel::train(["abc"].iter().copied(), 2, false).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn unseen_character_maps_to_unk() {
        let model = SubwordModel::train(["ab"].iter().copied(), 2, false).unwrap();
        assert_eq!(model.segment("z"), vec![SUB_UNK]);
    }

    #[test]
    fn segmentation_is_deterministic() {
        let model = SubwordModel::train(["abab", "ab"].iter().copied(), 4, false).unwrap();
        assert_eq!(model.segment("abab"), model.segment("abab"));
    }

    #[test]
    fn subword_model_text_roundtrip() {
        let model = SubwordModel::train(["aaab", "aaab", "abba"].iter().copied(), 6, false).unwrap();
        let text = model.to_text();
        let back = SubwordModel::from_text(&text).unwrap();
        assert_eq!(model, back);
    }

    proptest! {
        #[test]
        fn segmentation_roundtrips_in_alphabet_words(
            words in proptest::collection::vec("[abcd]{1,8}", 1..20),
            target in 4usize..20,
        ) {
            let model = SubwordModel::train(words.iter().map(|s| s.as_str()), target, false).unwrap();
            for w in &words {
                let joined: String = model.segment_symbols(w).concat();
                prop_assert_eq!(&joined, w);
            }
        }

        #[test]
        fn batches_partition_the_corpus(
            n in 2usize..60,
            batch_size in 2usize..20,
            seed in 0u64..50,
        ) {
            let pairs: Vec<(Vec<String>, Vec<String>)> = (0..n)
                .map(|i| (vec![format!("s{i}")], vec![format!("t{i}")]))
                .collect();
            let corpus = ParallelCorpus { pairs, src_lang: "a".into(), tgt_lang: "b".into() };
            let sv = Vocabulary::build("a", corpus.src_tokens(), 1);
            let tv = Vocabulary::build("b", corpus.tgt_tokens(), 1);
            let batches = make_batches(&corpus, &sv, &tv, batch_size, seed).unwrap();
            let mut seen: Vec<usize> = Vec::new();
            for b in &batches {
                prop_assert!(b.size() >= 2 || batches.len() == 1);
                for i in 0..b.size() {
                    let tok = sv.token(b.src_sentence(i)[0]).to_string();
                    seen.push(tok[1..].parse().unwrap());
                }
            }
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn dictionary_is_order_independent(perm_seed in 0u64..100) {
            let mut lines = vec![
                "nhà\t家", "nhà\t屋", "xe\t车", "nhà\t家", "đi\t走", "xe\t辆",
            ];
            SplitMix64::new(perm_seed).shuffle(&mut lines);
            let path = write_temp(&format!("dict-{perm_seed}.tsv"), &(lines.join("\n") + "\n"));
            let dict = load_dictionary(&path).unwrap();
            let base = {
                let path = write_temp("dict-base.tsv", "nhà\t家\nnhà\t屋\nxe\t车\nđi\t走\nxe\t辆\n");
                load_dictionary(&path).unwrap()
            };
            prop_assert_eq!(dict, base);
        }
    }

    #[test]
    fn vocabulary_frequency_order_and_threshold() {
        let v = Vocabulary::build("x", ["a", "a", "b"].iter().copied(), 1);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);
        let v2 = Vocabulary::build("x", ["a", "a", "b"].iter().copied(), 2);
        assert_eq!(v2.id("a"), 4);
        assert_eq!(v2.id("b"), UNK);
        assert_eq!(v2.size(), 5);
    }

    #[test]
    fn empty_vocabulary_keeps_specials() {
        let v = Vocabulary::build("x", std::iter::empty(), 1);
        assert_eq!(v.size(), 4);
        assert_eq!(v.token(PAD), PAD_TOKEN);
        assert_eq!(v.token(UNK), UNK_TOKEN);
    }

    #[test]
    fn vocabulary_is_a_bijection_on_kept_tokens() {
        let v = Vocabulary::build("x", ["c", "b", "b", "a", "a", "a"].iter().copied(), 1);
        for id in 0..v.size() {
            assert_eq!(v.id(v.token(id)), id);
        }
        // descending frequency, ties lexicographic
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);
        assert_eq!(v.id("c"), 6);
    }

    #[test]
    fn dictionary_polysemy_and_dedup() {
        let path = write_temp("poly.tsv", "nhà\t家\nnhà\t屋\nnhà\t家\n");
        let dict = load_dictionary(&path).unwrap();
        assert_eq!(dict.len(), 1);
        let set = dict.translations("nhà").unwrap();
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn dictionary_of_2272_lines_has_at_most_2272_entries() {
        let mut text = String::new();
        for i in 0..2272 {
            text.push_str(&format!("s{}\tt{}\n", i % 2000, i));
        }
        let path = write_temp("lingea.tsv", &text);
        let dict = load_dictionary(&path).unwrap();
        assert!(dict.len() <= 2272);
        assert_eq!(dict.len(), 2000);
    }

    #[test]
    fn batch_sizes_merge_short_tail() {
        let pairs: Vec<(Vec<String>, Vec<String>)> = (0..33)
            .map(|i| (vec![format!("s{i}")], vec![format!("t{i}")]))
            .collect();
        let corpus = ParallelCorpus { pairs, src_lang: "a".into(), tgt_lang: "b".into() };
        let sv = Vocabulary::build("a", corpus.src_tokens(), 1);
        let tv = Vocabulary::build("b", corpus.tgt_tokens(), 1);
        let batches = make_batches(&corpus, &sv, &tv, 16, 0).unwrap();
        let sizes: Vec<usize> = batches.iter().map(|b| b.size()).collect();
        assert_eq!(sizes, vec![16, 17]);
    }

    #[test]
    fn same_seed_reproduces_batch_order() {
        let pairs: Vec<(Vec<String>, Vec<String>)> = (0..20)
            .map(|i| (vec![format!("s{i}")], vec![format!("t{i}")]))
            .collect();
        let corpus = ParallelCorpus { pairs, src_lang: "a".into(), tgt_lang: "b".into() };
        let sv = Vocabulary::build("a", corpus.src_tokens(), 1);
        let tv = Vocabulary::build("b", corpus.tgt_tokens(), 1);
        let a = make_batches(&corpus, &sv, &tv, 8, 9).unwrap();
        let b = make_batches(&corpus, &sv, &tv, 8, 9).unwrap();
        let flat = |bs: &[Batch]| -> Vec<Vec<usize>> {
            bs.iter().flat_map(|b| b.src_ids.clone()).collect()
        };
        assert_eq!(flat(&a), flat(&b));
    }

    #[test]
    fn seed_zero_permutation_of_five_items_is_golden() {
        // Frozen output of the documented SplitMix64 + Fisher-Yates shuffle.
        let mut xs: Vec<usize> = (0..5).collect();
        SplitMix64::new(0).shuffle(&mut xs);
        assert_eq!(xs, golden_seed0_permutation_of_five());
    }

    /// Golden value derived by running a standalone replica of the
    /// documented PRNG once; any change to the shuffle algorithm must update
    /// this constant knowingly.
    fn golden_seed0_permutation_of_five() -> Vec<usize> {
        vec![2, 3, 0, 1, 4]
    }

    #[test]
    fn batching_requires_two_pairs() {
        let corpus = ParallelCorpus {
            pairs: vec![(vec!["a".into()], vec!["b".into()])],
            src_lang: "a".into(),
            tgt_lang: "b".into(),
        };
        let sv = Vocabulary::build("a", corpus.src_tokens(), 1);
        let tv = Vocabulary::build("b", corpus.tgt_tokens(), 1);
        assert!(matches!(
            make_batches(&corpus, &sv, &tv, 4, 0).unwrap_err(),
            Error::InsufficientData { .. }
        ));
    }

    #[test]
    fn subword_space_shares_symbols_across_models() {
        let a = SubwordModel::train(["ab", "ab"].iter().copied(), 3, false).unwrap();
        let b = SubwordModel::train(["bc", "bc"].iter().copied(), 3, false).unwrap();
        let space = SubwordSpace::combine(&[&a, &b]);
        // <unk>, a, b, ab from model 0; c, bc new from model 1.
        assert_eq!(space.size(), 6);
        let ga = space.segment(0, &a, "b");
        let gb = space.segment(1, &b, "b");
        assert_eq!(ga, gb);
    }
}
