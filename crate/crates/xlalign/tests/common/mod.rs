//! Shared fixtures for the integration suites: a synthetic parallel corpus
//! over two disjoint-alphabet vocabularies related by a known bijection.
//
// Each integration binary compiles this module separately and uses a
// different subset of it.
#![allow(dead_code)]

use std::collections::BTreeSet;

use xlalign::corpus::{Dictionary, ParallelCorpus};
use xlalign::rng::SplitMix64;
use xlalign::train::Task;

pub const TOY_VOCAB: usize = 20;

/// Source word i: "s" plus two letters from a..e (base-5 digits of i).
/// Target word i: "t" plus two letters from f..j. The alphabets are
/// disjoint, so nothing orthographic links a word to its translation.
pub fn src_word(i: usize) -> String {
    let chars = ['a', 'b', 'c', 'd', 'e'];
    format!("s{}{}", chars[i / 5], chars[i % 5])
}

pub fn tgt_word(i: usize) -> String {
    let chars = ['f', 'g', 'h', 'i', 'j'];
    format!("t{}{}", chars[i / 5], chars[i % 5])
}

/// `pairs` random sentences of length 3..=6 over the 20-word vocabulary;
/// the target side maps each word through the bijection in place.
pub fn bijection_corpus(pairs: usize, gen_seed: u64) -> ParallelCorpus {
    let mut rng = SplitMix64::new(gen_seed);
    let sentences: Vec<Vec<usize>> = (0..pairs)
        .map(|_| {
            let len = 3 + rng.below(4) as usize;
            (0..len).map(|_| rng.below(TOY_VOCAB as u64) as usize).collect()
        })
        .collect();
    let pairs = sentences
        .iter()
        .map(|s| {
            (
                s.iter().map(|&i| src_word(i)).collect(),
                s.iter().map(|&i| tgt_word(i)).collect(),
            )
        })
        .collect();
    ParallelCorpus { pairs, src_lang: "src".into(), tgt_lang: "tgt".into() }
}

pub fn bijection_dictionary() -> Dictionary {
    let mut dict = Dictionary::default();
    for i in 0..TOY_VOCAB {
        dict.insert(&src_word(i), &tgt_word(i));
    }
    dict
}

pub fn bijection_task(pairs: usize, gen_seed: u64) -> Task {
    Task::prepare(bijection_corpus(pairs, gen_seed), 1, 16, &BTreeSet::new()).unwrap()
}

/// Corpus text in the parallel-file format, for CLI round-trips.
pub fn corpus_text(corpus: &ParallelCorpus) -> String {
    let mut out = String::new();
    for (src, tgt) in &corpus.pairs {
        out.push_str(&src.join(" "));
        out.push('\t');
        out.push_str(&tgt.join(" "));
        out.push('\n');
    }
    out
}

pub fn dictionary_text(dict: &Dictionary) -> String {
    let mut out = String::new();
    for (src, translations) in &dict.entries {
        for tgt in translations {
            out.push_str(src);
            out.push('\t');
            out.push_str(tgt);
            out.push('\n');
        }
    }
    out
}
