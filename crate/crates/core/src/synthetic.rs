//! Seeded generators for synthetic documents and labeled corpora.
//!
//! Documents are built from a pseudo-word vocabulary, so sentences of
//! different documents share few tokens. A consistent summary copies
//! sentences of its document; an inconsistent one copies sentences of other
//! documents.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datasets::{BenchmarkSample, Split};
use crate::trainer::TrainRecord;

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "tu", "sa", "vel", "dor", "pi", "qua", "ni", "zo", "bex", "ha", "jul",
    "ton", "wi", "fa", "gri", "mor", "ul", "esk", "yan", "cro",
];

#[derive(Debug, Clone)]
pub struct TextGenerator {
    vocab: Vec<String>,
    rng: ChaCha8Rng,
    pub sentences_per_doc: (usize, usize),
    pub words_per_sentence: (usize, usize),
}

impl TextGenerator {
    pub fn new(seed: u64) -> Self {
        let mut vocab: Vec<String> = Vec::new();
        for a in SYLLABLES {
            for b in SYLLABLES {
                for c in ["", "n", "s"] {
                    vocab.push(format!("{a}{b}{c}"));
                }
            }
        }
        TextGenerator {
            vocab,
            rng: ChaCha8Rng::seed_from_u64(seed),
            sentences_per_doc: (8, 12),
            words_per_sentence: (6, 10),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn sentence(&mut self) -> String {
        let len = self
            .rng
            .gen_range(self.words_per_sentence.0..=self.words_per_sentence.1);
        let words: Vec<&str> = (0..len)
            .map(|_| self.vocab[self.rng.gen_range(0..self.vocab.len())].as_str())
            .collect();
        let mut s = words.join(" ");
        if let Some(first) = s.get(0..1) {
            s.replace_range(0..1, &first.to_uppercase());
        }
        s.push('.');
        s
    }

    /// A document as a list of sentences.
    pub fn document(&mut self) -> Vec<String> {
        let n = self
            .rng
            .gen_range(self.sentences_per_doc.0..=self.sentences_per_doc.1);
        (0..n).map(|_| self.sentence()).collect()
    }

    pub fn documents(&mut self, count: usize) -> Vec<Vec<String>> {
        (0..count).map(|_| self.document()).collect()
    }
}

fn pick_sentences(rng: &mut ChaCha8Rng, doc: &[String], k: usize) -> Vec<String> {
    let mut idx: Vec<usize> = (0..doc.len()).collect();
    idx.shuffle(rng);
    let mut idx: Vec<usize> = idx.into_iter().take(k).collect();
    idx.sort_unstable();
    idx.into_iter().map(|i| doc[i].clone()).collect()
}

/// Consistent (label 1) or inconsistent (label 0) summary of `docs[i]`.
fn summary_for(rng: &mut ChaCha8Rng, docs: &[Vec<String>], i: usize, consistent: bool) -> String {
    let k = rng.gen_range(2..=3);
    if consistent {
        return pick_sentences(rng, &docs[i], k).join(" ");
    }
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let other = rng.gen_range(0..docs.len());
        if other == i {
            continue;
        }
        out.push(docs[other].choose(rng).expect("documents are non-empty").clone());
    }
    out.join(" ")
}

/// Labeled corpus where consistency is decidable from sentence overlap.
/// Labels alternate so the corpus is balanced.
pub fn separable_corpus(count: usize, seed: u64) -> Vec<TrainRecord> {
    let mut gen = TextGenerator::new(seed);
    let docs = gen.documents(count.max(2));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..count)
        .map(|i| {
            let consistent = i % 2 == 0;
            TrainRecord {
                id: format!("syn-{seed}-{i}"),
                document: docs[i].join(" "),
                summary: summary_for(&mut rng, &docs, i, consistent),
                label: consistent as u8,
            }
        })
        .collect()
}

/// A synthetic benchmark dataset with the given share of consistent summaries;
/// even-indexed samples go to validation, odd-indexed ones to test.
pub fn benchmark_dataset(name: &str, count: usize, positive_rate: f64, seed: u64) -> Vec<BenchmarkSample> {
    let mut gen = TextGenerator::new(seed);
    let docs = gen.documents(count.max(2));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbe_4c);
    (0..count)
        .map(|i| {
            let consistent = rng.gen_bool(positive_rate.clamp(0.0, 1.0));
            BenchmarkSample {
                id: format!("{name}-{i}"),
                dataset: name.to_string(),
                split: if i % 2 == 0 { Split::Validation } else { Split::Test },
                document: docs[i].join(" "),
                summary: summary_for(&mut rng, &docs, i, consistent),
                label: consistent,
                annotations: None,
            }
        })
        .collect()
}
