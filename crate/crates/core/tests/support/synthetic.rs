//! A seeded 500-passage corpus and brute-force reference rankers.

use std::collections::HashMap;

use finrag::corpus::Passage;
use finrag::text::terms;
use finrag::{HashEmbedder, Index, PassageKind};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VOCAB: &[&str] = &[
    "revenue", "income", "expenses", "margin", "cash", "debt", "equity", "assets", "liabilities", "dividend",
    "segment", "americas", "europe", "quarter", "fiscal", "growth", "decline", "operating", "gross", "net",
    "interest", "tax", "capital", "inventory", "goodwill", "lease", "pension", "stock", "share", "buyback",
];

pub fn synthetic(n: usize, rng: &mut ChaCha8Rng) -> Vec<Passage> {
    (0..n)
        .map(|i| {
            let len = rng.random_range(6..20);
            let words: Vec<&str> = (0..len).map(|_| *VOCAB.choose(rng).unwrap()).collect();
            let text = format!("{} {}", words.join(" "), 2000 + i % 25);
            Passage {
                id: format!("s{i:04}"),
                token_count: text.split_whitespace().count(),
                text,
                kind: PassageKind::TextChunk,
                doc_id: format!("doc{}", i / 10),
                position: i % 10,
            }
        })
        .collect()
}

pub fn query(rng: &mut ChaCha8Rng) -> String {
    (0..rng.random_range(2..6)).map(|_| *VOCAB.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn plain_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn ranked(scores: &[(String, f64)], k: usize) -> Vec<String> {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.into_iter().take(k).map(|(id, _)| id).collect()
}

/// Okapi BM25 computed straight from the passage texts.
pub fn reference_bm25(passages: &[Passage], q: &str, k1: f64, b: f64) -> Vec<(String, f64)> {
    let docs: Vec<Vec<String>> = passages.iter().map(|p| terms(&p.text)).collect();
    let n = docs.len() as f64;
    let avg = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut qt = terms(q);
    qt.sort();
    qt.dedup();
    let df: HashMap<&String, f64> =
        qt.iter().map(|t| (t, docs.iter().filter(|d| d.contains(t)).count() as f64)).collect();
    passages
        .iter()
        .zip(&docs)
        .map(|(p, d)| {
            let s: f64 = qt
                .iter()
                .filter(|t| df[t] > 0.0)
                .map(|t| {
                    let tf = d.iter().filter(|w| *w == t).count() as f64;
                    let idf = ((n - df[t] + 0.5) / (df[t] + 0.5) + 1.0).ln();
                    idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * d.len() as f64 / avg))
                })
                .sum();
            (p.id.clone(), s)
        })
        .collect()
}

pub struct Fixture {
    pub passages: Vec<Passage>,
    pub index: Index,
    pub embedder: HashEmbedder,
    pub queries: Vec<String>,
}

pub fn fixture() -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(5150);
    let passages = synthetic(500, &mut rng);
    let embedder = HashEmbedder::default();
    let index = Index::build(passages.clone(), &embedder).unwrap();
    let queries = (0..50).map(|_| query(&mut rng)).collect();
    Fixture { passages, index, embedder, queries }
}
