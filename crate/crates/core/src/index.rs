//! Exact hybrid retrieval: dense cosine plus Okapi BM25 over an inverted index.
//!
//! Candidates are the union of the top `candidate_pool` passages from each
//! channel (excluded ids removed first). BM25 scores are min-max normalized
//! over that pool before mixing, so `alpha` always weighs two `[0, 1]`-ish
//! quantities:
//!
//! ```text
//! hybrid = (1 - alpha) * cosine + alpha * bm25_norm
//! ```
//!
//! Ties anywhere are broken by passage id ascending.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Passage;
use crate::embed::{cosine, EmbedError, Embedding, EmbeddingProvider};
use crate::text::terms;

pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index over zero passages")]
    EmptyCorpus,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("index file: {0}")]
    Io(String),
    #[error("unsupported index format version {0}")]
    Version(u32),
    #[error("index was built with provider `{built}`, but `{given}` was supplied")]
    ProviderMismatch { built: String, given: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridConfig {
    pub alpha: f64,
    pub top_k: usize,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub candidate_pool: usize,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig { alpha: 0.3, top_k: 5, bm25_k1: 1.2, bm25_b: 0.75, candidate_pool: 50 }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if self.top_k == 0 {
            return Err("top_k must be >= 1".into());
        }
        if self.candidate_pool == 0 {
            return Err("candidate_pool must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub passage: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub passage_id: String,
    pub dense_score: f64,
    pub bm25_score_norm: f64,
    pub hybrid_score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Index {
    pub version: u32,
    pub provider_id: String,
    pub dim: usize,
    pub passages: Vec<Passage>,
    pub vectors: Vec<Embedding>,
    pub inverted: BTreeMap<String, Vec<Posting>>,
    pub doc_lengths: Vec<u32>,
    pub avg_doc_len: f64,
}

impl Index {
    pub fn build(passages: Vec<Passage>, provider: &dyn EmbeddingProvider) -> Result<Self, IndexError> {
        if passages.is_empty() {
            return Err(IndexError::EmptyCorpus);
        }
        let texts: Vec<&str> = passages.iter().map(|p| p.text.as_str()).collect();
        let vectors = provider.embed_batch(&texts)?;
        let mut inverted: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(passages.len());
        for (i, p) in passages.iter().enumerate() {
            let toks = terms(&p.text);
            doc_lengths.push(toks.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in toks {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                // passages are visited in order, so postings stay sorted
                inverted.entry(term).or_default().push(Posting { passage: i as u32, tf: count });
            }
        }
        let avg_doc_len = doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / passages.len() as f64;
        Ok(Index {
            version: INDEX_FORMAT_VERSION,
            provider_id: provider.id(),
            dim: provider.dim(),
            passages,
            vectors,
            inverted,
            doc_lengths,
            avg_doc_len,
        })
    }

    pub fn n_passages(&self) -> usize {
        self.passages.len()
    }

    pub fn passage(&self, idx: usize) -> &Passage {
        &self.passages[idx]
    }

    pub fn position_of(&self, id: &str) -> Option<usize> {
        self.passages.iter().position(|p| p.id == id)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.inverted.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.n_passages() as f64;
        let df = df as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, doc_len: u32, cfg: &HybridConfig) -> f64 {
        let tf = tf as f64;
        let norm = 1.0 - cfg.bm25_b + cfg.bm25_b * doc_len as f64 / self.avg_doc_len.max(f64::MIN_POSITIVE);
        idf * tf * (cfg.bm25_k1 + 1.0) / (tf + cfg.bm25_k1 * norm)
    }

    fn query_terms(query: &str) -> Vec<String> {
        let mut qt = terms(query);
        qt.sort();
        qt.dedup();
        qt
    }

    /// Okapi BM25 of `query` against one passage. Repeated query terms count once.
    pub fn bm25_score(&self, query: &str, passage_idx: usize, cfg: &HybridConfig) -> f64 {
        let mut score = 0.0;
        for term in Self::query_terms(query) {
            let postings = self.postings(&term);
            if let Ok(pos) = postings.binary_search_by_key(&(passage_idx as u32), |p| p.passage) {
                let idf = self.idf(postings.len());
                score += self.term_weight(idf, postings[pos].tf, self.doc_lengths[passage_idx], cfg);
            }
        }
        score
    }

    /// BM25 for every passage with at least one shared term.
    pub fn bm25_all(&self, query: &str, cfg: &HybridConfig) -> BTreeMap<usize, f64> {
        let mut scores = BTreeMap::new();
        for term in Self::query_terms(query) {
            let postings = self.postings(&term);
            if postings.is_empty() {
                continue;
            }
            let idf = self.idf(postings.len());
            for p in postings {
                let w = self.term_weight(idf, p.tf, self.doc_lengths[p.passage as usize], cfg);
                *scores.entry(p.passage as usize).or_insert(0.0) += w;
            }
        }
        scores
    }

    fn check_provider(&self, provider: &dyn EmbeddingProvider) -> Result<(), IndexError> {
        if provider.id() != self.provider_id {
            return Err(IndexError::ProviderMismatch { built: self.provider_id.clone(), given: provider.id() });
        }
        Ok(())
    }

    /// Dense cosine against every passage, in passage order.
    pub fn dense_scores(&self, query_vec: &Embedding) -> Result<Vec<f64>, EmbedError> {
        self.vectors.iter().map(|v| cosine(query_vec, v)).collect()
    }

    pub fn retrieve(
        &self,
        query: &str,
        provider: &dyn EmbeddingProvider,
        cfg: &HybridConfig,
        exclude: &HashSet<String>,
    ) -> Result<Vec<RetrievalResult>, IndexError> {
        if self.passages.is_empty() {
            return Ok(Vec::new());
        }
        self.check_provider(provider)?;
        let qv = provider.embed(query)?;
        let dense = self.dense_scores(&qv)?;
        let bm25 = self.bm25_all(query, cfg);
        let allowed = |i: usize| !exclude.contains(&self.passages[i].id);
        let pool_size = cfg.candidate_pool.max(cfg.top_k);

        let mut dense_order: Vec<usize> = (0..self.n_passages()).filter(|&i| allowed(i)).collect();
        dense_order.sort_by(|&a, &b| self.by_score_then_id(dense[a], dense[b], a, b));
        let mut lexical_order: Vec<usize> = bm25.keys().copied().filter(|&i| allowed(i)).collect();
        lexical_order.sort_by(|&a, &b| self.by_score_then_id(bm25[&a], bm25[&b], a, b));

        let mut pool: Vec<usize> = dense_order.into_iter().take(pool_size).collect();
        let in_pool: HashSet<usize> = pool.iter().copied().collect();
        pool.extend(lexical_order.into_iter().take(pool_size).filter(|i| !in_pool.contains(i)));

        let raw = |i: usize| bm25.get(&i).copied().unwrap_or(0.0);
        let (lo, hi) = pool.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| (lo.min(raw(i)), hi.max(raw(i))));
        let norm = |i: usize| if hi > lo { (raw(i) - lo) / (hi - lo) } else { 0.0 };

        let mut scored: Vec<(usize, f64, f64, f64)> = pool
            .into_iter()
            .map(|i| {
                let b = norm(i);
                (i, dense[i], b, (1.0 - cfg.alpha) * dense[i] + cfg.alpha * b)
            })
            .collect();
        scored.sort_by(|x, y| self.by_score_then_id(x.3, y.3, x.0, y.0));
        Ok(scored
            .into_iter()
            .take(cfg.top_k)
            .enumerate()
            .map(|(rank, (i, d, b, h))| RetrievalResult {
                passage_id: self.passages[i].id.clone(),
                dense_score: d,
                bm25_score_norm: b,
                hybrid_score: h,
                rank: rank + 1,
            })
            .collect())
    }

    fn by_score_then_id(&self, sa: f64, sb: f64, a: usize, b: usize) -> Ordering {
        sb.partial_cmp(&sa)
            .unwrap_or(Ordering::Equal)
            .then_with(|| self.passages[a].id.cmp(&self.passages[b].id))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("index serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, IndexError> {
        let idx: Index = serde_json::from_str(text).map_err(|e| IndexError::Io(e.to_string()))?;
        if idx.version != INDEX_FORMAT_VERSION {
            return Err(IndexError::Version(idx.version));
        }
        Ok(idx)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        std::fs::write(path, self.to_json()).map_err(|e| IndexError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let text = std::fs::read_to_string(path).map_err(|e| IndexError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
