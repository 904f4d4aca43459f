//! Evaluation battery: perplexity, Dist-n diversity, unique n-gram
//! memorisation overlap, greedy embedding-matching similarity, and LIME
//! token attributions.

pub mod lime;
pub mod report;

pub use lime::{lime_explain, Explanation, LimeOptions};
pub use report::MetricsReport;

use std::collections::HashSet;

use crate::corpus::{vocab, Corpus};
use crate::error::{Error, Result};
use crate::model::LmModel;
use crate::tensor::Tensor;

/// Perplexity from a summed negative log-likelihood over `count` tokens.
pub fn perplexity_from_nll(total_nll: f64, count: usize) -> Result<f64> {
    if count == 0 {
        return Err(Error::contract("perplexity over zero tokens".to_string()));
    }
    Ok((total_nll / count as f64).exp())
}

/// exp(mean next-token negative log-likelihood) of the corpus under the
/// model's own teacher-forced distributions, no sampling filters. Uses the
/// same sequence convention as training (a closing end-of-sequence token).
pub fn perplexity(model: &LmModel, corpus: &Corpus) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::contract("perplexity of an empty corpus".to_string()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, r) in corpus.reviews.iter().enumerate() {
        let ids = r
            .token_ids
            .as_ref()
            .ok_or_else(|| Error::contract(format!("review {i} is not tokenized")))?;
        if ids.is_empty() {
            continue;
        }
        let mut x = ids.clone();
        x.push(vocab::EOS);
        let (nll, n) = model.sequence_nll(&x)?;
        total += nll;
        count += n;
    }
    perplexity_from_nll(total, count)
}

/// Multiset summary of a corpus's token n-grams.
#[derive(Debug, Clone)]
pub struct NgramSet {
    pub n: usize,
    pub grams: HashSet<Vec<u32>>,
    pub total_count: usize,
}

impl NgramSet {
    pub fn from_corpus(corpus: &Corpus, n: usize) -> Result<NgramSet> {
        if n == 0 {
            return Err(Error::contract("n-grams need n >= 1".to_string()));
        }
        let mut grams = HashSet::new();
        let mut total_count = 0;
        for (i, r) in corpus.reviews.iter().enumerate() {
            let ids = r
                .token_ids
                .as_ref()
                .ok_or_else(|| Error::contract(format!("review {i} is not tokenized")))?;
            if ids.len() < n {
                continue;
            }
            for w in ids.windows(n) {
                grams.insert(w.to_vec());
                total_count += 1;
            }
        }
        Ok(NgramSet {
            n,
            grams,
            total_count,
        })
    }
}

/// Corpus-level Dist-n: unique n-grams over total n-grams, pooled across
/// all texts. Texts shorter than n contribute nothing.
pub fn distinct_n(corpus: &Corpus, n: usize) -> Result<f64> {
    let set = NgramSet::from_corpus(corpus, n)?;
    if set.total_count == 0 {
        return Err(Error::numeric(format!(
            "distinct-{n} undefined: no text has {n} tokens"
        )));
    }
    Ok(set.grams.len() as f64 / set.total_count as f64)
}

/// Percentage of the generated corpus's unique n-grams that also occur in
/// the reference corpus.
pub fn ngram_overlap(generated: &Corpus, reference: &Corpus, n: usize) -> Result<f64> {
    let gen_set = NgramSet::from_corpus(generated, n)?;
    if gen_set.grams.is_empty() {
        return Err(Error::numeric(format!(
            "{n}-gram overlap undefined: generated corpus has no {n}-grams"
        )));
    }
    let ref_set = NgramSet::from_corpus(reference, n)?;
    let shared = gen_set
        .grams
        .iter()
        .filter(|g| ref_set.grams.contains(*g))
        .count();
    Ok(100.0 * shared as f64 / gen_set.grams.len() as f64)
}

/// Maps a token sequence to one vector per token.
pub trait TokenEmbedder {
    fn embed(&self, tokens: &[u32]) -> Vec<Vec<f64>>;
}

/// Embedding-table lookup, typically over a generator's frozen table.
pub struct TableEmbedder {
    data: Vec<f64>,
    vocab_size: usize,
    dim: usize,
}

impl TableEmbedder {
    pub fn new(table: &Tensor) -> TableEmbedder {
        let shape = table.shape();
        TableEmbedder {
            data: table.to_vec(),
            vocab_size: shape[0],
            dim: shape[1],
        }
    }

    pub fn from_model(model: &LmModel) -> TableEmbedder {
        TableEmbedder::new(&model.decoder_embedding())
    }
}

impl TokenEmbedder for TableEmbedder {
    fn embed(&self, tokens: &[u32]) -> Vec<Vec<f64>> {
        tokens
            .iter()
            .map(|&t| {
                let i = (t as usize).min(self.vocab_size - 1);
                self.data[i * self.dim..(i + 1) * self.dim].to_vec()
            })
            .collect()
    }
}

/// One-hot token vectors; similarity becomes exact token matching.
pub struct OneHotEmbedder {
    pub vocab_size: usize,
}

impl TokenEmbedder for OneHotEmbedder {
    fn embed(&self, tokens: &[u32]) -> Vec<Vec<f64>> {
        tokens
            .iter()
            .map(|&t| {
                let mut v = vec![0.0; self.vocab_size];
                v[t as usize] = 1.0;
                v
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimilarityScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn greedy_side(from: &[Vec<f64>], to: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for f in from {
        let best = to
            .iter()
            .map(|t| cosine(f, t))
            .fold(f64::NEG_INFINITY, f64::max);
        total += best;
    }
    total / from.len() as f64
}

/// Greedy token-matching similarity: per pair, precision is the mean over
/// candidate tokens of the maximum cosine similarity to any reference
/// token; recall is symmetric; F1 the harmonic mean. The corpus score is
/// the mean over pairs. Pairs with an empty side are skipped with a
/// warning.
pub fn greedy_match_similarity(
    candidates: &[Vec<u32>],
    references: &[Vec<u32>],
    embedder: &dyn TokenEmbedder,
) -> Result<SimilarityScore> {
    if candidates.len() != references.len() {
        return Err(Error::contract(format!(
            "candidate/reference count mismatch: {} vs {}",
            candidates.len(),
            references.len()
        )));
    }
    let mut scores = Vec::new();
    for (i, (c, r)) in candidates.iter().zip(references).enumerate() {
        if c.is_empty() || r.is_empty() {
            log::warn!("similarity pair {i} skipped: empty side");
            continue;
        }
        let ce = embedder.embed(c);
        let re = embedder.embed(r);
        let precision = greedy_side(&ce, &re);
        let recall = greedy_side(&re, &ce);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        scores.push((precision, recall, f1));
    }
    if scores.is_empty() {
        return Err(Error::numeric(
            "similarity undefined: every pair was empty".to_string(),
        ));
    }
    let n = scores.len() as f64;
    Ok(SimilarityScore {
        precision: scores.iter().map(|s| s.0).sum::<f64>() / n,
        recall: scores.iter().map(|s| s.1).sum::<f64>() / n,
        f1: scores.iter().map(|s| s.2).sum::<f64>() / n,
    })
}
