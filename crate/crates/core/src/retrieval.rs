//! Exact top-K cosine retrieval over a subject's image pool.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::embedding::{check_dims, dot, norm, EmbeddingStore};
use crate::error::{Error, Result};

pub const RETRIEVAL_HEADER: &str = "subject,rank,assetId,score";

/// A candidate image: asset id plus a borrowed unit vector.
#[derive(Debug, Clone, Copy)]
pub struct PoolItem<'a> {
    pub asset_id: &'a str,
    pub vector: &'a [f64],
}

impl<'a> PoolItem<'a> {
    pub fn new(asset_id: &'a str, vector: &'a [f64]) -> Self {
        PoolItem { asset_id, vector }
    }
}

/// Every record of a sealed store as a pool.
pub fn pool_from_store(store: &EmbeddingStore) -> Vec<PoolItem<'_>> {
    store.iter().map(|(id, v)| PoolItem::new(id, v)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub asset_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub subject: String,
    pub query_embedding_id: String,
    pub k: usize,
    pub ranked: Vec<Ranked>,
}

/// Mean of per-prefix text embeddings, renormalized.
pub fn average_text_embedding(vectors: &[&[f64]]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Argument("no embeddings to average".into()))?;
    let dim = first.len();
    let mut mean = vec![0.0; dim];
    for v in vectors {
        check_dims(dim, v.len())?;
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= vectors.len() as f64;
    }
    let n = norm(&mean);
    // Anything this small is cancellation noise in the mean of unit vectors.
    if n.is_nan() || n <= 1e-12 {
        return Err(Error::Degenerate(
            "mean embedding is the zero vector".into(),
        ));
    }
    Ok(mean.into_iter().map(|x| x / n).collect())
}

/// K for a pair of attribute sets: the product of their sizes.
pub fn default_k(card_a: usize, card_b: usize) -> usize {
    card_a * card_b
}

fn ranking(a: &(usize, f64), b: &(usize, f64), pool: &[PoolItem<'_>]) -> Ordering {
    b.1.total_cmp(&a.1)
        .then_with(|| pool[a.0].asset_id.cmp(pool[b.0].asset_id))
}

/// The `k` pool items with the highest cosine to `query`, best first; equal
/// scores rank by ascending asset id.
pub fn top_k(
    subject: &str,
    query_id: &str,
    query: &[f64],
    pool: &[PoolItem<'_>],
    k: usize,
) -> Result<RetrievalResult> {
    if k == 0 {
        return Err(Error::Argument("K must be at least 1".into()));
    }
    if pool.is_empty() {
        return Err(Error::EmptyPool(format!("no candidates for `{subject}`")));
    }
    let mut scored = Vec::with_capacity(pool.len());
    for (i, item) in pool.iter().enumerate() {
        check_dims(query.len(), item.vector.len())?;
        scored.push((i, dot(query, item.vector)));
    }
    let take = k.min(scored.len());
    if take < scored.len() {
        scored.select_nth_unstable_by(take - 1, |a, b| ranking(a, b, pool));
        scored.truncate(take);
    }
    scored.sort_by(|a, b| ranking(a, b, pool));
    for w in scored.windows(2) {
        if pool[w[0].0].asset_id == pool[w[1].0].asset_id {
            return Err(Error::Argument(format!(
                "duplicate asset `{}` in pool",
                pool[w[0].0].asset_id
            )));
        }
    }
    Ok(RetrievalResult {
        subject: subject.to_string(),
        query_embedding_id: query_id.to_string(),
        k,
        ranked: scored
            .into_iter()
            .map(|(i, score)| Ranked {
                asset_id: pool[i].asset_id.to_string(),
                score,
            })
            .collect(),
    })
}

pub fn write_retrieval_dump<W: Write>(results: &[RetrievalResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RETRIEVAL_HEADER.split(','))?;
    for r in results {
        for (rank, item) in r.ranked.iter().enumerate() {
            w.write_record([
                r.subject.as_str(),
                &(rank + 1).to_string(),
                &item.asset_id,
                &item.score.to_string(),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
