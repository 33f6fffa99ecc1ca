//! Choosing models from a pool for merging: plain nearest neighbours, an
//! anchor plus random fill, or a maximally dispersed subset.

use thiserror::Error;

use crate::analysis::{cosine_similarity, AnalysisError};
use crate::rng::SplitMix64;

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("empty pool")]
    EmptyPool,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("asked for {k} models from a pool of {pool}")]
    KTooLarge { k: usize, pool: usize },
    #[error("dimension mismatch: query has {query}, {model_id:?} has {found}")]
    DimMismatch {
        model_id: String,
        query: usize,
        found: usize,
    },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

fn check_k(k: usize, n: usize) -> Result<(), SelectionError> {
    if n == 0 {
        Err(SelectionError::EmptyPool)
    } else if k == 0 {
        Err(SelectionError::ZeroK)
    } else if k > n {
        Err(SelectionError::KTooLarge { k, pool: n })
    } else {
        Ok(())
    }
}

fn check_dims<S: AsRef<str>, V: AsRef<[f32]>>(dim: usize, pool: &[(S, V)]) -> Result<(), SelectionError> {
    for (id, v) in pool {
        if v.as_ref().len() != dim {
            return Err(SelectionError::DimMismatch {
                model_id: id.as_ref().to_string(),
                query: dim,
                found: v.as_ref().len(),
            });
        }
    }
    Ok(())
}

/// Pool members ranked by cosine similarity to `query`, best first; equal
/// similarities in lexicographic id order.
pub fn rank<S: AsRef<str>, V: AsRef<[f32]>>(query: &[f32], pool: &[(S, V)]) -> Result<Vec<(String, f64)>, SelectionError> {
    if pool.is_empty() {
        return Err(SelectionError::EmptyPool);
    }
    check_dims(query.len(), pool)?;
    let mut out = pool
        .iter()
        .map(|(id, v)| Ok((id.as_ref().to_string(), cosine_similarity(query, v.as_ref())?)))
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

pub fn nearest<S: AsRef<str>, V: AsRef<[f32]>>(
    query: &[f32],
    pool: &[(S, V)],
    k: usize,
) -> Result<Vec<(String, f64)>, SelectionError> {
    check_k(k, pool.len())?;
    let mut ranked = rank(query, pool)?;
    ranked.truncate(k);
    Ok(ranked)
}

/// The most similar model followed by `k_total - 1` others drawn uniformly
/// without replacement (Fisher-Yates prefix over the remaining pool order).
pub fn anchor_select<S: AsRef<str>, V: AsRef<[f32]>>(
    query: &[f32],
    pool: &[(S, V)],
    k_total: usize,
    seed: u64,
) -> Result<Vec<String>, SelectionError> {
    check_k(k_total, pool.len())?;
    let anchor = rank(query, pool)?.swap_remove(0).0;
    let rest: Vec<&str> = pool.iter().map(|(id, _)| id.as_ref()).filter(|id| *id != anchor).collect();
    let mut rng = SplitMix64::new(seed);
    let mut out = vec![anchor];
    out.extend(rng.sample_indices(rest.len(), k_total - 1).into_iter().map(|i| rest[i].to_string()));
    Ok(out)
}

/// Greedy farthest-point selection under cosine distance. The first pick is
/// drawn from `seed`; each later pick maximizes its minimum distance to those
/// already chosen (ties to the smaller id). Returned in pick order.
pub fn disperse_select<S: AsRef<str>, V: AsRef<[f32]>>(
    pool: &[(S, V)],
    k: usize,
    seed: u64,
) -> Result<Vec<String>, SelectionError> {
    check_k(k, pool.len())?;
    check_dims(pool[0].1.as_ref().len(), pool)?;
    let n = pool.len();
    let mut rng = SplitMix64::new(seed);
    let first = rng.below(n);
    let mut chosen = vec![first];
    let mut min_dist = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    taken[first] = true;
    while chosen.len() < k {
        let last = *chosen.last().unwrap();
        for j in (0..n).filter(|&j| !taken[j]) {
            let d = 1.0 - cosine_similarity(pool[last].1.as_ref(), pool[j].1.as_ref())?;
            min_dist[j] = min_dist[j].min(d);
        }
        let best = (0..n)
            .filter(|&j| !taken[j])
            .min_by(|&a, &b| {
                min_dist[b]
                    .total_cmp(&min_dist[a])
                    .then_with(|| pool[a].0.as_ref().cmp(pool[b].0.as_ref()))
            })
            .unwrap();
        taken[best] = true;
        chosen.push(best);
    }
    if k == 1 {
        // Still reject zero vectors so the result never depends on k.
        for (_, v) in pool {
            cosine_similarity(v.as_ref(), v.as_ref())?;
        }
    }
    Ok(chosen.into_iter().map(|i| pool[i].0.as_ref().to_string()).collect())
}
