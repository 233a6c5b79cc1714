use rand::Rng as _;

use crate::error::{Error, Result};
use crate::metrics::MetricKind;
use crate::rng::Rng;

use super::scorer::Dissimilarity;
use super::template::{PromptPool, PromptTemplate};

#[derive(Clone, Debug, PartialEq)]
pub struct PoolSelection {
    pub pool: PromptPool,
    /// Candidate indices in selection order.
    pub indices: Vec<usize>,
}

/// Greedy farthest-point selection of `k` diverse templates.
///
/// Seeds with `candidates[0]`, then repeatedly adds the candidate whose
/// minimum dissimilarity to the selected set is largest (ties go to the
/// lowest index). With `min_dissimilarity`, candidates closer than the
/// threshold to an earlier kept candidate are dropped first.
pub fn select_pool(
    candidates: &[PromptTemplate],
    k: usize,
    scorer: &dyn Dissimilarity,
    min_dissimilarity: Option<f64>,
) -> Result<PoolSelection> {
    if k == 0 {
        return Err(Error::InvalidArgument("pool size must be positive".into()));
    }
    if candidates.len() < k {
        return Err(Error::NotEnoughCandidates { k, available: candidates.len() });
    }
    let arity = candidates[0].arity();
    if let Some(t) = candidates.iter().find(|t| t.arity() != arity) {
        return Err(Error::ArityMismatch { expected: arity.count(), actual: t.arity().count() });
    }

    let n = candidates.len();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = scorer.score(&candidates[i], &candidates[j])?;
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }

    let eligible: Vec<usize> = match min_dissimilarity {
        None => (0..n).collect(),
        Some(threshold) => {
            let mut kept: Vec<usize> = Vec::new();
            for (i, row) in dist.iter().enumerate() {
                if kept.iter().all(|&j| row[j] >= threshold) {
                    kept.push(i);
                }
            }
            kept
        }
    };
    if eligible.len() < k {
        return Err(Error::NotEnoughCandidates { k, available: eligible.len() });
    }

    let mut selected = vec![eligible[0]];
    let mut min_dist: Vec<f64> = eligible.iter().map(|&i| dist[eligible[0]][i]).collect();
    let mut taken = vec![false; eligible.len()];
    taken[0] = true;
    while selected.len() < k {
        let mut best: Option<usize> = None;
        for (pos, &d) in min_dist.iter().enumerate() {
            if !taken[pos] && best.is_none_or(|b| d > min_dist[b]) {
                best = Some(pos);
            }
        }
        let pos = best.expect("eligible.len() >= k");
        taken[pos] = true;
        let chosen = eligible[pos];
        selected.push(chosen);
        for (p, &i) in eligible.iter().enumerate() {
            min_dist[p] = min_dist[p].min(dist[chosen][i]);
        }
    }

    let pool = PromptPool::new(selected.iter().map(|&i| candidates[i].clone()).collect())?;
    Ok(PoolSelection { pool, indices: selected })
}

/// Uniform template index for one training example.
pub fn sample_template(pool: &PromptPool, rng: &mut Rng) -> usize {
    sample_index(pool.len(), rng)
}

/// A pool of one never touches `rng`.
pub(crate) fn sample_index(pool_size: usize, rng: &mut Rng) -> usize {
    if pool_size == 1 {
        return 0;
    }
    rng.random_range(0..pool_size)
}

/// Index of the template with the best score under `metric`'s direction;
/// ties go to the lowest index. A single-template pool is not evaluated.
pub fn select_inference_template<F>(pool_size: usize, metric: MetricKind, mut evaluate: F) -> Result<usize>
where
    F: FnMut(usize) -> Result<f64>,
{
    if pool_size == 0 {
        return Err(Error::NotEnoughCandidates { k: 1, available: 0 });
    }
    if pool_size == 1 {
        return Ok(0);
    }
    let direction = metric.direction();
    let mut best = (0, evaluate(0)?);
    for i in 1..pool_size {
        let score = evaluate(i)?;
        if direction.improves(score, best.1) {
            best = (i, score);
        }
    }
    Ok(best.0)
}
