//! Evaluation metrics and the improvement arithmetic used in the reports.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

impl Direction {
    /// Strict improvement of `candidate` over `incumbent`.
    pub fn improves(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Direction::HigherBetter => candidate > incumbent,
            Direction::LowerBetter => candidate < incumbent,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Prauc,
    Accuracy,
    Rmse,
}

impl MetricKind {
    pub fn direction(self) -> Direction {
        match self {
            MetricKind::Prauc | MetricKind::Accuracy => Direction::HigherBetter,
            MetricKind::Rmse => Direction::LowerBetter,
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Prauc => "prauc",
            MetricKind::Accuracy => "accuracy",
            MetricKind::Rmse => "rmse",
        })
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b || a == 0 {
        return Err(Error::LengthMismatch(a, b));
    }
    Ok(())
}

/// Area under the precision-recall curve as average precision: rank by
/// descending score (ties keep input order) and sum precision at each
/// positive, weighted by its recall increment.
pub fn prauc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

pub fn accuracy(predicted: &[usize], gold: &[usize]) -> Result<f64> {
    check_lengths(predicted.len(), gold.len())?;
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

pub fn rmse(predicted: &[f64], gold: &[f64]) -> Result<f64> {
    check_lengths(predicted.len(), gold.len())?;
    let sse: f64 = predicted.iter().zip(gold).map(|(p, g)| (p - g) * (p - g)).sum();
    Ok((sse / gold.len() as f64).sqrt())
}

/// Signed percentage change relative to `baseline`; positive always means
/// `candidate` is better.
pub fn improvement_pct(baseline: f64, candidate: f64, direction: Direction) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::ZeroBaseline);
    }
    Ok(match direction {
        Direction::HigherBetter => 100.0 * (candidate - baseline) / baseline,
        Direction::LowerBetter => 100.0 * (baseline - candidate) / baseline,
    })
}

pub fn average_improvement(row: &[f64]) -> f64 {
    if row.is_empty() {
        return 0.0;
    }
    row.iter().sum::<f64>() / row.len() as f64
}

pub fn mean(values: &[f64]) -> f64 {
    average_improvement(values)
}

/// Standard error of the mean (sample standard deviation over sqrt(n)).
pub fn std_err(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}
