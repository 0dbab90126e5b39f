//! Ranking metrics (recall / MRR / NDCG at a cutoff) and a paired Student
//! t-test for comparing per-example metric vectors.

use alloc::vec::Vec;
use core::fmt;

use crate::corpus::ItemId;

/// 1-based rank of `target` under descending score order. Ties go to the
/// smaller item id, which keeps ranks deterministic.
pub fn rank_of_target(scores: &[f64], target: ItemId) -> usize {
    let t = target.row();
    assert!(t >= 1 && t <= scores.len(), "target outside score vector");
    let ts = scores[t - 1];
    let mut rank = 1;
    for (j, &s) in scores.iter().enumerate() {
        if s > ts || (s == ts && j + 1 < t) {
            rank += 1;
        }
    }
    rank
}

/// `(recall, mrr, ndcg)` of a single ranked example at cutoff `k`. With one
/// relevant item of gain 1 the ideal DCG is 1, so NDCG reduces to the
/// discounted gain itself.
pub fn metrics_at_k(rank: usize, k: usize) -> (f64, f64, f64) {
    assert!(rank >= 1 && k >= 1);
    if rank > k {
        return (0.0, 0.0, 0.0);
    }
    let recall = 1.0;
    let mrr = 1.0 / rank as f64;
    let ndcg = 1.0 / libm::log2((rank + 1) as f64);
    (recall, mrr, ndcg)
}

/// Per-cutoff aggregates plus the per-example values needed for
/// significance testing.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub cutoffs: Vec<usize>,
    /// `per_example[c][i]` holds (recall, mrr, ndcg) of example `i` at
    /// cutoff `cutoffs[c]`.
    pub per_example: Vec<Vec<(f64, f64, f64)>>,
}

impl MetricsReport {
    pub fn new(cutoffs: Vec<usize>) -> Self {
        assert!(!cutoffs.is_empty());
        let per_example = cutoffs.iter().map(|_| Vec::new()).collect();
        MetricsReport {
            cutoffs,
            per_example,
        }
    }

    pub fn record(&mut self, rank: usize) {
        for (c, &k) in self.cutoffs.iter().enumerate() {
            self.per_example[c].push(metrics_at_k(rank, k));
        }
    }

    pub fn len(&self) -> usize {
        self.per_example[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mean `(recall, mrr, ndcg)` at `cutoffs[c]`.
    pub fn mean(&self, c: usize) -> (f64, f64, f64) {
        let xs = &self.per_example[c];
        let n = xs.len().max(1) as f64;
        let sum = xs.iter().fold((0.0, 0.0, 0.0), |acc, v| {
            (acc.0 + v.0, acc.1 + v.1, acc.2 + v.2)
        });
        (sum.0 / n, sum.1 / n, sum.2 / n)
    }

    pub fn recall_values(&self, c: usize) -> Vec<f64> {
        self.per_example[c].iter().map(|v| v.0).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedTTest {
    pub t: f64,
    pub significant: bool,
    pub df: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TTestError {
    LengthMismatch { a: usize, b: usize },
    TooFewSamples,
}

impl fmt::Display for TTestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TTestError::LengthMismatch { a, b } => {
                write!(f, "paired samples differ in length: {} vs {}", a, b)
            }
            TTestError::TooFewSamples => write!(f, "paired t-test needs at least two pairs"),
        }
    }
}

// Two-sided critical values of Student's t at alpha = 0.05 for df = 1..=30,
// then the usual long-table anchors. Above df = 200 the normal
// approximation (1.96) applies.
const T_CRIT_1_TO_30: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160,
    2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056,
    2.052, 2.048, 2.045, 2.042,
];

fn t_critical_95(df: usize) -> f64 {
    match df {
        0 => f64::INFINITY,
        1..=30 => T_CRIT_1_TO_30[df - 1],
        31..=40 => 2.021,
        41..=60 => 2.000,
        61..=120 => 1.980,
        121..=200 => 1.972,
        _ => 1.96,
    }
}

/// Two-sided paired t-test at 95% confidence on the differences `a - b`.
/// A zero-variance difference vector is a degenerate case: all-equal pairs
/// are not significant with `t = 0`; a constant nonzero shift is reported
/// significant with an infinite statistic.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest, TTestError> {
    if a.len() != b.len() {
        return Err(TTestError::LengthMismatch { a: a.len(), b: b.len() });
    }
    let n = a.len();
    if n < 2 {
        return Err(TTestError::TooFewSamples);
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            PairedTTest { t: 0.0, significant: false, df }
        } else {
            PairedTTest {
                t: if mean > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY },
                significant: true,
                df,
            }
        });
    }
    let t = mean / (libm::sqrt(var) / libm::sqrt(n as f64));
    let significant = t.abs() > t_critical_95(df);
    Ok(PairedTTest { t, significant, df })
}
