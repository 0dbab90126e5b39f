//! Post-training analyses: cosine similarity between preference predictions
//! and item embeddings, and aggregation of attention weights by session
//! length for heatmap export.

use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::FixedExample;
use crate::model::{forward, HyperParams, ModelError, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct CosineReport {
    /// Mean cosine similarity between predictions and all candidate items.
    pub avg_all: f64,
    /// Mean cosine similarity between predictions and the true next item.
    pub avg_next: f64,
    /// Zero-norm prediction/embedding pairs that had to be skipped.
    pub skipped: usize,
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot / (libm::sqrt(na) * libm::sqrt(nb)))
}

/// For every example, compares the variant's prediction vector against all
/// item embeddings and against the ground-truth next item's embedding.
pub fn cosine_analysis(
    params: &ModelParams,
    hp: &HyperParams,
    examples: &[FixedExample],
) -> Result<CosineReport, ModelError> {
    let m = params.item_count();
    let mut sum_all = 0.0;
    let mut n_all = 0usize;
    let mut sum_next = 0.0;
    let mut n_next = 0usize;
    let mut skipped = 0usize;
    for ex in examples {
        let trace = forward(params, hp, ex)?;
        let pred = match trace.prediction() {
            Some(p) => p,
            None => return Err(ModelError::NotTrainable(hp.variant)),
        };
        let mut example_sum = 0.0;
        let mut example_n = 0usize;
        for j in 1..=m {
            match cosine(&pred, params.item_embed.row(j)) {
                Some(c) => {
                    example_sum += c;
                    example_n += 1;
                }
                None => skipped += 1,
            }
        }
        if example_n > 0 {
            sum_all += example_sum / example_n as f64;
            n_all += 1;
        }
        match cosine(&pred, params.item_embed.row(ex.target.row())) {
            Some(c) => {
                sum_next += c;
                n_next += 1;
            }
            None => skipped += 1,
        }
    }
    Ok(CosineReport {
        avg_all: if n_all > 0 { sum_all / n_all as f64 } else { 0.0 },
        avg_next: if n_next > 0 { sum_next / n_next as f64 } else { 0.0 },
        skipped,
    })
}

/// Mean first-stage attention weight by (live session length, position).
/// Row `len` (1-based) averages the weights that sessions with exactly `len`
/// non-pad items put on each of their last `len` slots; longer sessions are
/// excluded. Cell `[len - 1][pos]` is the mean weight on the `pos`-th of
/// those slots, and counts per row come back alongside the table.
#[derive(Debug, Clone)]
pub struct AttentionTable {
    pub rows: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
}

pub fn attention_trace(
    params: &ModelParams,
    hp: &HyperParams,
    examples: &[FixedExample],
    max_len: usize,
) -> Result<AttentionTable, ModelError> {
    assert!(max_len >= 1);
    let mut sums: Vec<Vec<f64>> = (1..=max_len).map(|len| vec![0.0; len]).collect();
    let mut counts = vec![0usize; max_len];
    for ex in examples {
        let live = ex.live_len();
        if live == 0 || live > max_len {
            continue;
        }
        let trace = forward(params, hp, ex)?;
        let attn = match trace.attn {
            Some(a) => a,
            None => return Err(ModelError::NotTrainable(hp.variant)),
        };
        let offset = ex.n() - live;
        for pos in 0..live {
            sums[live - 1][pos] += attn.at(0, offset + pos);
        }
        counts[live - 1] += 1;
    }
    let rows = sums
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            if counts[i] == 0 {
                row
            } else {
                row.into_iter().map(|v| v / counts[i] as f64).collect()
            }
        })
        .collect();
    Ok(AttentionTable { rows, counts })
}
