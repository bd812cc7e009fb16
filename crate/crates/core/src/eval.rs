//! Recovery metrics against ground truth.
//!
//! Only entries hidden by the mask are scored. Per-node cosine similarity
//! compares whole rows for every node with at least one hidden entry, and can
//! be grouped by the node's SPD-S (the smallest distance over its hidden
//! channels).

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::confidence::UNREACHABLE;
use crate::error::{PcfiError, Result};
use crate::masking::KnownMask;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeCosine {
    pub node: usize,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdsBucket {
    pub spds: u32,
    pub nodes: usize,
    pub mean_cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub missing_entries: usize,
    /// RMSE over all hidden entries.
    pub rmse: Option<f64>,
    /// RMSE per channel; `None` for channels without hidden entries.
    pub rmse_per_channel: Vec<Option<f64>>,
    pub evaluated_nodes: usize,
    /// Nodes whose imputed or true row has zero norm.
    pub cosine_skipped_nodes: usize,
    pub mean_cosine: Option<f64>,
    pub node_cosine: Vec<NodeCosine>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spds_buckets: Option<Vec<SpdsBucket>>,
    /// Spearman correlation between bucket SPD-S and bucket mean cosine.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spds_spearman: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    #[serde(default)]
    pub flagged_channels: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<f64>,
}

fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> Option<f64> {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    (na > 0.0 && nb > 0.0).then(|| a.dot(&b) / (na * nb))
}

pub fn evaluate(
    truth: &Array2<f64>,
    imputed: &Array2<f64>,
    known: &KnownMask,
    spds: Option<&Array2<u32>>,
) -> Result<EvalReport> {
    let dim = truth.dim();
    if imputed.dim() != dim || known.dim() != dim || spds.is_some_and(|s| s.dim() != dim) {
        return Err(PcfiError::shape(
            format!("{dim:?} for truth, imputed, mask and SPD-S"),
            format!(
                "imputed {:?}, mask {:?}, SPD-S {:?}",
                imputed.dim(),
                known.dim(),
                spds.map(|s| s.dim())
            ),
        ));
    }
    let (n, f) = dim;

    let mut sq = vec![0.0; f];
    let mut counts = vec![0usize; f];
    for i in 0..n {
        for d in 0..f {
            if !known.get(i, d) {
                let e = imputed[[i, d]] - truth[[i, d]];
                sq[d] += e * e;
                counts[d] += 1;
            }
        }
    }
    let missing_entries: usize = counts.iter().sum();
    let rmse =
        (missing_entries > 0).then(|| (sq.iter().sum::<f64>() / missing_entries as f64).sqrt());
    let rmse_per_channel = sq
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (c > 0).then(|| (s / c as f64).sqrt()))
        .collect();

    let mut node_cosine = Vec::new();
    let mut skipped = 0;
    let mut evaluated = 0;
    let mut buckets: BTreeMap<u32, (usize, f64)> = BTreeMap::new();
    for i in 0..n {
        let missing: Vec<usize> = (0..f).filter(|&d| !known.get(i, d)).collect();
        if missing.is_empty() {
            continue;
        }
        evaluated += 1;
        let Some(c) = cosine(imputed.row(i), truth.row(i)) else {
            skipped += 1;
            continue;
        };
        node_cosine.push(NodeCosine { node: i, cosine: c });
        if let Some(s) = spds {
            let dist = missing.iter().map(|&d| s[[i, d]]).min().unwrap();
            if dist != UNREACHABLE {
                let e = buckets.entry(dist).or_insert((0, 0.0));
                e.0 += 1;
                e.1 += c;
            }
        }
    }
    let mean_cosine = (!node_cosine.is_empty())
        .then(|| node_cosine.iter().map(|c| c.cosine).sum::<f64>() / node_cosine.len() as f64);

    let spds_buckets: Option<Vec<SpdsBucket>> = spds.map(|_| {
        buckets
            .into_iter()
            .map(|(spds, (nodes, total))| SpdsBucket {
                spds,
                nodes,
                mean_cosine: total / nodes as f64,
            })
            .collect()
    });
    let spds_spearman = spds_buckets.as_ref().and_then(|b| {
        let xs: Vec<f64> = b.iter().map(|b| b.spds as f64).collect();
        let ys: Vec<f64> = b.iter().map(|b| b.mean_cosine).collect();
        spearman(&xs, &ys)
    });

    Ok(EvalReport {
        schema_version: SCHEMA_VERSION,
        missing_entries,
        rmse,
        rmse_per_channel,
        evaluated_nodes: evaluated,
        cosine_skipped_nodes: skipped,
        mean_cosine,
        node_cosine,
        spds_buckets,
        spds_spearman,
        config: None,
        flagged_channels: Vec::new(),
        runtime_ms: None,
    })
}

/// Ranks starting at 1, ties sharing their average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` with fewer than two points or a
/// constant input.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}
