//! Missing-value masks and masked feature matrices.
//!
//! Two protocols are supported. *Structural* masking hides entire node rows;
//! *uniform* masking hides individual entries. Both draw a fixed number of
//! positions uniformly without replacement with a ChaCha8 generator seeded
//! from a `u64`, using a partial Fisher-Yates shuffle over row-major indices,
//! so a given `(N, F, rate, seed)` always yields the same mask.

use ndarray::{Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PcfiError, Result};
use crate::graph::select_rows;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Structural,
    Uniform,
}

impl std::str::FromStr for MaskKind {
    type Err = PcfiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structural" => Ok(MaskKind::Structural),
            "uniform" => Ok(MaskKind::Uniform),
            other => Err(PcfiError::input(format!(
                "unknown mask type {other:?} (expected structural or uniform)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub kind: MaskKind,
    /// Fraction of rows (structural) or entries (uniform) to hide, in (0, 1).
    pub rate: f64,
    pub seed: u64,
}

impl MaskSpec {
    pub fn new(kind: MaskKind, rate: f64, seed: u64) -> Result<Self> {
        check_rate(rate)?;
        Ok(MaskSpec { kind, rate, seed })
    }

    pub fn generate(&self, num_nodes: usize, num_channels: usize) -> Result<KnownMask> {
        match self.kind {
            MaskKind::Structural => structural_mask(num_nodes, num_channels, self.rate, self.seed),
            MaskKind::Uniform => uniform_mask(num_nodes, num_channels, self.rate, self.seed),
        }
    }
}

/// N×F observation mask; `true` marks an observed entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnownMask(Array2<bool>);

impl KnownMask {
    pub fn new(known: Array2<bool>) -> Self {
        KnownMask(known)
    }

    pub fn all_known(num_nodes: usize, num_channels: usize) -> Self {
        KnownMask(Array2::from_elem((num_nodes, num_channels), true))
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn as_array(&self) -> &Array2<bool> {
        &self.0
    }

    #[inline]
    pub fn get(&self, node: usize, channel: usize) -> bool {
        self.0[[node, channel]]
    }

    pub fn column(&self, channel: usize) -> Vec<bool> {
        self.0.column(channel).to_vec()
    }

    pub fn row(&self, node: usize) -> ArrayView1<'_, bool> {
        self.0.row(node)
    }

    /// True when every row is entirely observed or entirely missing.
    pub fn is_structural(&self) -> bool {
        self.0
            .axis_iter(Axis(0))
            .all(|row| row.iter().all(|&k| k == row[0]))
    }

    pub fn count_missing(&self) -> usize {
        self.0.iter().filter(|&&k| !k).count()
    }

    pub fn select_rows(&self, rows: &[usize]) -> KnownMask {
        KnownMask(select_rows(&self.0, rows))
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if rate.is_finite() && rate > 0.0 && rate < 1.0 {
        Ok(())
    } else {
        Err(PcfiError::input(format!(
            "missing rate must lie in (0, 1), got {rate}"
        )))
    }
}

/// `round(rate * total)` with halves rounded up.
pub fn missing_count(rate: f64, total: usize) -> usize {
    (rate * total as f64 + 0.5).floor() as usize
}

/// First `count` entries of a seeded partial Fisher-Yates shuffle of `0..total`.
fn sample_without_replacement(total: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (0..total).collect();
    for i in 0..count {
        let j = rng.random_range(i..total);
        pool.swap(i, j);
    }
    pool.truncate(count);
    pool
}

/// Hides `round(rate * N)` whole rows.
pub fn structural_mask(
    num_nodes: usize,
    num_channels: usize,
    rate: f64,
    seed: u64,
) -> Result<KnownMask> {
    check_rate(rate)?;
    let count = missing_count(rate, num_nodes);
    if count >= num_nodes {
        return Err(PcfiError::input(format!(
            "structural rate {rate} masks all {num_nodes} nodes, leaving no source"
        )));
    }
    let mut known = Array2::from_elem((num_nodes, num_channels), true);
    for node in sample_without_replacement(num_nodes, count, seed) {
        known.row_mut(node).fill(false);
    }
    Ok(KnownMask(known))
}

/// Hides `round(rate * N * F)` individual entries.
pub fn uniform_mask(
    num_nodes: usize,
    num_channels: usize,
    rate: f64,
    seed: u64,
) -> Result<KnownMask> {
    check_rate(rate)?;
    let total = num_nodes * num_channels;
    let count = missing_count(rate, total);
    if count >= total {
        return Err(PcfiError::input(format!(
            "uniform rate {rate} masks all {total} entries"
        )));
    }
    let mut known = Array2::from_elem((num_nodes, num_channels), true);
    for flat in sample_without_replacement(total, count, seed) {
        known[[flat / num_channels, flat % num_channels]] = false;
    }
    Ok(KnownMask(known))
}

/// Feature matrix with its observation mask. Unobserved entries hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    values: Array2<f64>,
    known: KnownMask,
}

impl FeatureSet {
    pub fn fully_observed(values: Array2<f64>) -> Self {
        let (n, f) = values.dim();
        FeatureSet {
            values,
            known: KnownMask::all_known(n, f),
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn known(&self) -> &KnownMask {
        &self.known
    }

    pub fn num_nodes(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, channel: usize) -> Vec<f64> {
        self.values.column(channel).to_vec()
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureSet {
        FeatureSet {
            values: select_rows(&self.values, rows),
            known: self.known.select_rows(rows),
        }
    }
}

/// Copies `x`, zeroing every entry the mask marks as missing.
pub fn apply_mask(x: &Array2<f64>, known: &KnownMask) -> Result<FeatureSet> {
    if x.dim() != known.dim() {
        return Err(PcfiError::shape(
            format!("{:?} mask", x.dim()),
            format!("{:?}", known.dim()),
        ));
    }
    let mut values = x.clone();
    ndarray::Zip::from(&mut values)
        .and(known.as_array())
        .for_each(|v, &k| {
            if !k {
                *v = 0.0;
            }
        });
    Ok(FeatureSet {
        values,
        known: known.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn all_false_rows(m: &KnownMask) -> usize {
        m.as_array()
            .axis_iter(Axis(0))
            .filter(|r| r.iter().all(|&k| !k))
            .count()
    }

    #[test]
    fn structural_counts() {
        for seed in 0..20 {
            let m = structural_mask(4, 2, 0.5, seed).unwrap();
            assert_eq!(all_false_rows(&m), 2);
            assert!(m.is_structural());
        }
        let m = structural_mask(200, 3, 0.995, 7).unwrap();
        assert_eq!(all_false_rows(&m), 199);
    }

    #[test]
    fn structural_is_deterministic() {
        let a = structural_mask(50, 4, 0.3, 11).unwrap();
        let b = structural_mask(50, 4, 0.3, 11).unwrap();
        assert_eq!(a, b);
        let c = structural_mask(50, 4, 0.3, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn structural_rejects_full_masking() {
        assert!(structural_mask(10, 2, 0.99, 0).is_err());
        assert!(structural_mask(10, 2, 1.0, 0).is_err());
        assert!(structural_mask(10, 2, 0.0, 0).is_err());
    }

    #[test]
    fn uniform_counts() {
        assert_eq!(uniform_mask(2, 2, 0.5, 3).unwrap().count_missing(), 2);
        assert_eq!(uniform_mask(4, 4, 0.25, 3).unwrap().count_missing(), 4);
        let m = uniform_mask(100, 50, 0.995, 9).unwrap();
        let frac = m.count_missing() as f64 / 5000.0;
        assert!((frac - 0.995).abs() <= 1.0 / 5000.0);
        assert!(uniform_mask(2, 2, 0.9, 0).is_err());
    }

    #[test]
    fn half_rounds_up() {
        assert_eq!(missing_count(0.5, 5), 3);
        assert_eq!(missing_count(0.25, 2), 1);
        assert_eq!(missing_count(0.1, 4), 0);
    }

    #[test]
    fn uniform_marginals_are_flat() {
        // chi-square over per-entry missing counts across seeds
        let (n, f, rate, trials) = (6, 5, 0.4, 2000u64);
        let mut hits = Array2::<f64>::zeros((n, f));
        for seed in 0..trials {
            let m = uniform_mask(n, f, rate, seed).unwrap();
            ndarray::Zip::from(&mut hits)
                .and(m.as_array())
                .for_each(|h, &k| {
                    if !k {
                        *h += 1.0;
                    }
                });
        }
        let expected = trials as f64 * missing_count(rate, n * f) as f64 / (n * f) as f64;
        let chi2: f64 = hits
            .iter()
            .map(|&h| (h - expected).powi(2) / expected)
            .sum();
        // 29 dof, the 99.9% quantile is about 58.3
        assert!(chi2 < 58.3, "chi2 = {chi2}");
    }

    #[test]
    fn apply_mask_examples() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let known = KnownMask::new(array![[true, false], [false, true]]);
        let fs = apply_mask(&x, &known).unwrap();
        assert_eq!(fs.values(), &array![[1.0, 0.0], [0.0, 4.0]]);
        assert_eq!(x, array![[1.0, 2.0], [3.0, 4.0]]);

        let all = apply_mask(&x, &KnownMask::all_known(2, 2)).unwrap();
        assert_eq!(all.values(), &x);

        let col = KnownMask::new(array![[true, false], [true, false]]);
        let fs = apply_mask(&x, &col).unwrap();
        assert!(fs.values().column(1).iter().all(|&v| v == 0.0));

        assert!(apply_mask(&x, &KnownMask::all_known(3, 2)).is_err());
    }

    proptest! {
        #[test]
        fn structural_rows_are_constant(n in 2usize..80, f in 1usize..6, rate in 0.01f64..0.9, seed: u64) {
            let count = missing_count(rate, n);
            prop_assume!(count < n);
            let m = structural_mask(n, f, rate, seed).unwrap();
            prop_assert!(m.is_structural());
            prop_assert_eq!(all_false_rows(&m), count);
            prop_assert_eq!(m, structural_mask(n, f, rate, seed).unwrap());
        }
    }
}
