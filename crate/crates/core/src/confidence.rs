//! Shortest path distance to the nearest source (SPD-S) and pseudo-confidence.
//!
//! For channel `d`, `S[i, d]` is the hop distance from node `i` to the nearest
//! node whose value in that channel is observed. Pseudo-confidence is
//! `alpha^S`: 1 at sources, decaying geometrically with distance.

use std::collections::VecDeque;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PcfiError, Result};
use crate::graph::Graph;
use crate::masking::KnownMask;

/// Distance sentinel for nodes with no reachable source.
pub const UNREACHABLE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpdsMode {
    /// One BFS shared by all channels; requires constant mask rows.
    Structural,
    PerChannel,
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(PcfiError::input(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// `alpha^exp` by repeated squaring. Negative exponents give `(1/alpha)^|exp|`.
pub fn alpha_pow(alpha: f64, exp: i64) -> f64 {
    let mut base = if exp < 0 { 1.0 / alpha } else { alpha };
    let mut e = exp.unsigned_abs();
    let mut acc = 1.0;
    while e > 0 {
        if e & 1 == 1 {
            acc *= base;
        }
        base *= base;
        e >>= 1;
    }
    acc
}

/// Multi-source BFS from every node with `known_column[i] == true`.
pub fn compute_spds_channel(g: &Graph, known_column: &[bool]) -> Vec<u32> {
    let n = g.num_nodes();
    assert_eq!(
        known_column.len(),
        n,
        "mask column length must equal node count"
    );
    let mut dist = vec![UNREACHABLE; n];
    let mut queue = VecDeque::new();
    for (i, &k) in known_column.iter().enumerate() {
        if k {
            dist[i] = 0;
            queue.push_back(i);
        }
    }
    while let Some(u) = queue.pop_front() {
        let next = dist[u] + 1;
        for &v in g.neighbors(u) {
            if dist[v] == UNREACHABLE {
                dist[v] = next;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// N×F matrix of SPD-S values together with the confidence base `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdsMatrix {
    distances: Array2<u32>,
    alpha: f64,
}

impl SpdsMatrix {
    pub fn new(distances: Array2<u32>, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(SpdsMatrix { distances, alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        SpdsMatrix::new(self.distances.clone(), alpha)
    }

    pub fn distances(&self) -> &Array2<u32> {
        &self.distances
    }

    pub fn dim(&self) -> (usize, usize) {
        self.distances.dim()
    }

    #[inline]
    pub fn get(&self, node: usize, channel: usize) -> u32 {
        self.distances[[node, channel]]
    }

    pub fn column(&self, channel: usize) -> Vec<u32> {
        self.distances.column(channel).to_vec()
    }

    /// Confidence of one entry; 0 when unreachable.
    #[inline]
    pub fn confidence(&self, node: usize, channel: usize) -> f64 {
        confidence_of(self.alpha, self.get(node, channel))
    }

    pub fn select_rows(&self, rows: &[usize]) -> SpdsMatrix {
        SpdsMatrix {
            distances: crate::graph::select_rows(&self.distances, rows),
            alpha: self.alpha,
        }
    }
}

#[inline]
pub(crate) fn confidence_of(alpha: f64, s: u32) -> f64 {
    if s == UNREACHABLE {
        0.0
    } else {
        alpha_pow(alpha, s as i64)
    }
}

pub fn compute_spds(
    g: &Graph,
    known: &KnownMask,
    mode: SpdsMode,
    alpha: f64,
) -> Result<SpdsMatrix> {
    check_alpha(alpha)?;
    let (n, f) = known.dim();
    if n != g.num_nodes() {
        return Err(PcfiError::shape(format!("{} mask rows", g.num_nodes()), n));
    }
    let mut distances = Array2::from_elem((n, f), UNREACHABLE);
    match mode {
        SpdsMode::Structural => {
            if !known.is_structural() {
                return Err(PcfiError::input(
                    "structural SPD-S requires every mask row to be constant across channels",
                ));
            }
            if f > 0 {
                let col = compute_spds_channel(g, &known.column(0));
                for (i, &s) in col.iter().enumerate() {
                    distances.row_mut(i).fill(s);
                }
            }
        }
        SpdsMode::PerChannel => {
            let cols: Vec<Vec<u32>> = (0..f)
                .into_par_iter()
                .map(|d| compute_spds_channel(g, &known.column(d)))
                .collect();
            for (d, col) in cols.into_iter().enumerate() {
                distances.column_mut(d).assign(&ndarray::Array1::from(col));
            }
        }
    }
    Ok(SpdsMatrix { distances, alpha })
}

/// Entrywise `alpha^S`, with 0 for unreachable entries.
pub fn pseudo_confidence(s: &SpdsMatrix) -> Array2<f64> {
    let alpha = s.alpha;
    s.distances.mapv(|d| confidence_of(alpha, d))
}

/// Relative pseudo-confidence of `j` with respect to `i` in channel `d`:
/// `alpha^(S[j,d] - S[i,d])`.
pub fn relative_pc(s: &SpdsMatrix, i: usize, j: usize, d: usize) -> Result<f64> {
    let (si, sj) = (s.get(i, d), s.get(j, d));
    for (node, dist) in [(i, si), (j, sj)] {
        if dist == UNREACHABLE {
            return Err(PcfiError::UndefinedRelativeConfidence { node, channel: d });
        }
    }
    Ok(alpha_pow(s.alpha, sj as i64 - si as i64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn path3() -> Graph {
        Graph::from_edges(&[(0, 1), (1, 2)], 3).unwrap()
    }

    /// Floyd-Warshall over hop counts, then min over sources.
    #[allow(clippy::needless_range_loop)]
    fn brute_spds(g: &Graph, known: &[bool]) -> Vec<u32> {
        let n = g.num_nodes();
        let inf = u64::MAX / 4;
        let mut d = vec![vec![inf; n]; n];
        for i in 0..n {
            d[i][i] = 0;
            for &j in g.neighbors(i) {
                d[i][j] = 1;
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if d[i][k] + d[k][j] < d[i][j] {
                        d[i][j] = d[i][k] + d[k][j];
                    }
                }
            }
        }
        (0..n)
            .map(|i| {
                let best = (0..n)
                    .filter(|&s| known[s])
                    .map(|s| d[i][s])
                    .min()
                    .unwrap_or(inf);
                if best >= inf {
                    UNREACHABLE
                } else {
                    best as u32
                }
            })
            .collect()
    }

    #[test]
    fn channel_examples() {
        let g = path3();
        assert_eq!(
            compute_spds_channel(&g, &[true, false, false]),
            vec![0, 1, 2]
        );
        assert_eq!(
            compute_spds_channel(&g, &[true, false, true]),
            vec![0, 1, 0]
        );

        let star = Graph::from_edges(&[(0, 1), (0, 2), (0, 3), (0, 4)], 5).unwrap();
        let known = [false, true, false, false, false];
        let bfs = compute_spds_channel(&star, &known);
        assert_eq!(bfs, brute_spds(&star, &known));
        assert_eq!(bfs, vec![1, 0, 2, 2, 2]);
    }

    #[test]
    fn matrix_modes() {
        let g = path3();
        let known = KnownMask::new(array![
            [true, true, true],
            [false, false, false],
            [false, false, false]
        ]);
        let s = compute_spds(&g, &known, SpdsMode::Structural, 0.5).unwrap();
        for d in 0..3 {
            assert_eq!(s.column(d), vec![0, 1, 2]);
        }
        assert_eq!(
            s,
            compute_spds(&g, &known, SpdsMode::PerChannel, 0.5).unwrap()
        );

        let known = KnownMask::new(array![
            [true, false, false],
            [false, false, false],
            [false, true, false]
        ]);
        let s = compute_spds(&g, &known, SpdsMode::PerChannel, 0.5).unwrap();
        assert_eq!(s.column(0), vec![0, 1, 2]);
        assert_eq!(s.column(1), vec![2, 1, 0]);
        assert_eq!(s.column(2), vec![UNREACHABLE; 3]);

        assert!(compute_spds(&g, &known, SpdsMode::Structural, 0.5).is_err());
        assert!(compute_spds(&g, &known, SpdsMode::PerChannel, 1.0).is_err());
    }

    #[test]
    fn confidence_values() {
        let s = SpdsMatrix::new(array![[2, 0, UNREACHABLE]], 0.5).unwrap();
        let xi = pseudo_confidence(&s);
        assert_eq!(xi, array![[0.25, 1.0, 0.0]]);
        assert!(SpdsMatrix::new(array![[0u32]], 0.0).is_err());
        assert!(SpdsMatrix::new(array![[0u32]], 1.5).is_err());
    }

    #[test]
    fn relative_examples() {
        let s = SpdsMatrix::new(array![[2], [1], [1], [UNREACHABLE]], 0.5).unwrap();
        assert_eq!(relative_pc(&s, 0, 1, 0).unwrap(), 2.0);
        assert_eq!(relative_pc(&s, 1, 2, 0).unwrap(), 1.0);
        assert_eq!(relative_pc(&s, 1, 0, 0).unwrap(), 0.5);
        assert!(matches!(
            relative_pc(&s, 0, 3, 0),
            Err(PcfiError::UndefinedRelativeConfidence {
                node: 3,
                channel: 0
            })
        ));
    }

    #[test]
    fn alpha_pow_matches_powi() {
        for &a in &[0.1f64, 0.5, 0.9] {
            for e in -30i64..30 {
                let want = a.powi(e as i32);
                assert!((alpha_pow(a, e) - want).abs() <= 1e-12 * want.abs());
            }
        }
        assert_eq!(alpha_pow(0.5, 2000), 0.0);
    }

    fn random_graph() -> impl Strategy<Value = (Graph, Vec<bool>)> {
        (2usize..50).prop_flat_map(|n| {
            (
                proptest::collection::vec((0..n, 0..n), 0..3 * n),
                proptest::collection::vec(any::<bool>(), n),
            )
                .prop_map(move |(e, k)| (Graph::from_edges(&e, n).unwrap(), k))
        })
    }

    proptest! {
        #[test]
        fn bfs_matches_all_pairs((g, known) in random_graph()) {
            prop_assert_eq!(compute_spds_channel(&g, &known), brute_spds(&g, &known));
        }

        #[test]
        fn adjacent_distances_differ_by_at_most_one((g, known) in random_graph()) {
            let s = compute_spds_channel(&g, &known);
            for (u, v) in g.edges() {
                if s[u] != UNREACHABLE && s[v] != UNREACHABLE {
                    prop_assert!(s[u].abs_diff(s[v]) <= 1);
                } else {
                    prop_assert_eq!(s[u], s[v]);
                }
            }
            for (i, &k) in known.iter().enumerate() {
                prop_assert_eq!(s[i] == 0, k);
            }
        }

        #[test]
        fn confidence_strictly_decreasing(alpha in 0.01f64..0.99, s in 0i64..200) {
            prop_assert!(alpha_pow(alpha, s + 1) < alpha_pow(alpha, s));
        }
    }
}
