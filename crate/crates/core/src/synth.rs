//! Synthetic class-structured graphs with Gaussian node features.
//!
//! Graphs come from a stochastic block model; features are drawn from one
//! Gaussian per class with equidistant means and a covariance whose
//! off-diagonal entries are a tenth of the diagonal. Shrinking the covariance
//! scale separates the classes and raises feature homophily.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{PcfiError, Result};
use crate::graph::{largest_component_nodes, Graph};

/// Covariance between distinct channels as a fraction of the variance.
pub const OFF_DIAGONAL_RATIO: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub intra_edge_prob: f64,
    pub inter_edge_prob: f64,
    /// Variance of each channel within a class.
    pub gaussian_scale: f64,
    pub seed: u64,
    /// Fail instead of approximating when the class means cannot be exactly
    /// equidistant in `feature_dim` dimensions.
    pub strict_equidistant: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_nodes: 5000,
            num_classes: 10,
            feature_dim: 5,
            intra_edge_prob: 0.008,
            inter_edge_prob: 0.0009,
            gaussian_scale: 0.05,
            seed: 0,
            strict_equidistant: false,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("intra", self.intra_edge_prob),
            ("inter", self.inter_edge_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(PcfiError::input(format!(
                    "{name} edge probability {p} outside [0, 1]"
                )));
            }
        }
        if !(self.gaussian_scale.is_finite() && self.gaussian_scale > 0.0) {
            return Err(PcfiError::input("gaussian scale must be positive"));
        }
        if self.num_classes < 2 {
            return Err(PcfiError::input("need at least 2 classes"));
        }
        if self.num_nodes < self.num_classes {
            return Err(PcfiError::input("need at least one node per class"));
        }
        if self.feature_dim == 0 {
            return Err(PcfiError::input("feature dimension must be at least 1"));
        }
        Ok(())
    }

    /// Expected degree before component extraction.
    pub fn expected_degree(&self) -> f64 {
        let n = self.num_nodes as f64;
        let per_class = n / self.num_classes as f64;
        (per_class - 1.0) * self.intra_edge_prob + (n - per_class) * self.inter_edge_prob
    }
}

#[derive(Debug, Clone)]
pub struct SynthGraph {
    /// Largest connected component of the sampled graph.
    pub graph: Graph,
    pub labels: Vec<usize>,
    /// Original id of every kept node.
    pub kept_nodes: Vec<usize>,
    pub sampled_nodes: usize,
    pub sampled_edges: usize,
    /// Sampled nodes outside the largest component.
    pub dropped_nodes: usize,
    /// Expected degree below 1; the sample is likely fragmented.
    pub fragmentation_warning: bool,
}

/// Samples the block model and keeps its largest component. Classes are
/// assigned round-robin, then shuffled.
pub fn generate_graph(spec: &SynthSpec) -> Result<SynthGraph> {
    spec.validate()?;
    let n = spec.num_nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % spec.num_classes).collect();
    labels.shuffle(&mut rng);

    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] {
                spec.intra_edge_prob
            } else {
                spec.inter_edge_prob
            };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let full = Graph::from_edges(&edges, n)?;
    let kept = largest_component_nodes(&full);
    let graph = full.induced_subgraph(&kept);
    let fragmentation_warning = spec.expected_degree() < 1.0;
    if fragmentation_warning {
        log::warn!(
            "expected degree {:.3} < 1: sampled graph is likely fragmented",
            spec.expected_degree()
        );
    }
    let dropped_nodes = n - kept.len();
    if dropped_nodes > 0 {
        log::warn!("graph is fragmented: dropped {dropped_nodes} of {n} nodes outside the largest component");
    }
    Ok(SynthGraph {
        labels: kept.iter().map(|&i| labels[i]).collect(),
        graph,
        kept_nodes: kept,
        sampled_nodes: n,
        sampled_edges: edges.len(),
        dropped_nodes,
        fragmentation_warning,
    })
}

#[derive(Debug, Clone)]
pub struct SynthFeatures {
    pub values: Array2<f64>,
    /// One mean per class, `C × F`.
    pub class_means: Array2<f64>,
    /// Whether the means are exactly equidistant (regular simplex).
    pub equidistant: bool,
    pub min_mean_distance: f64,
    pub max_mean_distance: f64,
}

/// Vertices of a regular simplex with unit edge length, centered at the
/// origin, embedded in `dim >= count - 1` dimensions.
pub fn simplex_means(count: usize, dim: usize) -> Array2<f64> {
    assert!(count >= 1 && dim + 1 >= count);
    // Helmert basis of the plane orthogonal to the all-ones vector: the unit
    // vectors e_i have pairwise distance sqrt(2) in it.
    let mut m = Array2::zeros((count, dim));
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    for k in 1..count {
        let norm = ((k * (k + 1)) as f64).sqrt();
        for i in 0..count {
            let coord = match i.cmp(&k) {
                std::cmp::Ordering::Less => 1.0 / norm,
                std::cmp::Ordering::Equal => -(k as f64) / norm,
                std::cmp::Ordering::Greater => 0.0,
            };
            m[[i, k - 1]] = coord * scale;
        }
    }
    m
}

/// Spreads `count` points in `dim` dimensions by repulsion on the unit
/// sphere, then rescales so the closest pair is at distance 1.
fn spread_means(count: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    let mut p = Array2::from_shape_fn((count, dim), |_| rng.sample::<f64, _>(StandardNormal));
    let normalize = |p: &mut Array2<f64>| {
        for mut row in p.rows_mut() {
            let norm = row.dot(&row).sqrt().max(1e-300);
            row /= norm;
        }
    };
    normalize(&mut p);
    let mut step = 0.1;
    for _ in 0..2000 {
        let mut force = Array2::<f64>::zeros((count, dim));
        for i in 0..count {
            for j in 0..count {
                if i != j {
                    let diff = &p.row(i) - &p.row(j);
                    let d2 = diff.dot(&diff).max(1e-12);
                    // inverse-square repulsion from an r^-2 potential
                    let mut fi = force.row_mut(i);
                    fi.scaled_add(1.0 / (d2 * d2), &diff);
                }
            }
        }
        p.scaled_add(step / count as f64, &force);
        normalize(&mut p);
        step *= 0.998;
    }
    let min = pairwise_distance_range(&p).0;
    p / min
}

fn pairwise_distance_range(p: &Array2<f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for i in 0..p.nrows() {
        for j in i + 1..p.nrows() {
            let diff = &p.row(i) - &p.row(j);
            let d = diff.dot(&diff).sqrt();
            lo = lo.min(d);
            hi = hi.max(d);
        }
    }
    (lo, hi)
}

/// Lower Cholesky factor of `scale * ((1 - r) I + r 11^T)`.
fn covariance_factor(dim: usize, scale: f64) -> Array2<f64> {
    let cov = Array2::from_shape_fn((dim, dim), |(i, j)| {
        if i == j {
            scale
        } else {
            scale * OFF_DIAGONAL_RATIO
        }
    });
    let mut l = Array2::<f64>::zeros((dim, dim));
    for i in 0..dim {
        for j in 0..=i {
            let mut sum = cov[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = if i == j {
                sum.sqrt()
            } else if l[[j, j]] > 0.0 {
                sum / l[[j, j]]
            } else {
                0.0
            };
        }
    }
    l
}

/// Samples one feature row per node from its class Gaussian.
pub fn generate_features(
    labels: &[usize],
    num_classes: usize,
    feature_dim: usize,
    gaussian_scale: f64,
    seed: u64,
    strict_equidistant: bool,
) -> Result<SynthFeatures> {
    if feature_dim == 0 {
        return Err(PcfiError::input("feature dimension must be at least 1"));
    }
    if !(gaussian_scale.is_finite() && gaussian_scale >= 0.0) {
        return Err(PcfiError::input("gaussian scale must be non-negative"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(PcfiError::input(format!(
            "label {bad} outside 0..{num_classes}"
        )));
    }
    let equidistant = num_classes <= feature_dim + 1;
    if !equidistant && strict_equidistant {
        return Err(PcfiError::input(format!(
            "{num_classes} equidistant means need at least {} dimensions, have {feature_dim}",
            num_classes - 1
        )));
    }
    let class_means = if equidistant {
        simplex_means(num_classes, feature_dim)
    } else {
        spread_means(num_classes, feature_dim, seed)
    };
    let (min_mean_distance, max_mean_distance) = pairwise_distance_range(&class_means);

    let factor = covariance_factor(feature_dim, gaussian_scale);
    // distinct stream from the graph sampler for the same seed
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut values = Array2::zeros((labels.len(), feature_dim));
    let mut z = Array1::<f64>::zeros(feature_dim);
    for (i, &label) in labels.iter().enumerate() {
        z.mapv_inplace(|_| rng.sample(StandardNormal));
        let noise = factor.dot(&z);
        values
            .row_mut(i)
            .assign(&(&class_means.row(label) + &noise));
    }
    Ok(SynthFeatures {
        values,
        class_means,
        equidistant,
        min_mean_distance,
        max_mean_distance,
    })
}

/// Mean cosine similarity between the feature vectors of adjacent nodes.
/// Edges touching a zero-norm row are skipped; their count is returned too.
pub fn feature_homophily(g: &Graph, x: &Array2<f64>) -> Result<(f64, usize)> {
    if x.nrows() != g.num_nodes() {
        return Err(PcfiError::shape(
            format!("{} feature rows", g.num_nodes()),
            x.nrows(),
        ));
    }
    let norms: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let mut total = 0.0;
    let mut counted = 0usize;
    let mut skipped = 0usize;
    for (u, v) in g.edges() {
        if norms[u] == 0.0 || norms[v] == 0.0 {
            skipped += 1;
            continue;
        }
        total += x.row(u).dot(&x.row(v)) / (norms[u] * norms[v]);
        counted += 1;
    }
    if counted == 0 {
        return Err(PcfiError::input(
            "feature homophily undefined: no usable edges",
        ));
    }
    Ok((total / counted as f64, skipped))
}

/// Fraction of edges joining nodes of the same class.
pub fn class_homophily(g: &Graph, labels: &[usize]) -> Option<f64> {
    let mut same = 0usize;
    let mut total = 0usize;
    for (u, v) in g.edges() {
        total += 1;
        if labels[u] == labels[v] {
            same += 1;
        }
    }
    (total > 0).then(|| same as f64 / total as f64)
}
