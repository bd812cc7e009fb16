//! Undirected graphs in compressed sparse row form.

use std::collections::VecDeque;

use ndarray::Array2;

use crate::error::{PcfiError, Result};
use crate::masking::FeatureSet;

/// Undirected simple graph. Each node's neighbors are stored sorted and
/// deduplicated; self-loops are never stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl Graph {
    /// Builds a graph from an edge list. Both orientations, duplicates and
    /// self-loops are accepted; the result is symmetric with self-loops
    /// dropped.
    pub fn from_edges(edges: &[(usize, usize)], num_nodes: usize) -> Result<Self> {
        let mut degree = vec![0usize; num_nodes];
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(PcfiError::NodeOutOfRange { u, v, num_nodes });
            }
            if u != v {
                degree[u] += 1;
                degree[v] += 1;
            }
        }

        let mut offsets = Vec::with_capacity(num_nodes + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..num_nodes].to_vec();
        let mut raw = vec![0usize; offsets[num_nodes]];
        for &(u, v) in edges {
            if u != v {
                raw[cursor[u]] = v;
                cursor[u] += 1;
                raw[cursor[v]] = u;
                cursor[v] += 1;
            }
        }

        // sort + dedup each row, then compact
        let mut neighbors = Vec::with_capacity(raw.len());
        let mut compact = Vec::with_capacity(num_nodes + 1);
        compact.push(0);
        for i in 0..num_nodes {
            let row = &mut raw[offsets[i]..offsets[i + 1]];
            row.sort_unstable();
            let start = neighbors.len();
            for &j in row.iter() {
                if neighbors.len() == start || *neighbors.last().unwrap() != j {
                    neighbors.push(j);
                }
            }
            compact.push(neighbors.len());
        }

        Ok(Graph {
            offsets: compact,
            neighbors,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    #[inline]
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[self.offsets[node]..self.offsets[node + 1]]
    }

    #[inline]
    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes()).map(|i| self.degree(i)).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }

    /// Subgraph induced on `nodes`; node `nodes[k]` becomes node `k`.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Graph {
        let mut new_id = vec![usize::MAX; self.num_nodes()];
        for (k, &old) in nodes.iter().enumerate() {
            new_id[old] = k;
        }
        let mut edges = Vec::new();
        for (k, &old) in nodes.iter().enumerate() {
            for &nb in self.neighbors(old) {
                let m = new_id[nb];
                if m != usize::MAX && k < m {
                    edges.push((k, m));
                }
            }
        }
        Graph::from_edges(&edges, nodes.len()).expect("induced ids are in range")
    }

    pub fn connected_components(&self) -> ComponentLabels {
        connected_components(self)
    }

    pub fn is_connected(&self) -> bool {
        self.num_nodes() <= 1 || connected_components(self).num_components == 1
    }
}

/// Component labels in discovery order: component 0 contains node 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabels {
    pub labels: Vec<usize>,
    pub num_components: usize,
    /// Largest component; ties go to the smallest id.
    pub largest_id: usize,
}

impl ComponentLabels {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_components];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Nodes of component `id` in ascending order.
    pub fn members(&self, id: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l == id)
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn connected_components(g: &Graph) -> ComponentLabels {
    let n = g.num_nodes();
    let mut labels = vec![usize::MAX; n];
    let mut num_components = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if labels[start] != usize::MAX {
            continue;
        }
        labels[start] = num_components;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            for &v in g.neighbors(u) {
                if labels[v] == usize::MAX {
                    labels[v] = num_components;
                    queue.push_back(v);
                }
            }
        }
        num_components += 1;
    }

    let mut sizes = vec![0usize; num_components];
    for &l in &labels {
        sizes[l] += 1;
    }
    let mut largest_id = 0;
    for (id, &s) in sizes.iter().enumerate() {
        if s > sizes[largest_id] {
            largest_id = id;
        }
    }
    ComponentLabels {
        labels,
        num_components,
        largest_id,
    }
}

/// Restricts a graph and its features to the largest connected component.
/// Returns the compacted graph, the matching feature rows and, for each new
/// node id, its original id.
pub fn extract_largest_component(
    g: &Graph,
    features: &FeatureSet,
) -> Result<(Graph, FeatureSet, Vec<usize>)> {
    if features.num_nodes() != g.num_nodes() {
        return Err(PcfiError::shape(
            format!("{} feature rows", g.num_nodes()),
            features.num_nodes(),
        ));
    }
    let id_map = largest_component_nodes(g);
    let sub = g.induced_subgraph(&id_map);
    Ok((sub, features.select_rows(&id_map), id_map))
}

/// Original ids of the largest component, ascending.
pub fn largest_component_nodes(g: &Graph) -> Vec<usize> {
    if g.num_nodes() == 0 {
        return Vec::new();
    }
    let comps = connected_components(g);
    comps.members(comps.largest_id)
}

/// Selects rows of a dense matrix.
pub(crate) fn select_rows<T: Clone>(m: &Array2<T>, rows: &[usize]) -> Array2<T> {
    m.select(ndarray::Axis(0), rows)
}

/// Known/unknown split of the nodes for one channel, with the reordering
/// that places known nodes first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelPartition {
    pub channel: usize,
    pub known_nodes: Vec<usize>,
    pub unknown_nodes: Vec<usize>,
    /// `position[old]` is the reordered index of node `old`.
    position: Vec<usize>,
}

impl ChannelPartition {
    pub fn num_nodes(&self) -> usize {
        self.position.len()
    }

    pub fn num_known(&self) -> usize {
        self.known_nodes.len()
    }

    /// Reordered index of an original node id.
    #[inline]
    pub fn position(&self, old: usize) -> usize {
        self.position[old]
    }

    /// Original node id at a reordered index.
    #[inline]
    pub fn original(&self, new: usize) -> usize {
        let k = self.known_nodes.len();
        if new < k {
            self.known_nodes[new]
        } else {
            self.unknown_nodes[new - k]
        }
    }

    /// Reorders a node-indexed vector into known-first order.
    pub fn permute<T: Copy>(&self, values: &[T]) -> Vec<T> {
        self.known_nodes
            .iter()
            .chain(&self.unknown_nodes)
            .map(|&i| values[i])
            .collect()
    }

    /// Inverse of [`ChannelPartition::permute`].
    pub fn unpermute<T: Copy + Default>(&self, values: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); values.len()];
        for (new, &v) in values.iter().enumerate() {
            out[self.original(new)] = v;
        }
        out
    }
}

pub fn partition_channel(mask_column: &[bool], channel: usize) -> ChannelPartition {
    let mut known_nodes = Vec::new();
    let mut unknown_nodes = Vec::new();
    for (i, &k) in mask_column.iter().enumerate() {
        if k {
            known_nodes.push(i);
        } else {
            unknown_nodes.push(i);
        }
    }
    let mut position = vec![0; mask_column.len()];
    for (new, &old) in known_nodes.iter().chain(&unknown_nodes).enumerate() {
        position[old] = new;
    }
    ChannelPartition {
        channel,
        known_nodes,
        unknown_nodes,
        position,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dedups_and_drops_self_loops() {
        let g = Graph::from_edges(&[(0, 1), (1, 0), (1, 1)], 2).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
    }

    #[test]
    fn empty_and_path() {
        let g = Graph::from_edges(&[], 3).unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.num_edges(), 0);

        let p = Graph::from_edges(&[(0, 1), (1, 2)], 3).unwrap();
        assert_eq!(p.degrees(), vec![1, 2, 1]);
    }

    #[test]
    fn rejects_out_of_range() {
        let err = Graph::from_edges(&[(0, 1), (2, 3)], 3).unwrap_err();
        assert!(matches!(err, PcfiError::NodeOutOfRange { u: 2, v: 3, .. }));
    }

    #[test]
    fn components() {
        let p = Graph::from_edges(&[(0, 1), (1, 2)], 3).unwrap();
        let c = connected_components(&p);
        assert_eq!(c.num_components, 1);
        assert_eq!(c.sizes(), vec![3]);

        let g = Graph::from_edges(&[(0, 1)], 3).unwrap();
        let c = connected_components(&g);
        assert_eq!(c.num_components, 2);
        assert_eq!(c.members(c.largest_id), vec![0, 1]);

        let two = Graph::from_edges(&[(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)], 6).unwrap();
        let c = connected_components(&two);
        assert_eq!(c.largest_id, c.labels[0]);
    }

    #[test]
    fn largest_component_triangle_plus_isolated() {
        let g = Graph::from_edges(&[(0, 1), (1, 2), (2, 0)], 4).unwrap();
        let x = Array2::from_shape_fn((4, 2), |(i, j)| (i * 2 + j) as f64);
        let fs = FeatureSet::fully_observed(x);
        let (sub, sfs, id_map) = extract_largest_component(&g, &fs).unwrap();
        assert_eq!(sub.num_nodes(), 3);
        assert_eq!(sfs.values().dim(), (3, 2));
        assert_eq!(id_map, vec![0, 1, 2]);
    }

    #[test]
    fn largest_component_identity_when_connected() {
        let g = Graph::from_edges(&[(0, 1), (1, 2), (2, 3)], 4).unwrap();
        let fs = FeatureSet::fully_observed(Array2::zeros((4, 1)));
        let (sub, _, id_map) = extract_largest_component(&g, &fs).unwrap();
        assert_eq!(id_map, vec![0, 1, 2, 3]);
        assert_eq!(sub, g);
    }

    #[test]
    fn largest_component_sizes_five_and_three() {
        // component A: 0,2,4,6,7 ; component B: 1,3,5
        let edges = [
            (0, 2),
            (2, 4),
            (4, 6),
            (6, 7),
            (7, 0),
            (2, 6),
            (1, 3),
            (3, 5),
        ];
        let g = Graph::from_edges(&edges, 8).unwrap();
        let fs = FeatureSet::fully_observed(Array2::zeros((8, 1)));
        let (sub, _, id_map) = extract_largest_component(&g, &fs).unwrap();
        assert_eq!(id_map, vec![0, 2, 4, 6, 7]);
        for a in 0..5 {
            for b in 0..5 {
                if a != b {
                    assert_eq!(sub.has_edge(a, b), g.has_edge(id_map[a], id_map[b]));
                }
            }
        }
        assert_eq!(sub.num_edges(), 6);
    }

    #[test]
    fn partition_examples() {
        let p = partition_channel(&[false, true, false, true], 0);
        assert_eq!(p.known_nodes, vec![1, 3]);
        assert_eq!(p.unknown_nodes, vec![0, 2]);
        assert_eq!(
            (0..4).map(|i| p.position(i)).collect::<Vec<_>>(),
            vec![2, 0, 3, 1]
        );

        let all = partition_channel(&[true; 3], 1);
        assert!(all.unknown_nodes.is_empty());
        assert_eq!(
            (0..3).map(|i| all.position(i)).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );

        let none = partition_channel(&[false; 3], 2);
        assert!(none.known_nodes.is_empty());
        assert_eq!(none.unknown_nodes, vec![0, 1, 2]);
    }

    fn edge_list(max_n: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (1..max_n).prop_flat_map(|n| (Just(n), proptest::collection::vec((0..n, 0..n), 0..4 * n)))
    }

    /// Brute-force BFS labelling over a dense adjacency matrix.
    fn brute_labels(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
        let mut adj = vec![vec![false; n]; n];
        for &(u, v) in edges {
            adj[u][v] = true;
            adj[v][u] = true;
        }
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        for s in 0..n {
            if label[s] != usize::MAX {
                continue;
            }
            let mut stack = vec![s];
            label[s] = next;
            while let Some(u) = stack.pop() {
                for v in 0..n {
                    if adj[u][v] && u != v && label[v] == usize::MAX {
                        label[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        label
    }

    proptest! {
        #[test]
        fn adjacency_is_symmetric_sorted_simple((n, edges) in edge_list(40)) {
            let g = Graph::from_edges(&edges, n).unwrap();
            for u in 0..n {
                let nb = g.neighbors(u);
                prop_assert!(nb.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(!nb.contains(&u));
                for &v in nb {
                    prop_assert!(g.has_edge(v, u));
                }
            }
            for &(u, v) in &edges {
                prop_assert_eq!(g.has_edge(u, v), u != v);
            }
        }

        #[test]
        fn largest_component_matches_brute_force((n, edges) in edge_list(50)) {
            let g = Graph::from_edges(&edges, n).unwrap();
            let labels = brute_labels(n, &edges);
            let ncomp = labels.iter().max().unwrap() + 1;
            let mut sizes = vec![0; ncomp];
            for &l in &labels { sizes[l] += 1; }
            let best = (0..ncomp).fold(0, |b, c| if sizes[c] > sizes[b] { c } else { b });
            let expected: Vec<usize> = (0..n).filter(|&i| labels[i] == best).collect();

            let fs = FeatureSet::fully_observed(Array2::zeros((n, 1)));
            let (sub, _, id_map) = extract_largest_component(&g, &fs).unwrap();
            prop_assert_eq!(&id_map, &expected);
            for a in 0..id_map.len() {
                for b in 0..id_map.len() {
                    let want = a != b && edges.iter().any(|&(u, v)| {
                        (u, v) == (id_map[a], id_map[b]) || (v, u) == (id_map[a], id_map[b])
                    });
                    prop_assert_eq!(sub.has_edge(a, b), want);
                }
            }
        }

        #[test]
        fn permute_then_unpermute_is_identity(mask in proptest::collection::vec(any::<bool>(), 0..60)) {
            let p = partition_channel(&mask, 0);
            let v: Vec<i64> = (0..mask.len() as i64).map(|i| i * 7 - 3).collect();
            let reordered = p.permute(&v);
            prop_assert_eq!(p.unpermute(&reordered), v);
            for (k, &old) in p.known_nodes.iter().enumerate() {
                prop_assert_eq!(p.position(old), k);
            }
        }
    }
}
