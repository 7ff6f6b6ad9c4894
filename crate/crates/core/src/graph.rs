//! Immutable weighted undirected graph in compressed adjacency form.
//!
//! Every undirected edge is stored twice, once in each endpoint's neighbor
//! list. Neighbor lists are sorted by node id. The canonical orientation of an
//! edge is `(min, max)`, which is what the signed incidence operator used by
//! the diffusion checks refers to.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sorted set of node ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct NodeSet(Vec<usize>);

impl NodeSet {
    pub fn new(ids: impl IntoIterator<Item = usize>) -> Self {
        let mut v: Vec<usize> = ids.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        NodeSet(v)
    }

    pub fn empty() -> Self {
        NodeSet(Vec::new())
    }

    /// Wraps an already strictly increasing sequence.
    pub fn from_sorted(ids: Vec<usize>) -> Result<Self> {
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "node set ids must be strictly increasing".into(),
            ));
        }
        Ok(NodeSet(ids))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    pub fn intersection_len(&self, other: &NodeSet) -> usize {
        let (mut a, mut b, mut count) = (0, 0, 0);
        while a < self.0.len() && b < other.0.len() {
            match self.0[a].cmp(&other.0[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    count += 1;
                    a += 1;
                    b += 1;
                }
            }
        }
        count
    }

    /// Nodes of `0..n` not in the set.
    pub fn complement(&self, n: usize) -> NodeSet {
        NodeSet((0..n).filter(|&i| !self.contains(i)).collect())
    }

    pub fn check_range(&self, n: usize) -> Result<()> {
        match self.0.last() {
            Some(&id) if id >= n => Err(Error::NodeOutOfRange { id, n }),
            _ => Ok(()),
        }
    }
}

impl FromIterator<usize> for NodeSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        NodeSet::new(iter)
    }
}

/// Outcome of building a graph from raw edge records.
#[derive(Debug, Clone)]
pub struct EdgeListGraph<T> {
    pub graph: Graph<T>,
    /// Number of repeated `(u, v)` records that were dropped (first one wins).
    pub duplicates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph<T> {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<T>,
    edge_count: usize,
}

impl<T: Scalar> Graph<T> {
    /// Builds a graph from `(u, v, w)` triples; a missing weight means 1.
    ///
    /// Errors name the 1-based position of the offending entry as its line.
    pub fn from_edge_list<I>(edges: I) -> Result<EdgeListGraph<T>>
    where
        I: IntoIterator<Item = (usize, usize, Option<T>)>,
    {
        Self::from_records(
            0,
            edges
                .into_iter()
                .enumerate()
                .map(|(idx, (u, v, w))| (idx + 1, u, v, w)),
        )
    }

    /// Like [`Graph::from_edge_list`] but guarantees at least `n` nodes, so
    /// trailing isolated nodes survive.
    pub fn with_nodes<I>(n: usize, edges: I) -> Result<EdgeListGraph<T>>
    where
        I: IntoIterator<Item = (usize, usize, Option<T>)>,
    {
        Self::from_records(
            n,
            edges
                .into_iter()
                .enumerate()
                .map(|(idx, (u, v, w))| (idx + 1, u, v, w)),
        )
    }

    /// Records carry their source line number for error reporting.
    pub(crate) fn from_records<I>(min_nodes: usize, records: I) -> Result<EdgeListGraph<T>>
    where
        I: IntoIterator<Item = (usize, usize, usize, Option<T>)>,
    {
        let mut seen: HashSet<(usize, usize)> = HashSet::new();
        let mut kept: Vec<(usize, usize, T)> = Vec::new();
        let mut duplicates = 0usize;
        let mut n = min_nodes;
        for (line, u, v, w) in records {
            if u == v {
                return Err(Error::SelfLoop { line, node: u });
            }
            let w = w.unwrap_or_else(T::one);
            if !(w > T::zero()) || !w.is_finite() {
                return Err(Error::BadWeight {
                    line,
                    weight: w.as_f64(),
                });
            }
            let key = (u.min(v), u.max(v));
            if !seen.insert(key) {
                duplicates += 1;
                continue;
            }
            n = n.max(key.1 + 1);
            kept.push((key.0, key.1, w));
        }
        if duplicates > 0 {
            log::warn!("dropped {duplicates} duplicate edge record(s)");
        }

        let mut degree = vec![0usize; n];
        for &(u, v, _) in &kept {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let total = *offsets.last().unwrap();
        let mut fill = offsets[..n].to_vec();
        let mut slots: Vec<(usize, T)> = vec![(0, T::zero()); total];
        for &(u, v, w) in &kept {
            slots[fill[u]] = (v, w);
            fill[u] += 1;
            slots[fill[v]] = (u, w);
            fill[v] += 1;
        }
        for i in 0..n {
            slots[offsets[i]..offsets[i + 1]].sort_unstable_by_key(|&(j, _)| j);
        }
        let (targets, weights) = slots.into_iter().unzip();
        Ok(EdgeListGraph {
            graph: Graph {
                offsets,
                targets,
                weights,
                edge_count: kept.len(),
            },
            duplicates,
        })
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// Combinatorial degree.
    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Base weights, parallel to [`Graph::neighbors`].
    #[inline]
    pub fn neighbor_weights(&self, i: usize) -> &[T] {
        &self.weights[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Sum of base weights of edges incident to `i`.
    pub fn weighted_degree(&self, i: usize) -> T {
        self.neighbor_weights(i).iter().copied().sum()
    }

    /// Base weight of edge `(u, v)` if present.
    pub fn edge_weight(&self, u: usize, v: usize) -> Option<T> {
        self.neighbors(u)
            .binary_search(&v)
            .ok()
            .map(|slot| self.neighbor_weights(u)[slot])
    }

    /// Every undirected edge once, in canonical `(min, max)` orientation.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.node_count()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .zip(self.neighbor_weights(u))
                .filter(move |(&v, _)| u < v)
                .map(move |(&v, &w)| (u, v, w))
        })
    }

    pub fn check_node(&self, id: usize) -> Result<()> {
        if id < self.node_count() {
            Ok(())
        } else {
            Err(Error::NodeOutOfRange {
                id,
                n: self.node_count(),
            })
        }
    }
}

/// Source of per-edge weights layered over a graph.
///
/// Implementations may compute weights lazily and memoize them, hence `&mut`.
pub trait EdgeWeights<T: Scalar> {
    fn graph(&self) -> &Graph<T>;

    /// Weight of the edge stored at position `slot` of `u`'s neighbor list.
    fn weight_at(&mut self, u: usize, slot: usize) -> T;

    fn weight(&mut self, u: usize, v: usize) -> Option<T> {
        let slot = self.graph().neighbors(u).binary_search(&v).ok()?;
        Some(self.weight_at(u, slot))
    }

    /// Sum of weights of edges incident to `u`.
    fn weighted_degree(&mut self, u: usize) -> T {
        let deg = self.graph().degree(u);
        (0..deg).map(|slot| self.weight_at(u, slot)).sum()
    }
}

/// The graph's own stored weights.
#[derive(Debug, Clone, Copy)]
pub struct BaseWeights<'g, T>(pub &'g Graph<T>);

impl<T: Scalar> EdgeWeights<T> for BaseWeights<'_, T> {
    fn graph(&self) -> &Graph<T> {
        self.0
    }

    #[inline]
    fn weight_at(&mut self, u: usize, slot: usize) -> T {
        self.0.neighbor_weights(u)[slot]
    }
}

/// Sum of combinatorial degrees over `set`.
pub fn volume<T: Scalar>(g: &Graph<T>, set: &NodeSet) -> Result<usize> {
    set.check_range(g.node_count())?;
    Ok(set.iter().map(|i| g.degree(i)).sum())
}

/// Total weight of edges with exactly one endpoint in `set`.
pub fn cut_weight<T: Scalar, W: EdgeWeights<T>>(w: &mut W, set: &NodeSet) -> Result<T> {
    set.check_range(w.graph().node_count())?;
    Ok(cut_and_volume(w, set).0)
}

/// Boundary weight divided by the weighted volume of `set` (not the
/// `min(vol(C), vol(V \ C))` variant).
pub fn weighted_conductance<T: Scalar, W: EdgeWeights<T>>(w: &mut W, set: &NodeSet) -> Result<T> {
    let n = w.graph().node_count();
    set.check_range(n)?;
    if set.is_empty() {
        return Err(Error::UndefinedConductance("empty node set"));
    }
    if set.len() == n {
        return Err(Error::UndefinedConductance("node set is the whole graph"));
    }
    let (cut, vol) = cut_and_volume(w, set);
    if !(vol > T::zero()) {
        return Err(Error::UndefinedConductance("zero weighted volume"));
    }
    Ok(cut / vol)
}

fn cut_and_volume<T: Scalar, W: EdgeWeights<T>>(w: &mut W, set: &NodeSet) -> (T, T) {
    let mut cut = T::zero();
    let mut vol = T::zero();
    for u in set.iter() {
        let deg = w.graph().degree(u);
        for slot in 0..deg {
            let v = w.graph().neighbors(u)[slot];
            let wt = w.weight_at(u, slot);
            vol = vol + wt;
            if !set.contains(v) {
                cut = cut + wt;
            }
        }
    }
    (cut, vol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(edges: &[(usize, usize)]) -> Graph<f64> {
        Graph::from_edge_list(edges.iter().map(|&(u, v)| (u, v, None)))
            .unwrap()
            .graph
    }

    fn triangle_pendant(w23: f64) -> Graph<f64> {
        Graph::from_edge_list(vec![
            (0, 1, None),
            (1, 2, None),
            (0, 2, None),
            (2, 3, Some(w23)),
        ])
        .unwrap()
        .graph
    }

    #[test]
    fn path_construction() {
        let p = g(&[(0, 1), (1, 2)]);
        assert_eq!(p.node_count(), 3);
        assert_eq!((0..3).map(|i| p.degree(i)).collect::<Vec<_>>(), [1, 2, 1]);
    }

    #[test]
    fn reversed_duplicate_is_dropped() {
        let built = Graph::<f64>::from_edge_list(vec![(0, 1, None), (1, 0, None)]).unwrap();
        assert_eq!(built.graph.edge_count(), 1);
        assert_eq!(built.duplicates, 1);
        assert_eq!(built.graph.neighbors(0), &[1]);
        assert_eq!(built.graph.neighbors(1), &[0]);
    }

    #[test]
    fn duplicate_keeps_first_weight() {
        let built =
            Graph::<f64>::from_edge_list(vec![(0, 1, Some(2.0)), (1, 0, Some(5.0))]).unwrap();
        assert_eq!(built.graph.edge_weight(1, 0), Some(2.0));
    }

    #[test]
    fn weighted_edge() {
        let w = Graph::<f64>::from_edge_list(vec![(0, 1, Some(2.5))]).unwrap().graph;
        assert_eq!(w.weighted_degree(0), 2.5);
    }

    #[test]
    fn self_loop_rejected_with_line() {
        let err = Graph::<f64>::from_edge_list(vec![(0, 1, None), (2, 2, None)]).unwrap_err();
        assert_eq!(err, Error::SelfLoop { line: 2, node: 2 });
    }

    #[test]
    fn nonpositive_weight_rejected() {
        assert!(matches!(
            Graph::<f64>::from_edge_list(vec![(0, 1, Some(0.0))]),
            Err(Error::BadWeight { line: 1, .. })
        ));
    }

    #[test]
    fn volumes() {
        let t = g(&[(0, 1), (1, 2), (0, 2)]);
        assert_eq!(volume(&t, &NodeSet::new([0, 1, 2])).unwrap(), 6);
        assert_eq!(volume(&t, &NodeSet::empty()).unwrap(), 0);
        let p = g(&[(0, 1), (1, 2)]);
        assert_eq!(volume(&p, &NodeSet::new([1])).unwrap(), 2);
        assert!(matches!(
            volume(&p, &NodeSet::new([7])),
            Err(Error::NodeOutOfRange { id: 7, n: 3 })
        ));
    }

    #[test]
    fn cuts() {
        let t = triangle_pendant(1.0);
        let mut bw = BaseWeights(&t);
        let c = NodeSet::new([0, 1, 2]);
        assert_eq!(cut_weight(&mut bw, &c).unwrap(), 1.0);
        assert_eq!(cut_weight(&mut bw, &NodeSet::new(0..4)).unwrap(), 0.0);
        let t = triangle_pendant(0.25);
        assert_eq!(cut_weight(&mut BaseWeights(&t), &c).unwrap(), 0.25);
    }

    #[test]
    fn conductance_examples() {
        let t = triangle_pendant(1.0);
        let phi = weighted_conductance(&mut BaseWeights(&t), &NodeSet::new([0, 1, 2])).unwrap();
        assert!((phi - 1.0 / 7.0).abs() < 1e-15);

        // two disjoint edges; one component has no boundary
        let d = g(&[(0, 1), (2, 3)]);
        let phi = weighted_conductance(&mut BaseWeights(&d), &NodeSet::new([0, 1])).unwrap();
        assert_eq!(phi, 0.0);

        let e = g(&[(0, 1)]);
        let phi = weighted_conductance(&mut BaseWeights(&e), &NodeSet::new([0])).unwrap();
        assert_eq!(phi, 1.0);
    }

    #[test]
    fn conductance_undefined() {
        let e = g(&[(0, 1)]);
        assert!(matches!(
            weighted_conductance(&mut BaseWeights(&e), &NodeSet::empty()),
            Err(Error::UndefinedConductance(_))
        ));
        assert!(matches!(
            weighted_conductance(&mut BaseWeights(&e), &NodeSet::new([0, 1])),
            Err(Error::UndefinedConductance(_))
        ));
        let iso = Graph::<f64>::with_nodes(3, vec![(0, 1, None)]).unwrap().graph;
        assert!(matches!(
            weighted_conductance(&mut BaseWeights(&iso), &NodeSet::new([2])),
            Err(Error::UndefinedConductance(_))
        ));
    }

    #[test]
    fn node_set_rejects_unsorted() {
        assert!(NodeSet::from_sorted(vec![1, 1]).is_err());
        assert!(NodeSet::from_sorted(vec![0, 2, 5]).is_ok());
    }
}
