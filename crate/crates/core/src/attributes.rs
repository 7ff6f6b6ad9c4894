//! Node attributes and the Gaussian-kernel reweighting of edges.

use rustc_hash::FxHashMap;

use crate::error::{invalid, Error, Result};
use crate::graph::{EdgeWeights, Graph};
use crate::scalar::Scalar;

/// Dense row-major matrix of per-node attribute vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeMatrix<T> {
    n: usize,
    d: usize,
    data: Vec<T>,
}

impl<T: Scalar> AttributeMatrix<T> {
    /// `data` holds `n * d` entries, row by row.
    pub fn from_flat(n: usize, d: usize, data: Vec<T>) -> Result<Self> {
        if d == 0 {
            return Err(invalid("attribute dimension must be at least 1"));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(invalid(format!(
                "non-finite attribute at node {} coordinate {}",
                pos / d,
                pos % d
            )));
        }
        Ok(AttributeMatrix { n, d, data })
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            data.extend(row);
        }
        Self::from_flat(n, d, data)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.d)
    }

    /// Largest per-coordinate empirical standard deviation (population form).
    ///
    /// Used as the noise scale when the generating `sigma` is unknown.
    pub fn max_coordinate_std(&self) -> T {
        coordinate_stds(self)
            .into_iter()
            .fold(T::zero(), T::max)
    }
}

fn coordinate_stds<T: Scalar>(x: &AttributeMatrix<T>) -> Vec<T> {
    let count = T::from_count(x.n);
    let mut mean = vec![T::zero(); x.d];
    for row in x.rows() {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m = *m + x;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / count);
    let mut var = vec![T::zero(); x.d];
    for row in x.rows() {
        for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
            *v = *v + (x - m) * (x - m);
        }
    }
    var.into_iter().map(|v| (v / count).sqrt()).collect()
}

#[inline]
fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .fold(T::zero(), |acc, v| acc + v)
}

/// `exp(-gamma * ||xi - xj||^2)`.
pub fn kernel_weight<T: Scalar>(xi: &[T], xj: &[T], gamma: T) -> Result<T> {
    if xi.len() != xj.len() {
        return Err(Error::DimensionMismatch {
            expected: xi.len(),
            got: xj.len(),
        });
    }
    if !(gamma >= T::zero()) {
        return Err(invalid("kernel bandwidth gamma must be nonnegative"));
    }
    Ok((-gamma * squared_distance(xi, xj)).exp())
}

/// Kernel-reweighted edge weights `w_ij * exp(-gamma ||X_i - X_j||^2)`.
///
/// Nothing is evaluated at construction. Each edge's kernel factor is computed
/// on first request and memoized under its canonical `(min, max)` key, so the
/// view only ever pays for edges a diffusion actually uses. A view is meant to
/// be owned by a single worker; independent diffusions build their own.
#[derive(Debug, Clone)]
pub struct EdgeWeightView<'a, T> {
    graph: &'a Graph<T>,
    attrs: Option<&'a AttributeMatrix<T>>,
    gamma: T,
    cache: FxHashMap<u64, T>,
}

/// Lazily reweights `g` using attributes `x` and bandwidth `gamma`.
pub fn reweight<'a, T: Scalar>(
    g: &'a Graph<T>,
    x: &'a AttributeMatrix<T>,
    gamma: T,
) -> Result<EdgeWeightView<'a, T>> {
    if x.node_count() != g.node_count() {
        return Err(Error::DimensionMismatch {
            expected: g.node_count(),
            got: x.node_count(),
        });
    }
    if !(gamma >= T::zero()) || !gamma.is_finite() {
        return Err(invalid("kernel bandwidth gamma must be finite and nonnegative"));
    }
    Ok(EdgeWeightView {
        graph: g,
        attrs: Some(x),
        gamma,
        cache: FxHashMap::default(),
    })
}

#[inline]
fn edge_key(u: usize, v: usize) -> u64 {
    let (a, b) = if u < v { (u, v) } else { (v, u) };
    ((a as u64) << 32) | b as u64
}

impl<'a, T: Scalar> EdgeWeightView<'a, T> {
    /// View that reports the graph's base weights; no kernel is involved.
    pub fn unattributed(graph: &'a Graph<T>) -> Self {
        EdgeWeightView {
            graph,
            attrs: None,
            gamma: T::zero(),
            cache: FxHashMap::default(),
        }
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn is_attributed(&self) -> bool {
        self.attrs.is_some()
    }

    /// Number of distinct edges whose kernel weight has been computed.
    pub fn kernel_evaluations(&self) -> usize {
        self.cache.len()
    }

    pub fn is_memoized(&self, u: usize, v: usize) -> bool {
        self.cache.contains_key(&edge_key(u, v))
    }
}

impl<T: Scalar> EdgeWeights<T> for EdgeWeightView<'_, T> {
    fn graph(&self) -> &Graph<T> {
        self.graph
    }

    #[inline]
    fn weight_at(&mut self, u: usize, slot: usize) -> T {
        let base = self.graph.neighbor_weights(u)[slot];
        let Some(attrs) = self.attrs else {
            return base;
        };
        let v = self.graph.neighbors(u)[slot];
        let gamma = self.gamma;
        *self.cache.entry(edge_key(u, v)).or_insert_with(|| {
            base * (-gamma * squared_distance(attrs.row(u), attrs.row(v))).exp()
        })
    }
}

/// Replaces each row by the uniform mean of itself and its neighbors' rows.
pub fn neighborhood_average<T: Scalar>(
    g: &Graph<T>,
    x: &AttributeMatrix<T>,
) -> Result<AttributeMatrix<T>> {
    if x.node_count() != g.node_count() {
        return Err(Error::DimensionMismatch {
            expected: g.node_count(),
            got: x.node_count(),
        });
    }
    let d = x.dim();
    let mut data = Vec::with_capacity(x.node_count() * d);
    for i in 0..g.node_count() {
        let mut acc = x.row(i).to_vec();
        for &j in g.neighbors(i) {
            for (a, &v) in acc.iter_mut().zip(x.row(j)) {
                *a = *a + v;
            }
        }
        let count = T::from_count(1 + g.degree(i));
        data.extend(acc.into_iter().map(|a| a / count));
    }
    AttributeMatrix::from_flat(x.node_count(), d, data)
}

/// Kernel bandwidth `(ln n)^(-3/2) / (4 sigma_hat^2)`.
pub fn default_gamma<T: Scalar>(n: usize, sigma_hat: T) -> Result<T> {
    if n < 3 {
        return Err(invalid(format!("default gamma needs n >= 3, got {n}")));
    }
    if !(sigma_hat > T::zero()) {
        return Err(invalid("sigma_hat must be positive"));
    }
    let log_n = T::from_count(n).ln();
    Ok(log_n.powf(T::lit(-1.5)) / (T::lit(4.0) * sigma_hat * sigma_hat))
}

/// Average over clusters of (minimum distance from the cluster's empirical
/// mean to any other cluster's mean) divided by the mean per-coordinate
/// standard deviation, the latter taken over all nodes.
pub fn signal_ratio<T: Scalar>(x: &AttributeMatrix<T>, labels: &[usize]) -> Result<T> {
    if labels.len() != x.node_count() {
        return Err(Error::DimensionMismatch {
            expected: x.node_count(),
            got: labels.len(),
        });
    }
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(invalid("signal ratio needs at least two clusters"));
    }
    let d = x.dim();
    let mut sums = vec![vec![T::zero(); d]; ids.len()];
    let mut sizes = vec![0usize; ids.len()];
    for (i, &label) in labels.iter().enumerate() {
        let r = ids.binary_search(&label).unwrap();
        sizes[r] += 1;
        for (s, &v) in sums[r].iter_mut().zip(x.row(i)) {
            *s = *s + v;
        }
    }
    let means: Vec<Vec<T>> = sums
        .into_iter()
        .zip(&sizes)
        .map(|(s, &c)| s.into_iter().map(|v| v / T::from_count(c)).collect())
        .collect();

    let stds = coordinate_stds(x);
    let sigma_bar = stds.iter().copied().sum::<T>() / T::from_count(d);
    if !(sigma_bar > T::zero()) {
        return Err(Error::Degenerate(
            "attributes have zero spread; signal ratio undefined".into(),
        ));
    }

    let total = (0..means.len())
        .map(|r| {
            (0..means.len())
                .filter(|&s| s != r)
                .map(|s| squared_distance(&means[r], &means[s]).sqrt())
                .fold(T::infinity(), T::min)
                / sigma_bar
        })
        .sum::<T>();
    Ok(total / T::from_count(means.len()))
}
