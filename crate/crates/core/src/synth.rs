//! Contextual local random model: a planted target cluster with its own edge
//! probabilities inside and towards the rest of the graph, and node attributes
//! `X_i = mu_i + Z_i` with sub-Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attributes::{kernel_weight, AttributeMatrix};
use crate::error::{invalid, Result};
use crate::graph::{Graph, NodeSet};
use crate::scalar::Scalar;

/// How edges among nodes outside the target cluster are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutsideModel {
    /// Consecutive blocks of `block_size` nodes (the last may be smaller);
    /// probability `p_in` inside a block and `q` between blocks.
    Sbm { block_size: usize, p_in: f64, q: f64 },
    /// Every outside pair independently with probability `p`.
    ErdosRenyi { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    #[default]
    Gaussian,
    /// `+-sigma` with equal probability.
    Rademacher,
    /// Uniform on `[-sigma sqrt(3), sigma sqrt(3)]`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: usize,
    pub k: usize,
    /// Edge probability inside the target cluster.
    pub p: f64,
    /// Edge probability between the target cluster and the rest.
    pub q: f64,
    pub outside: OutsideModel,
    pub d: usize,
    /// Signal multiplier: the two cluster means sit `a * sigma_hat * sqrt(ln n)` apart.
    pub a: f64,
    /// Per-coordinate noise scales; empty means all ones.
    #[serde(default)]
    pub sigma: Vec<f64>,
    #[serde(default)]
    pub noise: NoiseFamily,
    pub seed: u64,
}

impl ModelParams {
    /// Equal-size SBM blocks with the cluster's own `p` inside every block and
    /// `q` across.
    pub fn sbm(n: usize, k: usize, p: f64, q: f64, d: usize, a: f64, seed: u64) -> Self {
        ModelParams {
            n,
            k,
            p,
            q,
            outside: OutsideModel::Sbm {
                block_size: k,
                p_in: p,
                q,
            },
            d,
            a,
            sigma: Vec::new(),
            noise: NoiseFamily::Gaussian,
            seed,
        }
    }

    pub fn sigma_at(&self, l: usize) -> f64 {
        self.sigma.get(l).copied().unwrap_or(1.0)
    }

    /// `max_l sigma_l`.
    pub fn sigma_hat(&self) -> f64 {
        if self.sigma.is_empty() {
            1.0
        } else {
            self.sigma.iter().copied().fold(0.0, f64::max)
        }
    }

    /// Distance between the in-cluster and out-of-cluster means.
    pub fn mu_hat(&self) -> f64 {
        self.a * self.sigma_hat() * (self.n as f64).ln().sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(invalid(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        if !(1 < self.k && self.k < self.n) {
            return Err(invalid(format!(
                "need 1 < k < n, got k={} n={}",
                self.k, self.n
            )));
        }
        if self.n > u32::MAX as usize {
            return Err(invalid("n exceeds 2^32"));
        }
        prob("p", self.p)?;
        prob("q", self.q)?;
        match &self.outside {
            OutsideModel::Sbm { block_size, p_in, q } => {
                if *block_size == 0 {
                    return Err(invalid("block_size must be >= 1"));
                }
                prob("p_in", *p_in)?;
                prob("outside q", *q)?;
            }
            OutsideModel::ErdosRenyi { p } => prob("outside p", *p)?,
        }
        if self.d == 0 {
            return Err(invalid("d must be >= 1"));
        }
        if !(self.a >= 0.0) || !self.a.is_finite() {
            return Err(invalid(format!("a must be finite and >= 0, got {}", self.a)));
        }
        if !self.sigma.is_empty() {
            if self.sigma.len() != self.d {
                return Err(invalid(format!(
                    "sigma has {} entries, expected d={}",
                    self.sigma.len(),
                    self.d
                )));
            }
            if self.sigma.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
                return Err(invalid("every sigma_l must be positive"));
            }
        }
        Ok(())
    }
}

/// A generated graph, its attributes and the planted cluster `{0, .., k-1}`.
#[derive(Debug, Clone)]
pub struct Instance<T> {
    pub graph: Graph<T>,
    pub attrs: AttributeMatrix<T>,
    pub target: NodeSet,
    /// Block id per node; the target cluster is block 0.
    pub labels: Vec<usize>,
    pub params: ModelParams,
    /// Exact distance between the two signal vectors.
    pub mu_hat: f64,
}

/// Calls `emit` for each selected index in `0..count`, each independently
/// with probability `prob`, skipping geometrically between selections.
fn bernoulli_indices(count: u64, prob: f64, rng: &mut ChaCha8Rng, mut emit: impl FnMut(u64)) {
    if count == 0 || prob <= 0.0 {
        return;
    }
    if prob >= 1.0 {
        (0..count).for_each(emit);
        return;
    }
    let log_q = (1.0 - prob).ln();
    let mut idx: u64 = 0;
    loop {
        let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
        let skip = (u.ln() / log_q).floor();
        if skip >= (count - idx) as f64 {
            return;
        }
        idx += skip as u64;
        emit(idx);
        idx += 1;
        if idx >= count {
            return;
        }
    }
}

/// Pairs `(i, j)`, `start <= i < j < end`, each with probability `prob`.
fn sample_within(
    start: usize,
    end: usize,
    prob: f64,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<(usize, usize)>,
) {
    let s = (end - start) as u64;
    let count = s * s.saturating_sub(1) / 2;
    // row i holds pairs (i, i+1..s); indices arrive in increasing order
    let (mut row, mut row_start) = (0u64, 0u64);
    bernoulli_indices(count, prob, rng, |idx| {
        while idx >= row_start + (s - 1 - row) {
            row_start += s - 1 - row;
            row += 1;
        }
        let col = row + 1 + (idx - row_start);
        out.push((start + row as usize, start + col as usize));
    });
}

/// Pairs between `[a0, a1)` and `[b0, b1)`, each with probability `prob`.
fn sample_between(
    (a0, a1): (usize, usize),
    (b0, b1): (usize, usize),
    prob: f64,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<(usize, usize)>,
) {
    let width = (b1 - b0) as u64;
    let count = (a1 - a0) as u64 * width;
    bernoulli_indices(count, prob, rng, |idx| {
        out.push((a0 + (idx / width) as usize, b0 + (idx % width) as usize));
    });
}

/// Node ranges of the blocks; block 0 is the target cluster.
fn block_ranges(params: &ModelParams) -> Vec<(usize, usize)> {
    let (n, k) = (params.n, params.k);
    let mut blocks = vec![(0, k)];
    match &params.outside {
        OutsideModel::Sbm { block_size, .. } => {
            let mut start = k;
            while start < n {
                let end = (start + block_size).min(n);
                blocks.push((start, end));
                start = end;
            }
        }
        OutsideModel::ErdosRenyi { .. } => blocks.push((k, n)),
    }
    blocks
}

/// Block id of every node as laid out by [`generate`].
pub fn block_labels(params: &ModelParams) -> Vec<usize> {
    let mut labels = vec![0usize; params.n];
    for (b, &(start, end)) in block_ranges(params).iter().enumerate() {
        labels[start..end].iter_mut().for_each(|l| *l = b);
    }
    labels
}

/// Draws an instance. The graph and the attribute noise come from separate
/// RNG streams of `params.seed`, so instances that differ only in `a` share
/// their edges and their noise.
pub fn generate<T: Scalar>(params: &ModelParams) -> Result<Instance<T>> {
    params.validate()?;
    let (n, k) = (params.n, params.k);

    let blocks = block_ranges(params);

    let mut edge_rng = ChaCha8Rng::seed_from_u64(params.seed);
    edge_rng.set_stream(0);
    let mut pairs = Vec::new();
    for (bi, &a) in blocks.iter().enumerate() {
        for (bj, &b) in blocks.iter().enumerate().skip(bi) {
            let prob = match (bi, bj, &params.outside) {
                (0, 0, _) => params.p,
                (0, _, _) => params.q,
                (_, _, OutsideModel::ErdosRenyi { p }) => *p,
                (x, y, OutsideModel::Sbm { p_in, .. }) if x == y => *p_in,
                (_, _, OutsideModel::Sbm { q, .. }) => *q,
            };
            if bi == bj {
                sample_within(a.0, a.1, prob, &mut edge_rng, &mut pairs);
            } else {
                sample_between(a, b, prob, &mut edge_rng, &mut pairs);
            }
        }
    }
    let graph = Graph::with_nodes(n, pairs.into_iter().map(|(u, v)| (u, v, None)))?.graph;

    let labels = block_labels(params);

    let d = params.d;
    let shift = params.mu_hat() / (2.0 * (d as f64).sqrt());
    let mut attr_rng = ChaCha8Rng::seed_from_u64(params.seed);
    attr_rng.set_stream(1);
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        let mean = if i < k { shift } else { -shift };
        for l in 0..d {
            let sigma = params.sigma_at(l);
            let z = match params.noise {
                NoiseFamily::Gaussian => sigma * attr_rng.sample::<f64, _>(StandardNormal),
                NoiseFamily::Rademacher => {
                    if attr_rng.random::<bool>() {
                        sigma
                    } else {
                        -sigma
                    }
                }
                NoiseFamily::Uniform => {
                    let h = sigma * 3f64.sqrt();
                    attr_rng.random_range(-h..=h)
                }
            };
            data.push(T::lit(mean + z));
        }
    }
    let attrs = AttributeMatrix::from_flat(n, d, data)?;

    Ok(Instance {
        graph,
        attrs,
        target: NodeSet::new(0..k),
        labels,
        params: params.clone(),
        mu_hat: params.mu_hat(),
    })
}

/// Smallest kernel weight on an edge inside the target cluster and largest on
/// an edge leaving it; `None` when a class has no edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Separation<T> {
    pub min_intra: Option<T>,
    pub max_cross: Option<T>,
}

impl<T: Scalar> Separation<T> {
    pub fn ratio(&self) -> Option<T> {
        Some(self.min_intra? / self.max_cross?)
    }
}

pub fn edge_weight_separation<T: Scalar>(inst: &Instance<T>, gamma: T) -> Result<Separation<T>> {
    let mut sep = Separation {
        min_intra: None,
        max_cross: None,
    };
    for u in inst.target.iter() {
        for &v in inst.graph.neighbors(u) {
            let w = kernel_weight(inst.attrs.row(u), inst.attrs.row(v), gamma)?;
            if inst.target.contains(v) {
                sep.min_intra = Some(sep.min_intra.map_or(w, |m: T| m.min(w)));
            } else {
                sep.max_cross = Some(sep.max_cross.map_or(w, |m: T| m.max(w)));
            }
        }
    }
    Ok(sep)
}

/// Population-level quantities used by the recovery guarantees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryBounds {
    pub p: f64,
    pub q: f64,
    pub k: usize,
    pub n: usize,
    pub gamma: f64,
    pub mu_hat: f64,
}

impl TheoryBounds {
    pub fn new(p: f64, q: f64, k: usize, n: usize, gamma: f64, mu_hat: f64) -> Result<Self> {
        if !(p > 0.0) || q < 0.0 || !(gamma >= 0.0) || !(mu_hat >= 0.0) || k == 0 || k >= n {
            return Err(invalid("theory bounds need p > 0, q >= 0, gamma >= 0, 0 < k < n"));
        }
        Ok(TheoryBounds {
            p,
            q,
            k,
            n,
            gamma,
            mu_hat,
        })
    }

    pub fn for_instance<T>(inst: &Instance<T>, gamma: f64) -> Result<Self> {
        let pr = &inst.params;
        Self::new(pr.p, pr.q, pr.k, pr.n, gamma, inst.mu_hat)
    }

    /// Expected number of in-cluster neighbors of a cluster node, `p(k-1)`.
    pub fn intra_degree(&self) -> f64 {
        self.p * (self.k as f64 - 1.0)
    }

    /// Expected number of outside neighbors of a cluster node, `q(n-k)`.
    pub fn cross_degree(&self) -> f64 {
        self.q * (self.n - self.k) as f64
    }

    /// `p(k-1) / (p(k-1) + q(n-k) exp(-c gamma mu_hat^2))`.
    pub fn eta(&self, c: f64) -> f64 {
        let intra = self.intra_degree();
        intra / (intra + self.cross_degree() * (-c * self.gamma * self.mu_hat * self.mu_hat).exp())
    }

    /// `(1 + 3 d1 + 1/(p(k-1)))^2 / ((1 - d1)(1 - d2))`.
    pub fn concentration_factor(&self, delta1: f64, delta2: f64) -> Result<f64> {
        for d in [delta1, delta2] {
            if !(d > 0.0 && d < 1.0) {
                return Err(invalid(format!(
                    "delta must lie in (0, 1) for a finite factor, got {d}"
                )));
            }
        }
        let num = 1.0 + 3.0 * delta1 + 1.0 / self.intra_degree();
        Ok(num * num / ((1.0 - delta1) * (1.0 - delta2)))
    }

    /// Seed mass `c1 T_max m(d1, d2) k / eta(c2)^2` that guarantees full
    /// recovery with good attributes.
    pub fn recovery_source_mass(
        &self,
        c1: f64,
        c2: f64,
        delta1: f64,
        delta2: f64,
        t_max: f64,
    ) -> Result<f64> {
        if !(c1 > 1.0) {
            return Err(invalid(format!("c1 must exceed 1, got {c1}")));
        }
        if !(0.0..1.0).contains(&c2) {
            return Err(invalid(format!("c2 must lie in [0, 1), got {c2}")));
        }
        if !(t_max >= 1.0) {
            return Err(invalid("T_max must be >= 1"));
        }
        let eta = self.eta(c2);
        if !(eta > 0.0) {
            return Err(invalid("eta(c2) vanished"));
        }
        let m = self.concentration_factor(delta1, delta2)?;
        Ok(c1 * t_max * m * self.k as f64 / (eta * eta))
    }

    /// Unit-sink bound on `|supp \ K| / |K|` paired with
    /// [`TheoryBounds::recovery_source_mass`].
    pub fn false_positive_ratio(&self, c1: f64, c2: f64, delta1: f64, delta2: f64) -> Result<f64> {
        let eta = self.eta(c2);
        Ok(c1 * self.concentration_factor(delta1, delta2)? / (eta * eta) - 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(p: f64, q: f64, a: f64, seed: u64) -> ModelParams {
        ModelParams::sbm(200, 40, p, q, 4, a, seed)
    }

    #[test]
    fn degenerate_probabilities_give_clique() {
        let mut params = small(1.0, 0.0, 1.0, 5);
        params.outside = OutsideModel::ErdosRenyi { p: 0.0 };
        let inst = generate::<f64>(&params).unwrap();
        assert_eq!(inst.graph.edge_count(), 40 * 39 / 2);
        for i in 0..40 {
            assert_eq!(inst.graph.degree(i), 39);
        }
        for i in 40..200 {
            assert_eq!(inst.graph.degree(i), 0);
        }
        assert_eq!(inst.target, NodeSet::new(0..40));
    }

    #[test]
    fn full_probability_rectangle() {
        let mut params = small(0.0, 1.0, 0.0, 1);
        params.n = 10;
        params.k = 3;
        params.outside = OutsideModel::ErdosRenyi { p: 0.0 };
        let inst = generate::<f64>(&params).unwrap();
        assert_eq!(inst.graph.edge_count(), 3 * 7);
    }

    #[test]
    fn seed_reproducible() {
        let a = generate::<f64>(&small(0.2, 0.05, 2.0, 9)).unwrap();
        let b = generate::<f64>(&small(0.2, 0.05, 2.0, 9)).unwrap();
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.attrs, b.attrs);
        let c = generate::<f64>(&small(0.2, 0.05, 2.0, 10)).unwrap();
        assert_ne!(a.graph, c.graph);
        // changing only the signal keeps the edges
        let d = generate::<f64>(&small(0.2, 0.05, 5.0, 9)).unwrap();
        assert_eq!(a.graph, d.graph);
    }

    #[test]
    fn mu_hat_matches_means() {
        let params = small(0.1, 0.01, 3.0, 2);
        let inst = generate::<f64>(&params).unwrap();
        let expect = 3.0 * (200f64).ln().sqrt();
        assert!((inst.mu_hat - expect).abs() < 1e-12);
        let shift = expect / (2.0 * 2.0);
        // ||(+shift,..) - (-shift,..)|| over d=4 coordinates
        assert!(((2.0 * shift) * 2.0 - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_signal_is_centered() {
        let params = ModelParams::sbm(4000, 100, 0.0, 0.0, 3, 0.0, 4);
        let inst = generate::<f64>(&params).unwrap();
        for l in 0..3 {
            let mean: f64 = inst.attrs.rows().map(|r| r[l]).sum::<f64>() / 4000.0;
            assert!(mean.abs() < 4.0 / (4000f64).sqrt(), "{mean}");
        }
    }

    #[test]
    fn noise_variances() {
        for noise in [NoiseFamily::Gaussian, NoiseFamily::Rademacher, NoiseFamily::Uniform] {
            let mut params = ModelParams::sbm(10_000, 100, 0.0, 0.0, 2, 0.0, 11);
            params.sigma = vec![1.0, 2.5];
            params.noise = noise;
            let inst = generate::<f64>(&params).unwrap();
            for (l, sigma) in [(0, 1.0f64), (1, 2.5)] {
                let vals: Vec<f64> = inst.attrs.rows().map(|r| r[l]).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
                let rel = (var - sigma * sigma).abs() / (sigma * sigma);
                assert!(rel < 0.1, "{noise:?} coord {l}: var {var}");
            }
        }
    }

    #[test]
    fn parameter_validation() {
        assert!(generate::<f64>(&small(1.2, 0.1, 1.0, 0)).is_err());
        let mut p = small(0.1, 0.1, 1.0, 0);
        p.k = 200;
        assert!(generate::<f64>(&p).is_err());
        let mut p = small(0.1, 0.1, 1.0, 0);
        p.sigma = vec![1.0, 0.0, 1.0, 1.0];
        assert!(generate::<f64>(&p).is_err());
        let mut p = small(0.1, 0.1, 1.0, 0);
        p.d = 0;
        assert!(generate::<f64>(&p).is_err());
    }

    #[test]
    fn identical_attributes_separation_is_one() {
        let mut inst = generate::<f64>(&small(0.3, 0.05, 0.0, 3)).unwrap();
        inst.attrs = AttributeMatrix::from_flat(200, 4, vec![0.5; 800]).unwrap();
        let sep = edge_weight_separation(&inst, 0.7).unwrap();
        assert_eq!(sep.min_intra, Some(1.0));
        assert_eq!(sep.max_cross, Some(1.0));
    }

    #[test]
    fn separation_absent_side() {
        let mut params = small(0.5, 0.0, 1.0, 3);
        params.outside = OutsideModel::ErdosRenyi { p: 0.1 };
        let inst = generate::<f64>(&params).unwrap();
        let sep = edge_weight_separation(&inst, 0.01).unwrap();
        assert!(sep.min_intra.is_some());
        assert!(sep.max_cross.is_none());
        assert!(sep.ratio().is_none());
    }

    #[test]
    fn eta_values() {
        let b = TheoryBounds::new(0.01, 0.002, 500, 10_000, 0.01, 10.0).unwrap();
        assert!((b.eta(0.0) - 4.99 / 23.99).abs() < 1e-12);
        let strong = TheoryBounds::new(0.01, 0.002, 500, 10_000, 0.5, 10.0).unwrap();
        assert!(strong.eta(1.0) >= 1.0 - 1e-6);
        let no_cross = TheoryBounds::new(0.01, 0.0, 500, 10_000, 0.5, 10.0).unwrap();
        assert_eq!(no_cross.eta(0.3), 1.0);
        let mut prev = 0.0;
        for i in 0..=10 {
            let e = b.eta(i as f64 / 10.0);
            assert!(e > prev);
            prev = e;
        }
    }

    #[test]
    fn concentration_factor_values() {
        // p(k-1) = 10: (1 + 1.5 + 0.1)^2 / 0.25
        let b = TheoryBounds::new(10.0 / 499.0, 0.002, 500, 10_000, 0.0, 0.0).unwrap();
        assert!((b.concentration_factor(0.5, 0.5).unwrap() - 27.04).abs() < 1e-12);
        assert!(b.concentration_factor(1.0, 0.5).is_err());
        let dense = TheoryBounds::new(0.9, 0.002, 500, 10_000, 0.0, 0.0).unwrap();
        // only the 1/(p(k-1)) term survives as the deltas vanish
        let limit = (1.0f64 + 1.0 / (0.9 * 499.0)).powi(2);
        assert!((dense.concentration_factor(1e-12, 1e-12).unwrap() - limit).abs() < 1e-9);
        assert!(dense.concentration_factor(0.2, 0.3).unwrap() < b.concentration_factor(0.2, 0.3).unwrap());
    }

    #[test]
    fn source_mass_scaling() {
        let b = TheoryBounds::new(10.0 / 499.0, 0.002, 500, 10_000, 0.01, 20.0).unwrap();
        let one = b.recovery_source_mass(1.5, 0.5, 0.5, 0.5, 1.0).unwrap();
        let two = b.recovery_source_mass(1.5, 0.5, 0.5, 0.5, 2.0).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-9 * one);
        let eta = b.eta(0.5);
        assert!((one - 1.5 * 27.04 * 500.0 / (eta * eta)).abs() < 1e-9 * one);
        assert!(b.recovery_source_mass(1.0, 0.5, 0.5, 0.5, 1.0).is_err());
        assert!(b.recovery_source_mass(1.5, 1.0, 0.5, 0.5, 1.0).is_err());
    }
}
