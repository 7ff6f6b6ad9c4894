//! Weighted flow diffusion.
//!
//! The solver minimizes `1/2 x'Lx + x'(T - Delta)` over `x >= 0` by exact
//! coordinate descent. A coordinate step on node `i` is a *push*: the excess
//! `m_i - T_i` is removed from `i` and split among its neighbors in proportion
//! to edge weight, and `x_i` grows by `excess / w_i`. The current mass always
//! satisfies `m = Delta - Lx`.
//!
//! State is sparse. Nodes enter the state only when they receive mass, so a
//! diffusion never looks beyond the support of its solution and the
//! neighbors of that support.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;

use crate::error::{invalid, Error, Result};
use crate::graph::{EdgeWeights, Graph, NodeSet};
use crate::scalar::Scalar;

/// Sink capacities `T`.
#[derive(Debug, Clone, PartialEq)]
pub enum SinkCapacity<T> {
    /// `T_i = 1`.
    Unit,
    /// `T_i = deg(i)`, the combinatorial degree; isolated nodes get 1.
    Degree,
    /// One entry per node, each at least 1.
    Explicit(Vec<T>),
}

/// Source masses `Delta` and sink capacities `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSink<T> {
    sources: Vec<(usize, T)>,
    sinks: SinkCapacity<T>,
}

impl<T: Scalar> SourceSink<T> {
    /// Repeated source nodes have their masses added.
    pub fn new(sources: Vec<(usize, T)>, sinks: SinkCapacity<T>) -> Result<Self> {
        let mut sources = sources;
        sources.sort_by_key(|&(i, _)| i);
        let mut merged: Vec<(usize, T)> = Vec::with_capacity(sources.len());
        for (i, mass) in sources {
            if !(mass >= T::zero()) || !mass.is_finite() {
                return Err(invalid(format!("source mass at node {i} must be finite and >= 0")));
            }
            match merged.last_mut() {
                Some((j, acc)) if *j == i => *acc = *acc + mass,
                _ => merged.push((i, mass)),
            }
        }
        merged.retain(|&(_, mass)| mass > T::zero());
        if merged.is_empty() {
            return Err(invalid("total source mass must be positive"));
        }
        if let SinkCapacity::Explicit(t) = &sinks {
            if let Some(i) = t.iter().position(|&v| !(v >= T::one()) || !v.is_finite()) {
                return Err(invalid(format!("sink capacity at node {i} must be >= 1")));
            }
        }
        Ok(SourceSink {
            sources: merged,
            sinks,
        })
    }

    /// All mass placed on one seed node.
    pub fn single(seed: usize, mass: T, sinks: SinkCapacity<T>) -> Result<Self> {
        Self::new(vec![(seed, mass)], sinks)
    }

    pub fn sources(&self) -> &[(usize, T)] {
        &self.sources
    }

    pub fn sinks(&self) -> &SinkCapacity<T> {
        &self.sinks
    }

    pub fn delta(&self, i: usize) -> T {
        self.sources
            .binary_search_by_key(&i, |&(j, _)| j)
            .map_or(T::zero(), |idx| self.sources[idx].1)
    }

    /// `||Delta||_1`.
    pub fn total_mass(&self) -> T {
        self.sources.iter().map(|&(_, m)| m).sum()
    }

    #[inline]
    pub fn sink(&self, g: &Graph<T>, i: usize) -> T {
        match &self.sinks {
            SinkCapacity::Unit => T::one(),
            SinkCapacity::Degree => T::from_count(g.degree(i).max(1)),
            SinkCapacity::Explicit(t) => t[i],
        }
    }

    pub fn validate(&self, g: &Graph<T>) -> Result<()> {
        let n = g.node_count();
        if let Some(&(i, _)) = self.sources.last() {
            g.check_node(i)?;
        }
        if let SinkCapacity::Explicit(t) = &self.sinks {
            if t.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: t.len(),
                });
            }
        }
        Ok(())
    }
}

/// Rule for choosing the next node to push among the active ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selection {
    /// Uniformly at random among nodes with excess.
    #[default]
    UniformRandom,
    /// Largest excess first, ties by smaller node id.
    MaxExcess,
    /// First-in first-out over nodes as they become active.
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionConfig<T> {
    /// Push budget; `None` means `10_000 * ||Delta||_1`.
    pub max_pushes: Option<usize>,
    /// Excess threshold: node `i` is active iff `m_i > T_i + tolerance`.
    /// `None` means `max(1e-6 * ||Delta||_1 / n, 1e-10, 256 * eps)`, the last
    /// term keeping single precision runs from chasing rounding residue.
    pub tolerance: Option<T>,
    pub seed: u64,
    pub selection: Selection,
}

impl<T: Scalar> Default for DiffusionConfig<T> {
    fn default() -> Self {
        DiffusionConfig {
            max_pushes: None,
            tolerance: None,
            seed: 0,
            selection: Selection::UniformRandom,
        }
    }
}

impl<T: Scalar> DiffusionConfig<T> {
    pub fn resolved_tolerance(&self, g: &Graph<T>, st: &SourceSink<T>) -> T {
        self.tolerance.unwrap_or_else(|| {
            let n = T::from_count(g.node_count().max(1));
            (T::lit(1e-6) * st.total_mass() / n)
                .max(T::lit(1e-10))
                .max(T::lit(256.0) * T::epsilon())
        })
    }

    pub fn resolved_max_pushes(&self, st: &SourceSink<T>) -> usize {
        self.max_pushes.unwrap_or_else(|| {
            let budget = (T::lit(10_000.0) * st.total_mass()).ceil().as_f64();
            (budget as usize).max(1)
        })
    }

    fn validate(&self) -> Result<()> {
        if let Some(tol) = self.tolerance {
            if !(tol >= T::zero()) {
                return Err(invalid("tolerance must be >= 0"));
            }
        }
        if self.max_pushes == Some(0) {
            return Err(invalid("max_pushes must be >= 1"));
        }
        Ok(())
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// No node has excess above the tolerance.
    Converged,
    /// The push budget ran out with active nodes left.
    MaxPushes,
}

#[derive(Debug, Clone, Copy)]
struct NodeEntry<T> {
    mass: T,
    x: T,
    /// Position in the random worklist, or a queued flag for the others.
    slot: u32,
}

const NOT_QUEUED: u32 = u32::MAX;

/// Sparse solver state: dual variables `x`, masses `m`, and the touched set
/// (every node whose mass or `x` was ever set).
#[derive(Debug, Clone)]
pub struct DiffusionState<T> {
    nodes: FxHashMap<usize, NodeEntry<T>>,
    pushes: usize,
}

impl<T: Scalar> DiffusionState<T> {
    /// `x = 0` and `m = Delta`.
    pub fn new(st: &SourceSink<T>) -> Self {
        let mut nodes = FxHashMap::default();
        for &(i, mass) in st.sources() {
            nodes.insert(
                i,
                NodeEntry {
                    mass,
                    x: T::zero(),
                    slot: NOT_QUEUED,
                },
            );
        }
        DiffusionState { nodes, pushes: 0 }
    }

    pub fn mass(&self, i: usize) -> T {
        self.nodes.get(&i).map_or(T::zero(), |e| e.mass)
    }

    pub fn x(&self, i: usize) -> T {
        self.nodes.get(&i).map_or(T::zero(), |e| e.x)
    }

    pub fn pushes(&self) -> usize {
        self.pushes
    }

    pub fn touched_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn touched(&self) -> NodeSet {
        NodeSet::new(self.nodes.keys().copied())
    }

    /// Nonzero entries of `x`, sorted by node id.
    pub fn x_entries(&self) -> Vec<(usize, T)> {
        let mut v: Vec<(usize, T)> = self
            .nodes
            .iter()
            .filter(|(_, e)| e.x > T::zero())
            .map(|(&i, e)| (i, e.x))
            .collect();
        v.sort_unstable_by_key(|&(i, _)| i);
        v
    }

    /// Dense copy of `x` for a graph with `n` nodes.
    pub fn x_dense(&self, n: usize) -> Vec<T> {
        let mut x = vec![T::zero(); n];
        for (&i, e) in &self.nodes {
            x[i] = e.x;
        }
        x
    }

    pub fn mass_dense(&self, n: usize) -> Vec<T> {
        let mut m = vec![T::zero(); n];
        for (&i, e) in &self.nodes {
            m[i] = e.mass;
        }
        m
    }

    pub fn total_mass(&self) -> T {
        self.nodes.values().map(|e| e.mass).sum()
    }

    /// `supp(x)`.
    pub fn support(&self) -> NodeSet {
        NodeSet::new(
            self.nodes
                .iter()
                .filter(|(_, e)| e.x > T::zero())
                .map(|(&i, _)| i),
        )
    }

    /// Nodes with `m_i > T_i + tol`.
    pub fn excess_nodes(&self, g: &Graph<T>, st: &SourceSink<T>, tol: T) -> NodeSet {
        NodeSet::new(
            self.nodes
                .iter()
                .filter(|(&i, e)| e.mass > st.sink(g, i) + tol)
                .map(|(&i, _)| i),
        )
    }

    /// Dual objective evaluated over the touched region only. Equal to
    /// [`dual_objective`] on the dense `x` since `x` vanishes elsewhere.
    pub fn objective<W: EdgeWeights<T>>(&self, w: &mut W, st: &SourceSink<T>) -> T {
        let mut quad = T::zero();
        let mut lin = T::zero();
        for (i, xi) in self.x_entries() {
            lin = lin + xi * (st.sink(w.graph(), i) - st.delta(i));
            for slot in 0..w.graph().degree(i) {
                let j = w.graph().neighbors(i)[slot];
                let xj = self.x(j);
                // edges with both ends in the support are visited twice
                let factor = if xj > T::zero() { T::lit(0.5) } else { T::one() };
                let diff = xi - xj;
                quad = quad + factor * w.weight_at(i, slot) * diff * diff;
            }
        }
        T::lit(0.5) * quad + lin
    }
}

/// One push on node `i`, reading weights through `w`.
///
/// Returns the excess that was moved.
pub fn push<T: Scalar, W: EdgeWeights<T>>(
    state: &mut DiffusionState<T>,
    i: usize,
    w: &mut W,
    st: &SourceSink<T>,
) -> Result<T> {
    let g = w.graph();
    g.check_node(i)?;
    let sink = st.sink(g, i);
    let mass = state.mass(i);
    if !(mass > sink) {
        return Err(Error::NoExcess { node: i });
    }
    let deg = g.degree(i);
    if deg == 0 {
        return Err(Error::MassTrapped { node: i });
    }
    let weights: Vec<T> = (0..deg).map(|slot| w.weight_at(i, slot)).collect();
    let total: T = weights.iter().copied().sum();
    if !(total > T::zero()) {
        return Err(Error::MassTrapped { node: i });
    }
    let neighbors = w.graph().neighbors(i);
    let excess = mass - sink;
    let entry = state.nodes.get_mut(&i).expect("node with mass is tracked");
    entry.x = entry.x + excess / total;
    entry.mass = sink;
    for (&j, &wij) in neighbors.iter().zip(&weights) {
        let e = state.nodes.entry(j).or_insert(NodeEntry {
            mass: T::zero(),
            x: T::zero(),
            slot: NOT_QUEUED,
        });
        e.mass = e.mass + excess * wij / total;
    }
    state.pushes += 1;
    Ok(excess)
}

/// Total-order wrapper for heap keys.
#[derive(Debug, Clone, Copy)]
struct HeapKey<T>(T, usize);

impl<T: Scalar> PartialEq for HeapKey<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Scalar> Eq for HeapKey<T> {}
impl<T: Scalar> PartialOrd for HeapKey<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar> Ord for HeapKey<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .partial_cmp(&other.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.1.cmp(&self.1))
    }
}

enum Worklist<T> {
    Random { items: Vec<usize>, rng: ChaCha8Rng },
    Fifo(VecDeque<usize>),
    Heap(BinaryHeap<HeapKey<T>>),
}

fn enqueue<T: Scalar>(
    worklist: &mut Worklist<T>,
    nodes: &mut FxHashMap<usize, NodeEntry<T>>,
    j: usize,
    sink: T,
    tol: T,
) {
    let Some(e) = nodes.get_mut(&j) else {
        return;
    };
    if !(e.mass > sink + tol) {
        return;
    }
    match worklist {
        Worklist::Random { items, .. } => {
            if e.slot == NOT_QUEUED {
                e.slot = items.len() as u32;
                items.push(j);
            }
        }
        Worklist::Fifo(q) => {
            if e.slot == NOT_QUEUED {
                e.slot = 0;
                q.push_back(j);
            }
        }
        Worklist::Heap(h) => {
            // every mass change of an active node pushes a fresh key;
            // stale keys are discarded on pop
            e.slot = 0;
            h.push(HeapKey(e.mass - sink, j));
        }
    }
}

/// Cached neighbor weights of a node that has been pushed at least once.
struct Row<T> {
    weights: Vec<T>,
    total: T,
}

/// A diffusion in progress. [`Diffusion::step`] performs one push; [`run`]
/// drives it to termination.
pub struct Diffusion<'w, T: Scalar, W: EdgeWeights<T>> {
    weights: &'w mut W,
    st: SourceSink<T>,
    state: DiffusionState<T>,
    worklist: Worklist<T>,
    rows: FxHashMap<usize, Row<T>>,
    tolerance: T,
    max_pushes: usize,
}

impl<'w, T: Scalar, W: EdgeWeights<T>> Diffusion<'w, T, W> {
    pub fn new(weights: &'w mut W, st: SourceSink<T>, cfg: &DiffusionConfig<T>) -> Result<Self> {
        cfg.validate()?;
        st.validate(weights.graph())?;
        let tolerance = cfg.resolved_tolerance(weights.graph(), &st);
        let max_pushes = cfg.resolved_max_pushes(&st);
        let worklist = match cfg.selection {
            Selection::UniformRandom => Worklist::Random {
                items: Vec::new(),
                rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            },
            Selection::RoundRobin => Worklist::Fifo(VecDeque::new()),
            Selection::MaxExcess => Worklist::Heap(BinaryHeap::new()),
        };
        let state = DiffusionState::new(&st);
        let mut d = Diffusion {
            weights,
            st,
            state,
            worklist,
            rows: FxHashMap::default(),
            tolerance,
            max_pushes,
        };
        let sources: Vec<usize> = d.st.sources().iter().map(|&(i, _)| i).collect();
        for i in sources {
            d.enqueue_if_active(i);
        }
        Ok(d)
    }

    pub fn state(&self) -> &DiffusionState<T> {
        &self.state
    }

    pub fn source_sink(&self) -> &SourceSink<T> {
        &self.st
    }

    pub fn tolerance(&self) -> T {
        self.tolerance
    }

    pub fn weights(&mut self) -> &mut W {
        self.weights
    }

    pub fn active_count(&self) -> usize {
        match &self.worklist {
            Worklist::Random { items, .. } => items.len(),
            Worklist::Fifo(q) => q.len(),
            Worklist::Heap(_) => self
                .state
                .nodes
                .values()
                .filter(|e| e.slot != NOT_QUEUED)
                .count(),
        }
    }

    fn enqueue_if_active(&mut self, j: usize) {
        let sink = self.st.sink(self.weights.graph(), j);
        enqueue(&mut self.worklist, &mut self.state.nodes, j, sink, self.tolerance);
    }

    fn next_node(&mut self) -> Option<usize> {
        match &mut self.worklist {
            Worklist::Random { items, rng } => {
                if items.is_empty() {
                    return None;
                }
                let idx = rng.random_range(0..items.len());
                let node = items.swap_remove(idx);
                if idx < items.len() {
                    self.state.nodes.get_mut(&items[idx]).unwrap().slot = idx as u32;
                }
                self.state.nodes.get_mut(&node).unwrap().slot = NOT_QUEUED;
                Some(node)
            }
            Worklist::Fifo(q) => {
                let node = q.pop_front()?;
                self.state.nodes.get_mut(&node).unwrap().slot = NOT_QUEUED;
                Some(node)
            }
            Worklist::Heap(h) => {
                let g = self.weights.graph();
                while let Some(HeapKey(excess, node)) = h.pop() {
                    let e = self.state.nodes.get_mut(&node).unwrap();
                    if e.slot == NOT_QUEUED || e.mass - self.st.sink(g, node) != excess {
                        continue;
                    }
                    e.slot = NOT_QUEUED;
                    return Some(node);
                }
                None
            }
        }
    }

    /// Pushes one active node. Returns the node, or `None` once no node is
    /// active.
    pub fn step(&mut self) -> Result<Option<usize>> {
        let Some(i) = self.next_node() else {
            return Ok(None);
        };
        let g = self.weights.graph();
        let deg = g.degree(i);
        if deg == 0 {
            return Err(Error::MassTrapped { node: i });
        }
        if !self.rows.contains_key(&i) {
            let weights: Vec<T> = (0..deg).map(|slot| self.weights.weight_at(i, slot)).collect();
            let total = weights.iter().copied().sum();
            self.rows.insert(i, Row { weights, total });
        }
        let row = &self.rows[&i];
        if !(row.total > T::zero()) {
            return Err(Error::MassTrapped { node: i });
        }
        let g = self.weights.graph();
        let sink = self.st.sink(g, i);
        let entry = self.state.nodes.get_mut(&i).unwrap();
        let excess = entry.mass - sink;
        entry.x = entry.x + excess / row.total;
        entry.mass = sink;
        let scale = excess / row.total;
        let neighbors = g.neighbors(i);
        for (&j, &wij) in neighbors.iter().zip(&row.weights) {
            let e = self.state.nodes.entry(j).or_insert(NodeEntry {
                mass: T::zero(),
                x: T::zero(),
                slot: NOT_QUEUED,
            });
            e.mass = e.mass + scale * wij;
        }
        self.state.pushes += 1;
        for &j in neighbors {
            let sink = self.st.sink(g, j);
            enqueue(&mut self.worklist, &mut self.state.nodes, j, sink, self.tolerance);
        }
        Ok(Some(i))
    }

    /// Pushes until convergence or the push budget is spent.
    pub fn run_to_end(mut self) -> Result<DiffusionOutcome<T>> {
        let termination = loop {
            if self.state.pushes >= self.max_pushes {
                break if self.active_count() > 0 {
                    Termination::MaxPushes
                } else {
                    Termination::Converged
                };
            }
            if self.step()?.is_none() {
                break Termination::Converged;
            }
        };
        Ok(DiffusionOutcome {
            state: self.state,
            termination,
            tolerance: self.tolerance,
        })
    }
}

/// Final state of [`run`].
#[derive(Debug, Clone)]
pub struct DiffusionOutcome<T> {
    pub state: DiffusionState<T>,
    pub termination: Termination,
    pub tolerance: T,
}

impl<T> DiffusionOutcome<T> {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

/// Runs the push loop from `x = 0`, `m = Delta`. Deterministic for a fixed
/// `cfg.seed`. Hitting the push budget is reported through
/// [`DiffusionOutcome::termination`], not as an error.
pub fn run<T: Scalar, W: EdgeWeights<T>>(
    w: &mut W,
    st: &SourceSink<T>,
    cfg: &DiffusionConfig<T>,
) -> Result<DiffusionOutcome<T>> {
    Diffusion::new(w, st.clone(), cfg)?.run_to_end()
}

/// `1/2 sum_{(i,j) in E} w_ij (x_i - x_j)^2 + sum_i x_i (T_i - Delta_i)`.
pub fn dual_objective<T: Scalar, W: EdgeWeights<T>>(
    w: &mut W,
    x: &[T],
    st: &SourceSink<T>,
) -> Result<T> {
    let n = w.graph().node_count();
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.len(),
        });
    }
    if let Some(i) = x.iter().position(|&v| v < T::zero()) {
        return Err(invalid(format!("dual variable at node {i} is negative")));
    }
    let mut quad = T::zero();
    let mut lin = T::zero();
    for i in 0..n {
        lin = lin + x[i] * (st.sink(w.graph(), i) - st.delta(i));
        for slot in 0..w.graph().degree(i) {
            let j = w.graph().neighbors(i)[slot];
            if i < j {
                let diff = x[i] - x[j];
                quad = quad + w.weight_at(i, slot) * diff * diff;
            }
        }
    }
    Ok(T::lit(0.5) * quad + lin)
}

/// `L x` for dense `x`.
pub fn laplacian_apply<T: Scalar, W: EdgeWeights<T>>(w: &mut W, x: &[T]) -> Vec<T> {
    let n = w.graph().node_count();
    let mut out = vec![T::zero(); n];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = T::zero();
        for slot in 0..w.graph().degree(i) {
            let j = w.graph().neighbors(i)[slot];
            acc = acc + w.weight_at(i, slot) * (x[i] - x[j]);
        }
        *o = acc;
    }
    out
}

/// Primal flow `f = -Bx` on every edge in canonical `(u, v)`, `u < v`,
/// orientation; positive values run from `v` to `u`.
pub fn primal_flow<T: Scalar>(g: &Graph<T>, x: &[T]) -> Vec<(usize, usize, T)> {
    g.edges().map(|(u, v, _)| (u, v, x[v] - x[u])).collect()
}

/// Final node masses `Delta + B'Wf` implied by a flow from [`primal_flow`].
pub fn mass_from_flow<T: Scalar, W: EdgeWeights<T>>(
    w: &mut W,
    flow: &[(usize, usize, T)],
    st: &SourceSink<T>,
) -> Vec<T> {
    let n = w.graph().node_count();
    let mut m: Vec<T> = (0..n).map(|i| st.delta(i)).collect();
    for &(u, v, f) in flow {
        let wuv = w.weight(u, v).expect("flow edge exists");
        m[u] = m[u] + wuv * f;
        m[v] = m[v] - wuv * f;
    }
    m
}

/// Dense reference solution of the dual by projected gradient descent.
#[derive(Debug, Clone)]
pub struct ReferenceSolution<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    pub grad_norm: T,
}

pub const REFERENCE_MAX_NODES: usize = 2000;

/// Projected gradient descent on the dual with step `1 / (2 max_i w_i)`,
/// stopping once the projected-gradient residual `||x - max(0, x - grad)||_inf`
/// is at most `tol`. Small graphs only.
pub fn solve_dual_reference<T: Scalar, W: EdgeWeights<T>>(
    w: &mut W,
    st: &SourceSink<T>,
    tol: T,
    max_iterations: usize,
) -> Result<ReferenceSolution<T>> {
    let n = w.graph().node_count();
    if n > REFERENCE_MAX_NODES {
        return Err(invalid(format!(
            "reference solver limited to {REFERENCE_MAX_NODES} nodes, got {n}"
        )));
    }
    st.validate(w.graph())?;
    check_bounded(w.graph(), st)?;

    let linear: Vec<T> = (0..n).map(|i| st.sink(w.graph(), i) - st.delta(i)).collect();
    let max_wdeg = (0..n)
        .map(|i| w.weighted_degree(i))
        .fold(T::zero(), T::max);
    let mut x = vec![T::zero(); n];
    if !(max_wdeg > T::zero()) {
        return Ok(ReferenceSolution {
            x,
            iterations: 0,
            grad_norm: T::zero(),
        });
    }
    let step = T::one() / (T::lit(2.0) * max_wdeg);
    let mut grad_norm = T::infinity();
    for iter in 0..max_iterations {
        let lx = laplacian_apply(w, &x);
        grad_norm = T::zero();
        for i in 0..n {
            let grad = lx[i] + linear[i];
            grad_norm = grad_norm.max((x[i] - (x[i] - grad).max(T::zero())).abs());
        }
        if grad_norm <= tol {
            return Ok(ReferenceSolution {
                x,
                iterations: iter,
                grad_norm,
            });
        }
        for i in 0..n {
            x[i] = (x[i] - step * (lx[i] + linear[i])).max(T::zero());
        }
    }
    Err(Error::ReferenceNotConverged {
        iterations: max_iterations,
        grad_norm: grad_norm.as_f64(),
    })
}

/// The dual is bounded below iff no connected component holds more source
/// mass than sink capacity.
fn check_bounded<T: Scalar>(g: &Graph<T>, st: &SourceSink<T>) -> Result<()> {
    let n = g.node_count();
    let mut comp = vec![usize::MAX; n];
    for &(s, _) in st.sources() {
        if comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = s;
        let (mut cap, mut mass) = (T::zero(), T::zero());
        while let Some(u) = stack.pop() {
            cap = cap + st.sink(g, u);
            mass = mass + st.delta(u);
            for &v in g.neighbors(u) {
                if comp[v] == usize::MAX {
                    comp[v] = s;
                    stack.push(v);
                }
            }
        }
        if mass > cap {
            return Err(invalid(format!(
                "component of node {s} holds more source mass than sink capacity"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::BaseWeights;

    fn graph(edges: &[(usize, usize, f64)]) -> Graph<f64> {
        Graph::from_edge_list(edges.iter().map(|&(u, v, w)| (u, v, Some(w))))
            .unwrap()
            .graph
    }

    fn unit_cfg(selection: Selection) -> DiffusionConfig<f64> {
        DiffusionConfig {
            tolerance: Some(1e-12),
            max_pushes: Some(100_000),
            seed: 3,
            selection,
        }
    }

    #[test]
    fn push_splits_evenly() {
        let g = graph(&[(0, 1, 1.0), (0, 2, 1.0)]);
        let st = SourceSink::single(0, 3.0, SinkCapacity::Unit).unwrap();
        let mut state = DiffusionState::new(&st);
        let moved = push(&mut state, 0, &mut BaseWeights(&g), &st).unwrap();
        assert_eq!(moved, 2.0);
        assert_eq!(state.x(0), 1.0);
        assert_eq!(state.mass(0), 1.0);
        assert_eq!(state.mass(1), 1.0);
        assert_eq!(state.mass(2), 1.0);
        assert_eq!(state.total_mass(), 3.0);
    }

    #[test]
    fn push_splits_by_weight() {
        let g = graph(&[(0, 1, 3.0), (0, 2, 1.0)]);
        let st = SourceSink::single(0, 5.0, SinkCapacity::Unit).unwrap();
        let mut state = DiffusionState::new(&st);
        push(&mut state, 0, &mut BaseWeights(&g), &st).unwrap();
        assert_eq!(state.mass(1), 3.0);
        assert_eq!(state.mass(2), 1.0);
        assert_eq!(state.x(0), 1.0);
    }

    #[test]
    fn push_without_excess_is_rejected() {
        let g = graph(&[(0, 1, 1.0)]);
        let st = SourceSink::single(0, 1.0, SinkCapacity::Unit).unwrap();
        let mut state = DiffusionState::new(&st);
        assert_eq!(
            push(&mut state, 0, &mut BaseWeights(&g), &st),
            Err(Error::NoExcess { node: 0 })
        );
        assert_eq!(state.pushes(), 0);
    }

    #[test]
    fn isolated_excess_is_trapped() {
        let g = Graph::<f64>::with_nodes(3, vec![(0, 1, None)]).unwrap().graph;
        let st = SourceSink::single(2, 4.0, SinkCapacity::Unit).unwrap();
        let mut state = DiffusionState::new(&st);
        assert_eq!(
            push(&mut state, 2, &mut BaseWeights(&g), &st),
            Err(Error::MassTrapped { node: 2 })
        );
        let err = run(&mut BaseWeights(&g), &st, &DiffusionConfig::default()).unwrap_err();
        assert_eq!(err, Error::MassTrapped { node: 2 });
    }

    #[test]
    fn two_node_run() {
        let g = graph(&[(0, 1, 1.0)]);
        let st = SourceSink::single(0, 2.0, SinkCapacity::Unit).unwrap();
        for sel in [Selection::UniformRandom, Selection::MaxExcess, Selection::RoundRobin] {
            let out = run(&mut BaseWeights(&g), &st, &unit_cfg(sel)).unwrap();
            assert!(out.converged());
            assert_eq!(out.state.pushes(), 1);
            assert_eq!(out.state.x_dense(2), vec![1.0, 0.0]);
            assert_eq!(out.state.mass_dense(2), vec![1.0, 1.0]);
            assert_eq!(out.state.support(), NodeSet::new([0]));
            let f = dual_objective(&mut BaseWeights(&g), &out.state.x_dense(2), &st).unwrap();
            assert_eq!(f, -0.5);
        }
    }

    #[test]
    fn no_excess_means_no_pushes() {
        let g = graph(&[(0, 1, 1.0), (1, 2, 1.0)]);
        let st = SourceSink::new(vec![(0, 1.0), (2, 0.5)], SinkCapacity::Unit).unwrap();
        let out = run(&mut BaseWeights(&g), &st, &DiffusionConfig::default()).unwrap();
        assert!(out.converged());
        assert_eq!(out.state.pushes(), 0);
        assert!(out.state.support().is_empty());
    }

    #[test]
    fn star_single_push() {
        // excess k at the center, w_center = k, so x_center = 1 and each leaf gets 1
        let k = 6;
        let edges: Vec<_> = (1..=k).map(|leaf| (0, leaf, 1.0)).collect();
        let g = graph(&edges);
        let st = SourceSink::single(0, 1.0 + k as f64, SinkCapacity::Unit).unwrap();
        let out = run(&mut BaseWeights(&g), &st, &DiffusionConfig::default()).unwrap();
        assert_eq!(out.state.pushes(), 1);
        assert_eq!(out.state.x(0), 1.0);
        for leaf in 1..=k {
            assert_eq!(out.state.mass(leaf), 1.0);
        }
        assert_eq!(out.state.excess_nodes(&g, &st, 0.0), NodeSet::empty());
    }

    #[test]
    fn objective_examples() {
        let g = graph(&[(0, 1, 1.0), (1, 2, 2.0)]);
        let st = SourceSink::single(0, 2.0, SinkCapacity::Unit).unwrap();
        assert_eq!(dual_objective(&mut BaseWeights(&g), &[0.0; 3], &st).unwrap(), 0.0);
        let x = [0.3, 0.7, 0.1];
        let f0 = dual_objective(&mut BaseWeights(&g), &x, &st).unwrap();
        let shifted: Vec<f64> = x.iter().map(|v| v + 0.25).collect();
        let f1 = dual_objective(&mut BaseWeights(&g), &shifted, &st).unwrap();
        // sum(T - Delta) = 3 - 2 = 1
        assert!((f1 - f0 - 0.25).abs() < 1e-12);
        assert!(dual_objective(&mut BaseWeights(&g), &[0.0, -1.0, 0.0], &st).is_err());
    }

    #[test]
    fn sparse_objective_matches_dense() {
        let g = graph(&[(0, 1, 1.0), (1, 2, 2.0), (2, 3, 0.5), (3, 0, 1.5), (1, 3, 1.0)]);
        let st = SourceSink::single(0, 3.5, SinkCapacity::Unit).unwrap();
        let out = run(&mut BaseWeights(&g), &st, &unit_cfg(Selection::RoundRobin)).unwrap();
        let dense = dual_objective(&mut BaseWeights(&g), &out.state.x_dense(4), &st).unwrap();
        let sparse = out.state.objective(&mut BaseWeights(&g), &st);
        assert!((dense - sparse).abs() < 1e-12);
    }

    #[test]
    fn reference_two_node() {
        let g = graph(&[(0, 1, 1.0)]);
        let st = SourceSink::single(0, 2.0, SinkCapacity::Unit).unwrap();
        let r = solve_dual_reference(&mut BaseWeights(&g), &st, 1e-12, 1_000_000).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-9);
        assert!(r.x[1].abs() < 1e-9);

        let st = SourceSink::single(0, 0.5, SinkCapacity::Unit).unwrap();
        let r = solve_dual_reference(&mut BaseWeights(&g), &st, 1e-12, 10).unwrap();
        assert_eq!(r.x, vec![0.0, 0.0]);
    }

    #[test]
    fn reference_rejects_unbounded_and_large() {
        let g = graph(&[(0, 1, 1.0)]);
        let st = SourceSink::single(0, 3.0, SinkCapacity::Unit).unwrap();
        assert!(solve_dual_reference(&mut BaseWeights(&g), &st, 1e-9, 10).is_err());
        let big = Graph::<f64>::with_nodes(REFERENCE_MAX_NODES + 1, vec![(0, 1, None)])
            .unwrap()
            .graph;
        let st = SourceSink::single(0, 1.5, SinkCapacity::Unit).unwrap();
        assert!(solve_dual_reference(&mut BaseWeights(&big), &st, 1e-9, 10).is_err());
    }

    #[test]
    fn reference_budget_exhaustion_reports_gradient() {
        let g = graph(&[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]);
        let st = SourceSink::single(0, 3.0, SinkCapacity::Unit).unwrap();
        match solve_dual_reference(&mut BaseWeights(&g), &st, 1e-14, 3) {
            Err(Error::ReferenceNotConverged { iterations: 3, grad_norm }) => {
                assert!(grad_norm > 0.0)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn budget_hit_is_flagged() {
        let g = graph(&[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]);
        let st = SourceSink::single(0, 3.5, SinkCapacity::Unit).unwrap();
        let cfg = DiffusionConfig {
            max_pushes: Some(2),
            ..unit_cfg(Selection::RoundRobin)
        };
        let out = run(&mut BaseWeights(&g), &st, &cfg).unwrap();
        assert_eq!(out.termination, Termination::MaxPushes);
        assert_eq!(out.state.pushes(), 2);
    }

    #[test]
    fn degree_sinks() {
        let g = Graph::<f64>::with_nodes(4, vec![(0, 1, None), (0, 2, None)]).unwrap().graph;
        let st = SourceSink::single(0, 1.0, SinkCapacity::Degree).unwrap();
        assert_eq!(st.sink(&g, 0), 2.0);
        assert_eq!(st.sink(&g, 1), 1.0);
        assert_eq!(st.sink(&g, 3), 1.0);
        assert!(SourceSink::<f64>::single(0, 1.0, SinkCapacity::Explicit(vec![0.5])).is_err());
        assert!(SourceSink::<f64>::single(0, 0.0, SinkCapacity::Unit).is_err());
    }

    #[test]
    fn f32_run() {
        let g = Graph::<f32>::from_edge_list(vec![(0, 1, None), (1, 2, None)]).unwrap().graph;
        let st = SourceSink::single(1, 2.5f32, SinkCapacity::Unit).unwrap();
        let out = run(&mut BaseWeights(&g), &st, &DiffusionConfig::default()).unwrap();
        assert!(out.converged());
        assert_eq!(out.state.support(), NodeSet::new([1]));
        assert!((out.state.total_mass() - 2.5).abs() < 1e-6);
    }
}
