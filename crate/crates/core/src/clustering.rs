//! Local clustering pipeline: reweight, diffuse from a seed, round.

use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::attributes::{reweight, AttributeMatrix, EdgeWeightView};
use crate::diffusion::{self, DiffusionConfig, SinkCapacity, SourceSink};
use crate::error::{invalid, Error, Result};
use crate::graph::{weighted_conductance, EdgeWeights, Graph, NodeSet};
use crate::scalar::Scalar;

/// How the diffusion output becomes a node set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rounding {
    /// `supp(x)` as is.
    #[default]
    Support,
    /// Minimum-conductance prefix of the support sorted by `x` (or by
    /// `x_i / w_i` when `normalized`).
    SweepCut { normalized: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterParams<T> {
    /// Kernel bandwidth; ignored when no attributes are supplied.
    pub gamma: T,
    pub sinks: SinkCapacity<T>,
    /// Estimate of the target's total sink capacity; the seed receives
    /// `alpha * size_estimate`.
    pub size_estimate: T,
    pub rounding: Rounding,
    pub diffusion: DiffusionConfig<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult<T> {
    pub cluster: NodeSet,
    pub alpha: T,
    pub source_mass: T,
    /// Weighted conductance of `cluster` in the reweighted graph; `None` when
    /// undefined (empty cluster or the whole graph).
    pub conductance: Option<T>,
    pub nodes_touched: usize,
    /// Nodes that were pushed at least once, i.e. `|supp(x)|`.
    pub support_size: usize,
    pub pushes: usize,
    pub kernel_evaluations: usize,
    pub converged: bool,
    /// Seed mass did not exceed its sink, nothing diffused.
    pub degenerate: bool,
}

/// Runs weighted flow diffusion from `seed` with source mass
/// `alpha * size_estimate` and returns the rounded cluster.
///
/// With `attrs = None` the graph's base weights are used. Kernel weights are
/// computed only for edges the diffusion touches.
pub fn local_cluster<T: Scalar>(
    g: &Graph<T>,
    attrs: Option<&AttributeMatrix<T>>,
    seed: usize,
    alpha: T,
    params: &ClusterParams<T>,
) -> Result<ClusterResult<T>> {
    g.check_node(seed)?;
    if !(alpha > T::zero()) || !alpha.is_finite() {
        return Err(invalid(format!("alpha must be positive, got {alpha}")));
    }
    if !(params.size_estimate > T::zero()) || !params.size_estimate.is_finite() {
        return Err(invalid(format!(
            "size estimate must be positive, got {}",
            params.size_estimate
        )));
    }
    let mut view = match attrs {
        Some(x) => reweight(g, x, params.gamma)?,
        None => EdgeWeightView::unattributed(g),
    };
    let source_mass = alpha * params.size_estimate;
    let st = SourceSink::single(seed, source_mass, params.sinks.clone())?;
    let degenerate = !(source_mass > st.sink(g, seed));
    let outcome = diffusion::run(&mut view, &st, &params.diffusion)?;
    let state = &outcome.state;

    let support = state.support();
    let cluster = if support.is_empty() {
        support.clone()
    } else {
        match params.rounding {
            Rounding::Support => support.clone(),
            Rounding::SweepCut { normalized } => {
                sweep_cut_ordered(&mut view, &state.x_entries(), normalized)?
            }
        }
    };
    let conductance = weighted_conductance(&mut view, &cluster).ok();
    Ok(ClusterResult {
        cluster,
        alpha,
        source_mass,
        conductance,
        nodes_touched: state.touched_count(),
        support_size: support.len(),
        pushes: state.pushes(),
        kernel_evaluations: view.kernel_evaluations(),
        converged: outcome.converged(),
        degenerate,
    })
}

/// Minimum weighted-conductance prefix of the nodes with `x_i > 0`, taken in
/// order of decreasing `x` (ties by node id).
pub fn sweep_cut<T: Scalar, W: EdgeWeights<T>>(w: &mut W, x: &[(usize, T)]) -> Result<NodeSet> {
    sweep_cut_ordered(w, x, false)
}

/// [`sweep_cut`] with an optional `x_i / w_i` ordering.
pub fn sweep_cut_ordered<T: Scalar, W: EdgeWeights<T>>(
    w: &mut W,
    x: &[(usize, T)],
    normalized: bool,
) -> Result<NodeSet> {
    let n = w.graph().node_count();
    let mut order: Vec<(usize, T)> = Vec::with_capacity(x.len());
    for &(i, xi) in x {
        w.graph().check_node(i)?;
        if xi > T::zero() {
            let key = if normalized {
                xi / w.weighted_degree(i)
            } else {
                xi
            };
            order.push((i, key));
        }
    }
    if order.is_empty() {
        return Err(Error::Degenerate("sweep cut over an empty support".into()));
    }
    order.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });

    let mut position: FxHashMap<usize, usize> = FxHashMap::default();
    let (mut cut, mut vol) = (T::zero(), T::zero());
    let mut best: Option<(T, usize)> = None;
    for (idx, &(v, _)) in order.iter().enumerate() {
        let mut deg = T::zero();
        let mut inside = T::zero();
        for slot in 0..w.graph().degree(v) {
            let u = w.graph().neighbors(v)[slot];
            let wt = w.weight_at(v, slot);
            deg = deg + wt;
            if position.contains_key(&u) {
                inside = inside + wt;
            }
        }
        position.insert(v, idx);
        vol = vol + deg;
        cut = (cut + deg - inside - inside).max(T::zero());
        if idx + 1 == n || !(vol > T::zero()) {
            continue;
        }
        let phi = cut / vol;
        if best.is_none_or(|(b, _)| phi < b) {
            best = Some((phi, idx + 1));
        }
    }
    let (_, len) = best.ok_or(Error::UndefinedConductance(
        "no sweep prefix has a defined conductance",
    ))?;
    Ok(NodeSet::new(order[..len].iter().map(|&(i, _)| i)))
}

/// Candidates of an alpha sweep and the minimum-conductance pick.
#[derive(Debug, Clone)]
pub struct AlphaSweep<T> {
    pub candidates: Vec<ClusterResult<T>>,
    pub selected: usize,
}

impl<T: Scalar> AlphaSweep<T> {
    pub fn selected(&self) -> &ClusterResult<T> {
        &self.candidates[self.selected]
    }

    /// Candidate with the best F1 against `target` (ties: smaller alpha).
    pub fn best_f1(&self, target: &NodeSet) -> Result<(usize, Metrics)> {
        let mut best: Option<(usize, Metrics)> = None;
        for (i, c) in self.candidates.iter().enumerate() {
            let m = precision_recall_f1(&c.cluster, target)?;
            if best.as_ref().is_none_or(|(_, b)| m.f1 > b.f1) {
                best = Some((i, m));
            }
        }
        Ok(best.expect("alpha sweep has candidates"))
    }
}

/// Index of the smallest conductance; ties go to the earlier entry. `None`
/// entries never win.
pub fn argmin_conductance<T: Scalar>(conductances: &[Option<T>]) -> Option<usize> {
    let mut best: Option<(T, usize)> = None;
    for (i, c) in conductances.iter().enumerate() {
        if let Some(c) = *c {
            if best.is_none_or(|(b, _)| c < b) {
                best = Some((c, i));
            }
        }
    }
    best.map(|(_, i)| i)
}

/// Runs [`local_cluster`] for every alpha and selects the candidate of minimum
/// conductance, breaking ties toward smaller alpha. Candidates are returned
/// in increasing alpha order.
pub fn alpha_sweep<T: Scalar>(
    g: &Graph<T>,
    attrs: Option<&AttributeMatrix<T>>,
    seed: usize,
    alphas: &[T],
    params: &ClusterParams<T>,
) -> Result<AlphaSweep<T>> {
    if alphas.is_empty() {
        return Err(invalid("alpha grid is empty"));
    }
    let mut alphas = alphas.to_vec();
    alphas.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let candidates = alphas
        .par_iter()
        .map(|&alpha| local_cluster(g, attrs, seed, alpha, params))
        .collect::<Result<Vec<_>>>()?;
    let conductances: Vec<Option<T>> = candidates
        .iter()
        .map(|c| if c.degenerate { None } else { c.conductance })
        .collect();
    let selected = argmin_conductance(&conductances).ok_or_else(|| {
        Error::Degenerate("every alpha produced a degenerate cluster".into())
    })?;
    Ok(AlphaSweep {
        candidates,
        selected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// The cluster was empty, so precision is reported as 0.
    pub empty_cluster: bool,
}

/// Precision `|C n K| / |C|`, recall `|C n K| / |K|` and their harmonic mean.
pub fn precision_recall_f1(cluster: &NodeSet, target: &NodeSet) -> Result<Metrics> {
    if target.is_empty() {
        return Err(invalid("target set is empty"));
    }
    let hits = cluster.intersection_len(target) as f64;
    let precision = if cluster.is_empty() {
        0.0
    } else {
        hits / cluster.len() as f64
    };
    let recall = hits / target.len() as f64;
    let f1 = if precision > 0.0 && recall > 0.0 {
        2.0 / (1.0 / precision + 1.0 / recall)
    } else {
        0.0
    };
    Ok(Metrics {
        precision,
        recall,
        f1,
        empty_cluster: cluster.is_empty(),
    })
}
