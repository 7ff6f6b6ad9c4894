#![allow(dead_code)]

use localflow::attributes::AttributeMatrix;
use localflow::diffusion::{self, Diffusion, DiffusionConfig, SinkCapacity, SourceSink};
use localflow::graph::{BaseWeights, Graph, NodeSet};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Connected random graph on `2..=max_n` nodes: a random spanning tree plus
/// extra edges, weights in `[0.1, 3)`.
pub fn random_graph(rng: &mut ChaCha8Rng, max_n: usize) -> Graph<f64> {
    let n = rng.random_range(2..=max_n);
    let extra = rng.random_range(0.0..0.3);
    let mut edges = Vec::new();
    for i in 1..n {
        let j = rng.random_range(0..i);
        edges.push((j, i, Some(rng.random_range(0.1..3.0))));
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(extra) {
                edges.push((i, j, Some(rng.random_range(0.1..3.0))));
            }
        }
    }
    Graph::from_edge_list(edges).unwrap().graph
}

/// Sinks in `[1, 3)` and one to three sources whose total mass is a random
/// fraction of the total capacity, so the dual is bounded.
pub fn random_source_sink(rng: &mut ChaCha8Rng, g: &Graph<f64>) -> SourceSink<f64> {
    let n = g.node_count();
    let sinks: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..3.0)).collect();
    let capacity: f64 = sinks.iter().sum();
    let total = capacity * rng.random_range(0.05..0.9);
    let count = rng.random_range(1..=3.min(n));
    let shares: Vec<f64> = (0..count).map(|_| rng.random_range(0.2..1.0)).collect();
    let share_sum: f64 = shares.iter().sum();
    let sources = shares
        .iter()
        .map(|s| (rng.random_range(0..n), total * s / share_sum))
        .collect();
    SourceSink::new(sources, SinkCapacity::Explicit(sinks)).unwrap()
}

pub fn random_attributes(rng: &mut ChaCha8Rng, n: usize, d: usize) -> AttributeMatrix<f64> {
    let data = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    AttributeMatrix::from_flat(n, d, data).unwrap()
}

/// Steps a diffusion to the end, checking after every push: mass
/// conservation, the exact objective decrement `excess^2 / (2 w_i)`, and the
/// support bound; at the end: saturation on the support, the touched-set
/// bound, the primal identity `m = Delta + B'W f` with `f = -Bx`, and that no
/// active node remains. Returns the number of pushes.
pub fn check_run_invariants(
    g: &Graph<f64>,
    st: &SourceSink<f64>,
    cfg: &DiffusionConfig<f64>,
) -> Result<usize, String> {
    let mut w = BaseWeights(g);
    let total = st.total_mass();
    let mut diff = Diffusion::new(&mut w, st.clone(), cfg).map_err(|e| e.to_string())?;
    let tol = diff.tolerance();
    loop {
        let before = diff.state().clone();
        let Some(i) = diff.step().map_err(|e| e.to_string())? else {
            break;
        };
        let after = diff.state().clone();
        let excess = before.mass(i) - st.sink(g, i);
        if !(excess > tol) {
            return Err(format!("pushed node {i} with excess {excess} <= tolerance {tol}"));
        }
        let mass = after.total_mass();
        if (mass - total).abs() > 1e-9 * total {
            return Err(format!("mass {mass} drifted from {total}"));
        }
        let f_before = before.objective(diff.weights(), st);
        let f_after = after.objective(diff.weights(), st);
        let drop = excess * excess / (2.0 * g.weighted_degree(i));
        let slack = 1e-10 * (1.0 + f_before.abs());
        if ((f_before - f_after) - drop).abs() > slack {
            return Err(format!(
                "push on {i}: objective fell by {} instead of {drop}",
                f_before - f_after
            ));
        }
        if drop > slack && !(f_after < f_before) {
            return Err(format!("push on {i} did not decrease the objective"));
        }
        if after.support().len() as f64 > total {
            return Err(format!(
                "support of size {} exceeds source mass {total}",
                after.support().len()
            ));
        }
    }
    let state = diff.state().clone();
    if !state.excess_nodes(g, st, tol).is_empty() {
        return Err("loop stopped with active nodes".into());
    }
    let support = state.support();
    for i in support.iter() {
        let gap = (state.mass(i) - st.sink(g, i)).abs();
        if gap > tol {
            return Err(format!("node {i} in the support is off its sink by {gap}"));
        }
    }
    let allowed: NodeSet = support
        .iter()
        .flat_map(|i| std::iter::once(i).chain(g.neighbors(i).iter().copied()))
        .chain(st.sources().iter().map(|&(s, _)| s))
        .collect();
    if let Some(extra) = state.touched().iter().find(|&i| !allowed.contains(i)) {
        return Err(format!("node {extra} touched outside supp(x) and its neighbors"));
    }
    let n = g.node_count();
    let x = state.x_dense(n);
    let m_flow = diffusion::mass_from_flow(&mut BaseWeights(g), &diffusion::primal_flow(g, &x), st);
    let m = state.mass_dense(n);
    for i in 0..n {
        if (m_flow[i] - m[i]).abs() > 1e-9 * total.max(1.0) {
            return Err(format!("primal identity fails at node {i}: {} vs {}", m_flow[i], m[i]));
        }
    }
    Ok(state.pushes())
}
