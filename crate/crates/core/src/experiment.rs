//! Batch experiments on generated instances: for every trial and attribute
//! strength, cluster from a random seed node inside the target with and
//! without attributes, over a grid of source-mass multipliers.
//!
//! Output is long format, one row per trial, `a`, `alpha` and method, plus a
//! summary of means and standard deviations.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attributes::default_gamma;
use crate::clustering::{
    argmin_conductance, local_cluster, precision_recall_f1, ClusterParams, ClusterResult, Rounding,
};
use crate::diffusion::{DiffusionConfig, SinkCapacity};
use crate::error::{invalid, Error, Result};
use crate::graph::{Graph, NodeSet};
use crate::synth::{generate, Instance, ModelParams};

pub const TRIALS_FILE: &str = "trials.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const PARAMS_FILE: &str = "params.json";

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "LOCALFLOW_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Figure1a,
    Figure1b,
    Figure1c,
    Figure2,
    Custom,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Figure1a => "figure1a",
            Mode::Figure1b => "figure1b",
            Mode::Figure1c => "figure1c",
            Mode::Figure2 => "figure2",
            Mode::Custom => "custom",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "figure1a" => Mode::Figure1a,
            "figure1b" => Mode::Figure1b,
            "figure1c" => Mode::Figure1c,
            "figure2" => Mode::Figure2,
            "custom" => Mode::Custom,
            _ => return Err(invalid(format!("unknown experiment mode `{s}`"))),
        })
    }
}

/// `start, start + step, ...` up to `end` inclusive (with a small slack for
/// rounding), each value rounded to 12 decimals.
pub fn grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !start.is_finite() || !end.is_finite() || end < start {
        return Err(invalid(format!("bad grid {start}:{end}:{step}")));
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub mode: Mode,
    pub trials: usize,
    /// Base seed; trial `t` uses `seed + t`.
    pub seed: u64,
    pub alpha_grid: Vec<f64>,
    pub a_grid: Vec<f64>,
    /// Model of every instance; `a` and `seed` are overwritten per run.
    pub model: ModelParams,
    /// Kernel bandwidth; `None` uses the default for `n` and `sigma_hat`.
    pub gamma: Option<f64>,
    /// Reuse one instance for all trials, drawing only a new seed node.
    pub shared_instance: bool,
    pub max_pushes: Option<usize>,
}

impl ExperimentSpec {
    /// Defaults of a mode: `n = 10000`, `k = 500`, `q = 0.002`, `d = 100`,
    /// unit noise scale, 100 trials. The `figure1*` modes fix `a` and sweep
    /// `alpha` over `0.1..=5`; `figure2` sweeps `a` over `0..=8` and `alpha`
    /// over `1.1..=10.1`. `custom` starts from the `figure2` setting.
    pub fn for_mode(mode: Mode) -> Self {
        let n = 10_000usize;
        let sqrt_log = (n as f64).ln().sqrt();
        let (p, a_grid, alpha_grid) = match mode {
            Mode::Figure1a => (0.01, vec![3.0 * sqrt_log], grid(0.1, 5.0, 0.1)),
            Mode::Figure1b => (0.01, vec![2.5 * sqrt_log], grid(0.1, 5.0, 0.1)),
            Mode::Figure1c => (0.03, vec![2.5 * sqrt_log], grid(0.1, 5.0, 0.1)),
            Mode::Figure2 | Mode::Custom => (0.03, grid(0.0, 8.0, 0.5).unwrap(), grid(1.1, 10.1, 0.5)),
        };
        ExperimentSpec {
            mode,
            trials: 100,
            seed: 0,
            alpha_grid: alpha_grid.expect("static grid"),
            a_grid,
            model: ModelParams::sbm(n, 500, p, 0.002, 100, 0.0, 0),
            gamma: None,
            shared_instance: false,
            max_pushes: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials must be >= 1"));
        }
        if self.alpha_grid.is_empty() || self.a_grid.is_empty() {
            return Err(invalid("alpha and a grids must be nonempty"));
        }
        if self.alpha_grid.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(invalid("alpha values must be positive"));
        }
        if self.a_grid.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(invalid("a values must be nonnegative"));
        }
        if let Some(g) = self.gamma {
            if !(g >= 0.0) || !g.is_finite() {
                return Err(invalid("gamma must be >= 0"));
            }
        }
        if self.max_pushes == Some(0) {
            return Err(invalid("max_pushes must be >= 1"));
        }
        self.model.validate()
    }

    /// Model parameters of `trial` at attribute strength `a`.
    pub fn model_for(&self, trial: usize, a: f64) -> ModelParams {
        let mut m = self.model.clone();
        m.a = a;
        m.seed = if self.shared_instance {
            self.seed
        } else {
            self.trial_seed(trial)
        };
        m
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(trial as u64)
    }

    /// Seed node of `trial`, uniform over the target cluster and independent
    /// of `a`.
    pub fn seed_node(&self, trial: usize) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(self.trial_seed(trial));
        rng.set_stream(2);
        rng.random_range(0..self.model.k)
    }

    pub fn resolved_gamma(&self) -> Result<f64> {
        match self.gamma {
            Some(g) => Ok(g),
            None => default_gamma(self.model.n, self.model.sigma_hat()),
        }
    }
}

pub const ATTRIBUTED: &str = "attributed";
pub const UNATTRIBUTED: &str = "unattributed";

/// One line of the long-format CSV.
///
/// Per-alpha rows have `method` `attributed` or `unattributed`. When the grid
/// has more than one alpha, each trial also gets `<method>_best_f1` and
/// `<method>_min_conductance` rows whose `alpha` is the selected value.
/// Failed runs are reported with zero metrics and `converged = false`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub mode: String,
    pub trial: usize,
    pub a: f64,
    pub alpha: f64,
    pub method: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub conductance: Option<f64>,
    pub converged: bool,
}

impl TrialRow {
    pub fn is_selection(&self) -> bool {
        self.method.ends_with("_best_f1") || self.method.ends_with("_min_conductance")
    }
}

/// Mean and sample standard deviation per `(a, alpha, method)`; selection
/// methods are grouped per `(a, method)` and have no `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mode: String,
    pub a: f64,
    pub alpha: Option<f64>,
    pub method: String,
    pub trials: usize,
    pub precision_mean: f64,
    pub precision_std: f64,
    pub recall_mean: f64,
    pub recall_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
    /// Over rows with a defined conductance; `None` if there are none.
    pub conductance_mean: Option<f64>,
    pub conductance_std: Option<f64>,
    pub converged_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub spec: ExperimentSpec,
    pub gamma: f64,
    pub rows: Vec<TrialRow>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentOutput {
    /// Summary row for `(a, alpha, method)`; `a` and `alpha` match to 1e-9.
    pub fn summary_for(&self, a: f64, alpha: Option<f64>, method: &str) -> Option<&SummaryRow> {
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-9;
        self.summary.iter().find(|r| {
            r.method == method
                && close(r.a, a)
                && match (r.alpha, alpha) {
                    (Some(x), Some(y)) => close(x, y),
                    (None, None) => true,
                    _ => false,
                }
        })
    }
}

/// Runs `f` on a pool of at most `LOCALFLOW_THREADS` workers, or on the
/// global pool when the variable is unset.
pub fn with_worker_pool<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let threads: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|&t| t >= 1)
                .ok_or_else(|| invalid(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| invalid(e.to_string()))?;
            Ok(pool.install(f))
        }
        Err(_) => Ok(f()),
    }
}

struct Run {
    precision: f64,
    recall: f64,
    f1: f64,
    conductance: Option<f64>,
    converged: bool,
}

fn evaluate(result: Result<ClusterResult<f64>>, target: &NodeSet) -> Result<Run> {
    match result {
        Ok(r) => {
            let m = precision_recall_f1(&r.cluster, target)?;
            Ok(Run {
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                conductance: if r.degenerate { None } else { r.conductance },
                converged: r.converged,
            })
        }
        Err(e) => {
            log::warn!("clustering failed: {e}");
            Ok(Run {
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
                conductance: None,
                converged: false,
            })
        }
    }
}

fn sweep(
    g: &Graph<f64>,
    inst: Option<&Instance<f64>>,
    seed_node: usize,
    target: &NodeSet,
    alphas: &[f64],
    params: &ClusterParams<f64>,
) -> Result<Vec<Run>> {
    let attrs = inst.map(|i| &i.attrs);
    alphas
        .par_iter()
        .map(|&alpha| evaluate(local_cluster(g, attrs, seed_node, alpha, params), target))
        .collect()
}

fn push_rows(
    rows: &mut Vec<TrialRow>,
    base: &TrialRow,
    method: &str,
    alphas: &[f64],
    runs: &[Run],
) {
    let row = |alpha: f64, method: String, r: &Run| TrialRow {
        alpha,
        method,
        precision: r.precision,
        recall: r.recall,
        f1: r.f1,
        conductance: r.conductance,
        converged: r.converged,
        ..base.clone()
    };
    for (&alpha, r) in alphas.iter().zip(runs) {
        rows.push(row(alpha, method.to_string(), r));
    }
    if alphas.len() > 1 {
        let mut best = 0;
        for (i, r) in runs.iter().enumerate() {
            if r.f1 > runs[best].f1 {
                best = i;
            }
        }
        rows.push(row(alphas[best], format!("{method}_best_f1"), &runs[best]));
        let conductances: Vec<Option<f64>> = runs.iter().map(|r| r.conductance).collect();
        if let Some(i) = argmin_conductance(&conductances) {
            rows.push(row(alphas[i], format!("{method}_min_conductance"), &runs[i]));
        }
    }
}

fn run_trial(spec: &ExperimentSpec, trial: usize, gamma: f64, alphas: &[f64]) -> Result<Vec<TrialRow>> {
    let seed_node = spec.seed_node(trial);
    let params = ClusterParams {
        gamma,
        sinks: SinkCapacity::Unit,
        size_estimate: spec.model.k as f64,
        rounding: Rounding::Support,
        diffusion: DiffusionConfig {
            max_pushes: spec.max_pushes,
            seed: spec.trial_seed(trial),
            ..DiffusionConfig::default()
        },
    };
    let mut rows = Vec::new();
    // the graph does not depend on `a`, so the unattributed sweep runs once
    let mut unattributed: Option<Vec<Run>> = None;
    for &a in &spec.a_grid {
        let inst: Instance<f64> = generate(&spec.model_for(trial, a))?;
        let base = TrialRow {
            mode: spec.mode.as_str().to_string(),
            trial,
            a,
            alpha: 0.0,
            method: String::new(),
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            conductance: None,
            converged: false,
        };
        let attributed = sweep(&inst.graph, Some(&inst), seed_node, &inst.target, alphas, &params)?;
        push_rows(&mut rows, &base, ATTRIBUTED, alphas, &attributed);
        if unattributed.is_none() {
            unattributed = Some(sweep(&inst.graph, None, seed_node, &inst.target, alphas, &params)?);
        }
        push_rows(&mut rows, &base, UNATTRIBUTED, alphas, unattributed.as_deref().unwrap());
    }
    log::info!("{} trial {trial} done", spec.mode.as_str());
    Ok(rows)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates long-format rows; groups appear in order of first occurrence.
pub fn summarize(rows: &[TrialRow]) -> Vec<SummaryRow> {
    let mut groups: Vec<((String, f64, Option<f64>, String), Vec<&TrialRow>)> = Vec::new();
    for r in rows {
        let alpha = if r.is_selection() { None } else { Some(r.alpha) };
        let key = (r.mode.clone(), r.a, alpha, r.method.clone());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|((mode, a, alpha, method), members)| {
            let col = |f: fn(&TrialRow) -> f64| mean_std(&members.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (precision_mean, precision_std) = col(|r| r.precision);
            let (recall_mean, recall_std) = col(|r| r.recall);
            let (f1_mean, f1_std) = col(|r| r.f1);
            let conductances: Vec<f64> = members.iter().filter_map(|r| r.conductance).collect();
            let (conductance_mean, conductance_std) = if conductances.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&conductances);
                (Some(m), Some(s))
            };
            SummaryRow {
                mode,
                a,
                alpha,
                method,
                trials: members.len(),
                precision_mean,
                precision_std,
                recall_mean,
                recall_std,
                f1_mean,
                f1_std,
                conductance_mean,
                conductance_std,
                converged_fraction: members.iter().filter(|r| r.converged).count() as f64
                    / members.len() as f64,
            }
        })
        .collect()
}

/// Runs every trial, in parallel on the worker pool.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let gamma = spec.resolved_gamma()?;
    let mut alphas = spec.alpha_grid.clone();
    alphas.sort_by(f64::total_cmp);
    let per_trial = with_worker_pool(|| {
        (0..spec.trials)
            .into_par_iter()
            .map(|t| run_trial(spec, t, gamma, &alphas))
            .collect::<Result<Vec<_>>>()
    })??;
    let rows: Vec<TrialRow> = per_trial.into_iter().flatten().collect();
    let summary = summarize(&rows);
    Ok(ExperimentOutput {
        spec: spec.clone(),
        gamma,
        rows,
        summary,
    })
}

#[derive(Serialize)]
struct ParamsEcho<'a> {
    #[serde(flatten)]
    spec: &'a ExperimentSpec,
    gamma_resolved: f64,
}

fn csv_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| csv_error(path, e))
}

/// Writes `trials.csv`, `summary.csv` and `params.json` into `dir`.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| csv_error(dir, e))?;
    write_csv(&dir.join(TRIALS_FILE), &out.rows)?;
    write_csv(&dir.join(SUMMARY_FILE), &out.summary)?;
    let echo = ParamsEcho {
        spec: &out.spec,
        gamma_resolved: out.gamma,
    };
    let json = serde_json::to_string_pretty(&echo).map_err(|e| invalid(e.to_string()))?;
    crate::io::write_text(&dir.join(PARAMS_FILE), &(json + "\n"))
}

/// Reads a long-format CSV written by [`write_outputs`].
pub fn read_trials(path: &Path) -> Result<Vec<TrialRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<TrialRow>, _>>()
        .map_err(|e| csv_error(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_include_endpoints() {
        let g = grid(1.1, 10.1, 0.5).unwrap();
        assert_eq!(g.len(), 19);
        assert_eq!(g[0], 1.1);
        assert_eq!(*g.last().unwrap(), 10.1);
        assert_eq!(grid(0.1, 5.0, 0.1).unwrap().len(), 50);
        assert_eq!(grid(0.0, 8.0, 0.5).unwrap().len(), 17);
        assert_eq!(grid(1.5, 5.0, 0.25).unwrap().len(), 15);
        assert!(grid(2.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn figure_modes_fix_model_parameters() {
        let s = ExperimentSpec::for_mode(Mode::Figure1a);
        assert_eq!((s.model.n, s.model.k, s.model.d), (10_000, 500, 100));
        assert_eq!((s.model.p, s.model.q), (0.01, 0.002));
        assert!((s.a_grid[0] - 3.0 * (10_000f64).ln().sqrt()).abs() < 1e-12);
        let s = ExperimentSpec::for_mode(Mode::Figure2);
        assert_eq!(s.model.p, 0.03);
        assert_eq!(s.a_grid.len(), 17);
        assert_eq!(s.alpha_grid.len(), 19);
        assert_eq!("figure1c".parse::<Mode>().unwrap(), Mode::Figure1c);
        assert!("figure3".parse::<Mode>().is_err());
    }

    #[test]
    fn seed_nodes_lie_in_target() {
        let s = ExperimentSpec::for_mode(Mode::Figure2);
        for t in 0..50 {
            assert!(s.seed_node(t) < 500);
        }
    }

    fn row(trial: usize, method: &str, alpha: f64, f1: f64) -> TrialRow {
        TrialRow {
            mode: "custom".into(),
            trial,
            a: 1.0,
            alpha,
            method: method.into(),
            precision: f1,
            recall: 1.0,
            f1,
            conductance: Some(f1 / 2.0),
            converged: trial == 0,
        }
    }

    #[test]
    fn summary_statistics() {
        let rows = vec![
            row(0, ATTRIBUTED, 1.5, 0.2),
            row(1, ATTRIBUTED, 1.5, 0.4),
            row(0, "attributed_best_f1", 1.5, 0.2),
            row(1, "attributed_best_f1", 2.0, 0.6),
        ];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].alpha, Some(1.5));
        assert!((s[0].f1_mean - 0.3).abs() < 1e-15);
        // sample standard deviation of {0.2, 0.4}
        assert!((s[0].f1_std - 0.02f64.sqrt()).abs() < 1e-15);
        assert_eq!(s[0].converged_fraction, 0.5);
        assert_eq!(s[1].alpha, None);
        assert_eq!(s[1].trials, 2);
        assert!((s[1].f1_mean - 0.4).abs() < 1e-15);
    }

    #[test]
    fn small_custom_experiment() {
        let mut spec = ExperimentSpec::for_mode(Mode::Custom);
        spec.model = ModelParams::sbm(200, 20, 0.5, 0.01, 4, 0.0, 0);
        spec.a_grid = vec![0.0, 6.0];
        spec.alpha_grid = vec![1.5, 2.0];
        spec.trials = 3;
        spec.seed = 11;
        let out = run_experiment(&spec).unwrap();
        // per trial and a: 2 methods x (2 alphas + 2 selections)
        assert_eq!(out.rows.len(), 3 * 2 * 2 * 4);
        assert_eq!(out.summary.len(), 2 * 2 * 4);
        let again = run_experiment(&spec).unwrap();
        assert_eq!(out.rows, again.rows);
        // unattributed rows do not depend on a
        let un = |a: f64| {
            out.rows
                .iter()
                .filter(|r| r.a == a && r.method == UNATTRIBUTED)
                .map(|r| r.f1)
                .collect::<Vec<_>>()
        };
        assert_eq!(un(0.0), un(6.0));
    }
}
