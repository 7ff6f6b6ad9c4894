use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use localflow::attributes::{default_gamma, neighborhood_average};
use localflow::clustering::{
    alpha_sweep, local_cluster, precision_recall_f1, ClusterParams, Rounding,
};
use localflow::diffusion::{DiffusionConfig, Selection, SinkCapacity};
use localflow::experiment::{self, ExperimentSpec, Mode};
use localflow::io::{self, NodeIndex};
use localflow::synth::{generate, ModelParams, NoiseFamily};
use localflow::{ClusterResult, Instance, NodeSet};

/// Local graph clustering with weighted flow diffusion.
#[derive(Parser)]
#[command(name = "localflow", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw an instance of the contextual random model.
    Generate(GenerateArgs),
    /// Recover the cluster around a seed node.
    Cluster(ClusterArgs),
    /// Run a batch experiment and write CSV results.
    Experiment(ExperimentArgs),
    /// Compare a cluster file with a target file.
    Eval(EvalArgs),
}

fn probability(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is not a probability in [0, 1]"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be positive"))
    }
}

fn nonnegative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be nonnegative"))
    }
}

#[derive(Clone, Debug)]
struct Grid(Vec<f64>);

/// `start:end:step` or a comma-separated list.
fn grid_values(s: &str) -> Result<Grid, String> {
    let values = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, step] = parts.as_slice() else {
            return Err(format!("`{s}` is not of the form start:end:step"));
        };
        let num = |t: &str| t.parse::<f64>().map_err(|_| format!("`{t}` is not a number"));
        experiment::grid(num(a)?, num(b)?, num(step)?).map_err(|e| e.to_string())?
    } else {
        s.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| format!("`{t}` is not a number")))
            .collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() {
        return Err("grid is empty".into());
    }
    Ok(Grid(values))
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Size of the target cluster.
    #[arg(long, default_value_t = 500)]
    k: usize,
    /// Edge probability inside the target cluster and inside each outside block.
    #[arg(long, value_parser = probability, default_value_t = 0.03)]
    p: f64,
    /// Edge probability between blocks.
    #[arg(long, value_parser = probability, default_value_t = 0.002)]
    q: f64,
    /// Attribute dimension.
    #[arg(long, default_value_t = 100)]
    d: usize,
    /// Signal strength: mean distance is `a * sigma * sqrt(ln n)`.
    #[arg(long, value_parser = nonnegative, default_value_t = 0.0)]
    a: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Noise::Gaussian)]
    noise: Noise,
    /// Output directory.
    #[arg(long, short, default_value = ".")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Noise {
    Gaussian,
    Rademacher,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sinks {
    Unit,
    Degree,
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectionArg {
    Random,
    MaxExcess,
    RoundRobin,
}

#[derive(Args)]
struct ClusterArgs {
    /// Edge list file.
    #[arg(long)]
    graph: PathBuf,
    /// Attribute CSV; without it the base weights are used.
    #[arg(long)]
    attrs: Option<PathBuf>,
    /// External id of the seed node.
    #[arg(long)]
    seed_node: String,
    /// Kernel bandwidth; default `(ln n)^(-3/2) / (4 sigma_hat^2)` with
    /// `sigma_hat` the largest per-coordinate standard deviation.
    #[arg(long, value_parser = nonnegative)]
    gamma: Option<f64>,
    /// Source mass multiplier.
    #[arg(long, value_parser = positive, conflicts_with = "alpha_grid")]
    alpha: Option<f64>,
    /// Several multipliers, `start:end:step` or a list; the minimum
    /// conductance candidate is reported on an extra `selected` row.
    #[arg(long, value_parser = grid_values)]
    alpha_grid: Option<Grid>,
    /// Estimated total sink capacity of the target; defaults to the
    /// capacity of the ground-truth set when one is given.
    #[arg(long, value_parser = positive)]
    size: Option<f64>,
    #[arg(long, value_enum, default_value_t = Sinks::Unit)]
    sinks: Sinks,
    /// Round with a sweep cut over `x` instead of returning the support.
    #[arg(long)]
    sweep: bool,
    /// Sweep over `x_i / w_i`.
    #[arg(long)]
    sweep_normalized: bool,
    /// Ignore attributes (plain flow diffusion).
    #[arg(long)]
    no_attributes: bool,
    /// Average each node's attributes with its neighbors' first.
    #[arg(long)]
    avg_attrs: bool,
    /// Target node list; appends precision, recall and F1.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Write the (selected) cluster here, one id per line.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    max_pushes: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Seed of the random active-node choice.
    #[arg(long, default_value_t = 0)]
    rng_seed: u64,
    #[arg(long, value_enum, default_value_t = SelectionArg::Random)]
    selection: SelectionArg,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, value_parser = ["figure1a", "figure1b", "figure1c", "figure2", "custom"])]
    mode: String,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Seed base; trial `t` uses `seeds + t`.
    #[arg(long, default_value_t = 0)]
    seeds: u64,
    #[arg(long, value_parser = grid_values)]
    alpha_grid: Option<Grid>,
    #[arg(long, value_parser = grid_values)]
    a_grid: Option<Grid>,
    /// Reuse one instance and only redraw the seed node per trial.
    #[arg(long)]
    shared_instance: bool,
    #[arg(long, value_parser = nonnegative)]
    gamma: Option<f64>,
    #[arg(long)]
    max_pushes: Option<usize>,
    /// Model overrides, custom mode only.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_parser = probability)]
    p: Option<f64>,
    #[arg(long, value_parser = probability)]
    q: Option<f64>,
    #[arg(long)]
    d: Option<usize>,
    /// Output directory.
    #[arg(long, short, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    cluster: PathBuf,
    target: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<localflow::Error> for Failure {
    fn from(e: localflow::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> Outcome {
    let mut params = ModelParams::sbm(args.n, args.k, args.p, args.q, args.d, args.a, args.seed);
    params.noise = match args.noise {
        Noise::Gaussian => NoiseFamily::Gaussian,
        Noise::Rademacher => NoiseFamily::Rademacher,
        Noise::Uniform => NoiseFamily::Uniform,
    };
    params.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let inst: Instance = generate(&params)?;
    io::write_instance(&inst, &args.out)?;
    log::info!(
        "wrote {} nodes, {} edges to {}",
        inst.graph.node_count(),
        inst.graph.edge_count(),
        args.out.display()
    );
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cmd_cluster(args: ClusterArgs) -> Outcome {
    if args.alpha.is_none() && args.alpha_grid.is_none() {
        return Err(Failure::Usage("one of --alpha or --alpha-grid is required".into()));
    }
    if let Some(Grid(grid)) = &args.alpha_grid {
        if grid.iter().any(|&a| !(a > 0.0)) {
            return Err(Failure::Usage("--alpha-grid values must be positive".into()));
        }
    }
    let use_attrs = args.attrs.is_some() && !args.no_attributes;
    let attrs_path = if use_attrs { args.attrs.as_deref() } else { None };
    let data = io::read_dataset::<f64>(&args.graph, attrs_path)?;
    let g = &data.graph;
    let seed = data.index.get(&args.seed_node).ok_or_else(|| {
        Failure::Usage(format!("--seed-node `{}` is not a node of the graph", args.seed_node))
    })?;
    let attrs = match (data.attrs, args.avg_attrs) {
        (Some(x), true) => Some(neighborhood_average(g, &x)?),
        (x, _) => x,
    };

    let sinks = match args.sinks {
        Sinks::Unit => SinkCapacity::Unit,
        Sinks::Degree => SinkCapacity::Degree,
    };
    let target = args
        .ground_truth
        .as_deref()
        .map(|p| io::read_node_list(p, &data.index))
        .transpose()?;
    let size = match (args.size, &target) {
        (Some(s), _) => s,
        (None, Some(t)) => t
            .iter()
            .map(|i| match sinks {
                SinkCapacity::Degree => g.degree(i).max(1) as f64,
                _ => 1.0,
            })
            .sum(),
        (None, None) => {
            return Err(Failure::Usage("--size is required without --ground-truth".into()))
        }
    };
    if !(size > 0.0) {
        return Err(Failure::Usage("the target size estimate must be positive".into()));
    }
    let gamma = match (&attrs, args.gamma) {
        (None, _) => 0.0,
        (Some(_), Some(g)) => g,
        (Some(x), None) => default_gamma(g.node_count(), x.max_coordinate_std())
            .map_err(|e| Failure::Usage(format!("cannot derive a default --gamma: {e}")))?,
    };
    let params = ClusterParams {
        gamma,
        sinks,
        size_estimate: size,
        rounding: if args.sweep || args.sweep_normalized {
            Rounding::SweepCut {
                normalized: args.sweep_normalized,
            }
        } else {
            Rounding::Support
        },
        diffusion: DiffusionConfig {
            max_pushes: args.max_pushes,
            tolerance: args.tolerance,
            seed: args.rng_seed,
            selection: match args.selection {
                SelectionArg::Random => Selection::UniformRandom,
                SelectionArg::MaxExcess => Selection::MaxExcess,
                SelectionArg::RoundRobin => Selection::RoundRobin,
            },
        },
    };

    let mut header = String::from("seed,alpha,gamma,cluster_size,conductance,nodes_touched,pushes,converged");
    if target.is_some() {
        header.push_str(",precision,recall,f1");
    }
    let row = |label: &str, r: &ClusterResult| -> anyhow::Result<String> {
        let mut line = format!(
            "{label},{},{gamma},{},{},{},{},{}",
            r.alpha,
            r.cluster.len(),
            fmt_opt(r.conductance),
            r.nodes_touched,
            r.pushes,
            r.converged
        );
        if let Some(t) = &target {
            let m = precision_recall_f1(&r.cluster, t)?;
            line.push_str(&format!(",{},{},{}", m.precision, m.recall, m.f1));
        }
        Ok(line)
    };

    println!("{header}");
    let attrs_ref = attrs.as_ref();
    let chosen = match &args.alpha_grid {
        None => {
            let r = local_cluster(g, attrs_ref, seed, args.alpha.unwrap(), &params)?;
            println!("{}", row(&args.seed_node, &r)?);
            r
        }
        Some(Grid(grid)) => {
            let sweep = alpha_sweep(g, attrs_ref, seed, grid, &params)?;
            for r in &sweep.candidates {
                println!("{}", row(&args.seed_node, r)?);
            }
            println!("{}", row("selected", sweep.selected())?);
            sweep.selected().clone()
        }
    };
    if !chosen.converged {
        log::warn!("push budget exhausted before convergence");
    }
    if let Some(path) = &args.output {
        write_cluster(path, &chosen.cluster, &data.index)?;
    }
    Ok(())
}

fn write_cluster(path: &Path, cluster: &NodeSet, index: &NodeIndex) -> anyhow::Result<()> {
    io::write_text(path, &io::format_node_list(cluster, index))?;
    if !index.is_identity() {
        let map = path.with_file_name(io::MAP_FILE);
        io::write_text(&map, &index.to_map_text())?;
    }
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> Outcome {
    let mode: Mode = args.mode.parse()?;
    let mut spec = ExperimentSpec::for_mode(mode);
    let overrides = [
        ("--n", args.n.is_some()),
        ("--k", args.k.is_some()),
        ("--p", args.p.is_some()),
        ("--q", args.q.is_some()),
        ("--d", args.d.is_some()),
    ];
    if mode != Mode::Custom {
        if let Some((flag, _)) = overrides.iter().find(|(_, set)| *set) {
            return Err(Failure::Usage(format!(
                "{flag} is only accepted with --mode custom"
            )));
        }
    }
    let m = &mut spec.model;
    let (n, k) = (args.n.unwrap_or(m.n), args.k.unwrap_or(m.k));
    *m = ModelParams::sbm(
        n,
        k,
        args.p.unwrap_or(m.p),
        args.q.unwrap_or(m.q),
        args.d.unwrap_or(m.d),
        0.0,
        0,
    );
    spec.trials = args.trials;
    spec.seed = args.seeds;
    if let Some(Grid(g)) = args.alpha_grid {
        spec.alpha_grid = g;
    }
    if let Some(Grid(g)) = args.a_grid {
        spec.a_grid = g;
    }
    spec.shared_instance = args.shared_instance;
    spec.gamma = args.gamma;
    spec.max_pushes = args.max_pushes;
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;

    let out = experiment::run_experiment(&spec)?;
    experiment::write_outputs(&out, &args.out)
        .with_context(|| format!("writing results to {}", args.out.display()))?;
    log::info!("wrote {} rows to {}", out.rows.len(), args.out.display());
    Ok(())
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn cmd_eval(args: EvalArgs) -> Outcome {
    let cluster_text = io::read_text(&args.cluster)?;
    let target_text = io::read_text(&args.target)?;
    let names: BTreeSet<&str> = io::node_list_tokens(&cluster_text)
        .into_iter()
        .chain(io::node_list_tokens(&target_text))
        .collect();
    let index = NodeIndex::from_names(names.into_iter().map(String::from).collect())?;
    let cluster = io::parse_node_list(&cluster_text, &index)?;
    let target = io::parse_node_list(&target_text, &index)?;
    if target.is_empty() {
        return Err(Failure::Runtime(anyhow!(
            "target file {} lists no nodes",
            args.target.display()
        )));
    }
    let m = precision_recall_f1(&cluster, &target)?;
    println!("precision,recall,f1");
    println!(
        "{:?},{:?},{:?}",
        round4(m.precision),
        round4(m.recall),
        round4(m.f1)
    );
    Ok(())
}
