//! Command-line interface.
//!
//! Every command writes into a staging directory next to its final output
//! and renames it into place only after all files are written, so a failed
//! run leaves nothing behind. A lock file in the output directory keeps two
//! runs from writing there at once.

use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::cvxclust::{
    build_weights, trace_clusterpath, ClusterPath, ClusterProblem, LambdaGrid, SolverOptions,
};
use crate::error::{Error, Result};
use crate::graph_io::{load_tudataset, write_augmented_dataset, write_file, Dataset, LabeledGraph};
use crate::graphon::{estimate_all, sample_graph, Graphon};
use crate::mixpath::{
    collapse_branches, extended_to_json, rates_csv, select_branch_lambda, BranchSelection,
    ExtendedClusterPath, LabelOrientation, LabelPath,
};
use crate::mixup::{
    generate, ClassGraphonSet, DataFn, Generated, LabelFn, LambdaSource, MixupInputs, MixupSpec,
};

const LOCK_FILE: &str = ".graphmad.lock";
const THREADS_VAR: &str = "GRAPHMAD_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "graphmad",
    version,
    about = "Graph mixup along convex clusterpaths of graphon descriptors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate new soft-labeled graphs and write the augmented dataset.
    Augment(AugmentArgs),
    /// Export the clusterpath, its branches and their label-rate curves.
    Clusterpath(ClusterpathArgs),
    /// Write the graphon estimate of every graph.
    Estimate(EstimateArgs),
    /// Sample graphs from a graphon file.
    Sample(SampleArgs),
}

#[derive(Debug, Args)]
struct DatasetArgs {
    /// Directory holding `<name>/<name>_A.txt` and friends.
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    #[arg(long)]
    name: String,
    /// Results go to `<out>/<name>/`.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PathArgs {
    /// Graphon resolution D.
    #[arg(long, default_value_t = 12)]
    resolution: usize,
    /// Fusion weight between samples of different classes.
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// Number of solved lambda values on [0, 0.99]; lambda = 1 is added.
    #[arg(long, default_value_t = 101)]
    grid_size: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Samples are fused when their centroids are within this fraction of the descriptor range.
    #[arg(long, default_value_t = 1e-4)]
    delta_fuse: f64,
    #[arg(long, value_enum, default_value_t = LabelOrientation::EndpointConsistent)]
    label_orientation: LabelOrientation,
    /// Include centroid and branch trajectories in the JSON exports.
    #[arg(long)]
    export_centroids: bool,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[command(flatten)]
    path: PathArgs,
    /// Sharpness of the sigmoid and logit label functions.
    #[arg(long, default_value_t = 5.0)]
    a: f64,
    /// Number of new graphs; defaults to 20% of the dataset, rounded up.
    #[arg(long)]
    num_new: Option<usize>,
    #[arg(long, value_enum, default_value_t = DataFn::Clusterpath)]
    gfeat: DataFn,
    #[arg(long, value_enum, default_value_t = LabelFn::Clusterpath)]
    glabel: LabelFn,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ClusterpathArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[command(flatten)]
    path: PathArgs,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[arg(long, default_value_t = 12)]
    resolution: usize,
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// Graphon JSON file with fields `D` and `W`.
    #[arg(long)]
    graphon: PathBuf,
    #[arg(long)]
    nodes: usize,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value = "sampled")]
    name: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses `args` (program name first), runs the command and returns the exit status.
///
/// Failures print one line `error[CODE]: message` to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let line = text
                .lines()
                .next()
                .unwrap_or_default()
                .trim_start_matches("error: ");
            eprintln!("error[E_USAGE]: {line}");
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.code());
            1
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Error::Config(format!(
                "{THREADS_VAR} must be a positive integer, got {v:?}"
            ))
        })?;
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))?;
    pool.install(|| match cli.command {
        Command::Augment(a) => cmd_augment(&a),
        Command::Clusterpath(a) => cmd_clusterpath(&a),
        Command::Estimate(a) => cmd_estimate(&a),
        Command::Sample(a) => cmd_sample(&a),
    })
}

/// Output directory that only appears once everything in it is written.
struct Staging {
    out: PathBuf,
    name: String,
    root: PathBuf,
    lock: PathBuf,
    committed: bool,
}

impl Staging {
    fn begin(out: &Path, name: &str) -> Result<Self> {
        if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
            return Err(Error::Config(format!("invalid dataset name {name:?}")));
        }
        fs::create_dir_all(out).map_err(|source| Error::Write {
            path: out.to_path_buf(),
            source,
        })?;
        let lock = out.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => {}
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                return Err(Error::Locked { path: lock })
            }
            Err(source) => return Err(Error::Write { path: lock, source }),
        }
        let staging = Staging {
            out: out.to_path_buf(),
            name: name.to_string(),
            root: out.join(format!(".{name}.partial")),
            lock,
            committed: false,
        };
        if staging.root.exists() {
            remove_dir(&staging.root)?;
        }
        fs::create_dir_all(staging.dir()).map_err(|source| Error::Write {
            path: staging.dir(),
            source,
        })?;
        Ok(staging)
    }

    /// Where files for `<out>/<name>/` are written during the run.
    fn dir(&self) -> PathBuf {
        self.root.join(&self.name)
    }

    fn final_dir(&self) -> PathBuf {
        self.out.join(&self.name)
    }

    fn commit(mut self) -> Result<PathBuf> {
        let target = self.final_dir();
        if target.exists() {
            remove_dir(&target)?;
        }
        fs::rename(self.dir(), &target).map_err(|source| Error::Write {
            path: target.clone(),
            source,
        })?;
        self.committed = true;
        Ok(target)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if self.root.exists() {
            if let Err(e) = fs::remove_dir_all(&self.root) {
                log::warn!("cannot remove {}: {e}", self.root.display());
            }
        }
        if !self.committed {
            log::debug!("discarded partial output for {}", self.name);
        }
        let _ = fs::remove_file(&self.lock);
    }
}

fn remove_dir(path: &Path) -> Result<()> {
    fs::remove_dir_all(path).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("--{name} must be positive, got {v}")))
    }
}

impl PathArgs {
    fn validate(&self) -> Result<()> {
        if self.resolution == 0 {
            return Err(Error::Config("--resolution must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!(
                "--epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if self.grid_size < 2 {
            return Err(Error::Config("--grid-size must be at least 2".into()));
        }
        check_positive("tol", self.tol)?;
        check_positive("delta-fuse", self.delta_fuse)
    }

    fn echo(&self) -> serde_json::Value {
        json!({
            "resolution": self.resolution,
            "epsilon": self.epsilon,
            "grid_size": self.grid_size,
            "tol": self.tol,
            "delta_fuse": self.delta_fuse,
            "label_orientation": self.label_orientation,
        })
    }
}

/// Clusterpath, branch choice and label paths for one dataset.
struct Branches {
    path: ClusterPath,
    selection: BranchSelection,
    extended: ExtendedClusterPath,
    labels: LabelPath,
}

fn descriptors_of(estimates: &[Graphon]) -> Array2<f64> {
    let p = estimates.first().map_or(0, |g| g.as_slice().len());
    let mut x = Array2::zeros((estimates.len(), p));
    for (mut row, g) in x.rows_mut().into_iter().zip(estimates) {
        row.assign(&ndarray::ArrayView1::from(&g.vectorize()[..]));
    }
    x
}

fn estimate_dataset(dataset: &Dataset, resolution: usize) -> Result<Vec<Graphon>> {
    let graphs: Vec<_> = dataset.graphs().iter().map(|g| &g.graph).collect();
    estimate_all(graphs, resolution)
}

fn trace_branches(dataset: &Dataset, estimates: &[Graphon], args: &PathArgs) -> Result<Branches> {
    let x = descriptors_of(estimates);
    let weights = build_weights(&dataset.labels(), args.epsilon)?;
    let grid = LambdaGrid::uniform(args.grid_size)?;
    let options = SolverOptions {
        tol: args.tol,
        ..SolverOptions::default()
    };
    let path = trace_clusterpath(&x, &weights, &grid, &options, args.delta_fuse)?;
    let problem = ClusterProblem {
        descriptors: &x,
        weights: &weights,
        options,
        delta_fuse: args.delta_fuse,
    };
    let selection = select_branch_lambda(&path, &problem, dataset.class_count())?;
    let extended = collapse_branches(&path, &selection, &dataset.classes(), dataset.class_count())?;
    let labels = LabelPath::new(&extended, args.label_orientation);
    Ok(Branches {
        path,
        selection,
        extended,
        labels,
    })
}

/// Cluster counts at five evenly spaced grid positions.
fn checkpoints(path: &ClusterPath) -> Vec<(f64, usize)> {
    let last = path.grid.len() - 1;
    (0..=4)
        .map(|q| {
            let m = (q * last + 2) / 4;
            (path.grid.values()[m], path.cluster_counts[m])
        })
        .collect()
}

fn checkpoint_line(path: &ClusterPath) -> String {
    checkpoints(path)
        .iter()
        .map(|(l, c)| format!("{l:.4}:{c}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn cmd_augment(args: &AugmentArgs) -> Result<()> {
    args.path.validate()?;
    check_positive("a", args.a)?;
    let ds = &args.dataset;
    let dataset = load_tudataset(&ds.data_dir, &ds.name)?;
    let t = dataset.len();
    let num_new = args.num_new.unwrap_or((t * 2).div_ceil(10));
    let spec = MixupSpec {
        data_fn: args.gfeat,
        label_fn: args.glabel,
        a: args.a,
        lambda_source: LambdaSource::Uniform,
        orientation: args.path.label_orientation,
    };
    spec.validate()?;

    let staging = Staging::begin(&ds.out, &ds.name)?;
    let estimates = estimate_dataset(&dataset, args.path.resolution)?;
    let branches = if spec.needs_clusterpath() {
        Some(trace_branches(&dataset, &estimates, &args.path)?)
    } else {
        None
    };
    let class_graphons = match spec.data_fn {
        DataFn::Linear => Some(ClassGraphonSet::from_estimates(
            &estimates,
            &dataset.classes(),
            dataset.class_count(),
        )?),
        DataFn::Clusterpath => None,
    };
    let inputs = MixupInputs {
        dataset: &dataset,
        extended: branches.as_ref().map(|b| &b.extended),
        labels: branches.as_ref().map(|b| &b.labels),
        class_graphons: class_graphons.as_ref(),
    };
    let Generated { graphs, draws } = generate(inputs, &spec, num_new, args.seed)?;

    let mut config = args.path.echo();
    config["a"] = json!(args.a);
    config["num_new"] = json!(num_new);
    config["gfeat"] = json!(args.gfeat);
    config["glabel"] = json!(args.glabel);
    config["seed"] = json!(args.seed);
    let mut run = json!({
        "command": "augment",
        "config": config,
        "self_loops_dropped": dataset.self_loops_dropped,
        "draws": draws,
    });
    if let Some(b) = &branches {
        run["clusterpath"] = json!({
            "lambda_star": b.selection.lambda_star,
            "index_sets": b.selection.index_sets,
            "refined": b.selection.refined,
            "split": b.selection.split,
            "cluster_count_checkpoints": checkpoints(&b.path),
            "monotonicity_violations": b.path.monotonicity_violations,
            "rate_clamped": b.labels.clamped,
        });
    }
    write_augmented_dataset(&staging.root, &ds.name, &dataset, &graphs, &run)?;
    let out = staging.commit()?;

    println!("dataset: {}", ds.name);
    println!("graphs: {t}");
    println!("classes: {}", dataset.class_count());
    println!("new graphs: {num_new}");
    if let Some(b) = &branches {
        println!("lambda*: {}", b.selection.lambda_star);
        println!("cluster counts: {}", checkpoint_line(&b.path));
    }
    println!("output: {}", out.display());
    Ok(())
}

fn cmd_clusterpath(args: &ClusterpathArgs) -> Result<()> {
    args.path.validate()?;
    let ds = &args.dataset;
    let dataset = load_tudataset(&ds.data_dir, &ds.name)?;
    let staging = Staging::begin(&ds.out, &ds.name)?;
    let estimates = estimate_dataset(&dataset, args.path.resolution)?;
    let b = trace_branches(&dataset, &estimates, &args.path)?;

    let dir = staging.dir();
    let mut path_json = b.path.to_json(args.path.export_centroids);
    path_json["config"] = args.path.echo();
    write_json(&dir.join("clusterpath.json"), &path_json)?;
    let ext_json = extended_to_json(&b.extended, &b.labels, args.path.export_centroids);
    write_json(&dir.join("extended_clusterpath.json"), &ext_json)?;
    write_file(
        &dir.join("clusterpath.csv"),
        rates_csv(&b.path, &b.labels).as_bytes(),
    )?;
    let out = staging.commit()?;

    println!("dataset: {}", ds.name);
    println!("graphs: {}", dataset.len());
    println!("branches: {}", b.extended.branch_count());
    println!("lambda*: {}", b.selection.lambda_star);
    println!("cluster counts: {}", checkpoint_line(&b.path));
    println!("output: {}", out.display());
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut body = serde_json::to_vec_pretty(value)?;
    body.push(b'\n');
    write_file(path, &body)
}

fn cmd_estimate(args: &EstimateArgs) -> Result<()> {
    if args.resolution == 0 {
        return Err(Error::Config("--resolution must be at least 1".into()));
    }
    let ds = &args.dataset;
    let dataset = load_tudataset(&ds.data_dir, &ds.name)?;
    let staging = Staging::begin(&ds.out, &ds.name)?;
    let estimates = estimate_dataset(&dataset, args.resolution)?;
    let dir = staging.dir().join("graphons");
    fs::create_dir_all(&dir).map_err(|source| Error::Write {
        path: dir.clone(),
        source,
    })?;
    for (i, g) in estimates.iter().enumerate() {
        g.save(&dir.join(format!("graph_{}.json", i + 1)))?;
    }
    let out = staging.commit()?;
    println!("dataset: {}", ds.name);
    println!("graphs: {}", estimates.len());
    println!("resolution: {}", args.resolution);
    println!("output: {}", out.join("graphons").display());
    Ok(())
}

fn cmd_sample(args: &SampleArgs) -> Result<()> {
    if args.nodes == 0 || args.count == 0 {
        return Err(Error::Config(
            "--nodes and --count must be at least 1".into(),
        ));
    }
    let graphon = Graphon::load(&args.graphon)?;
    let staging = Staging::begin(&args.out, &args.name)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let seeds: Vec<u64> = (0..args.count).map(|_| rng.gen()).collect();
    let graphs = seeds
        .into_par_iter()
        .map(|s| {
            let g = sample_graph(&graphon, args.nodes, &mut ChaCha8Rng::seed_from_u64(s));
            LabeledGraph::new(g, 0, 1)
        })
        .collect::<Result<Vec<_>>>()?;
    let total_edges: usize = graphs.iter().map(|g| g.graph.edge_count()).sum();
    let dataset = Dataset::with_index_labels(args.name.clone(), graphs, 1)?;
    let run = json!({
        "command": "sample",
        "config": {
            "graphon": graphon,
            "nodes": args.nodes,
            "count": args.count,
            "seed": args.seed,
        },
    });
    write_augmented_dataset(&staging.root, &args.name, &dataset, &[], &run)?;
    let out = staging.commit()?;
    println!("graphs: {}", args.count);
    println!("nodes: {}", args.nodes);
    println!("mean edges: {}", total_edges as f64 / args.count as f64);
    println!("output: {}", out.display());
    Ok(())
}
