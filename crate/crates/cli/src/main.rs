//! Command-line pipeline: simulate -> cluster -> fit / cv -> project ->
//! report.
//!
//! Every run writes its artifacts atomically and records a manifest
//! (`<primary-output>.manifest.json`) with the resolved parameters, input
//! digests, artifact digests, seed, version, and timing. Exit status is 0 on
//! success, 2 on usage errors, 1 on runtime errors.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use treesparse::datagen::SimulationSpec;
use treesparse::grid::{Adjacency, GridMask};
use treesparse::harness::{lambda_grid, lambda_grid_log, pairwise_against_best, CVPlan};
use treesparse::loss::{Dataset, LossKind, Targets};
use treesparse::solver::{fit_model, ModelSpec, PenaltyKind, SolverConfig};
use treesparse::{io, project_to_voxels, scale_slice, ward_cluster, ClusterTree};

#[derive(Parser)]
#[command(name = "treesparse", version, about = "Multi-scale structured-sparsity pipeline over gridded signals")]
struct Cli {
    /// Cap on concurrent fits (also read from TSP_JOBS; 0 = automatic).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark dataset.
    Simulate(SimulateArgs),
    /// Build the spatially-constrained Ward cluster tree of a design matrix.
    Cluster(ClusterArgs),
    /// Fit one model at a fixed regularization strength.
    Fit(FitArgs),
    /// Cross-validate a model over a λ grid.
    Cv(CvArgs),
    /// Project fitted coefficients to voxel maps (globally or by depth).
    Project(ProjectArgs),
    /// Merge evaluation reports and test them against the best model.
    Report(ReportArgs),
}

#[derive(Args, serde::Serialize)]
struct SimulateArgs {
    /// Master seed for all random streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional TOML spec overriding the default simulation.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out_x: PathBuf,
    #[arg(long)]
    out_y: PathBuf,
    /// Ground-truth weight image.
    #[arg(long)]
    out_truth: Option<PathBuf>,
}

#[derive(Args, serde::Serialize)]
struct ClusterArgs {
    /// Design matrix (CSV, or TSP1 binary with --binary).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = false)]
    binary: bool,
    /// Mask file; mutually exclusive with --dims.
    #[arg(long, conflicts_with = "dims")]
    mask: Option<PathBuf>,
    /// Full-grid dimensions as nx,ny[,nz].
    #[arg(long, value_parser = parse_dims)]
    dims: Option<(usize, usize, usize)>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, serde::Serialize)]
struct ModelArgs {
    /// Model family: ridge | l1 | l1-aug | enet | rw-l1 | l1-tree-weights |
    /// tree-l2 | tree-linf | mt-l2 | mt-linf.
    #[arg(long)]
    model: String,
    /// Loss: squared | squared-ova | logistic-ova | multinomial.
    #[arg(long, default_value = "squared")]
    loss: String,
    /// Tree-depth weight base for tree penalties.
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    /// Elastic-net l2 fraction.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Reweighted-l1 stage count.
    #[arg(long, default_value_t = 4)]
    stages: usize,
    /// Reweighted-l1 smoothing epsilon.
    #[arg(long, default_value_t = 0.01)]
    eps: f64,
    /// Cluster tree (required by tree-space penalties).
    #[arg(long)]
    tree: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-7)]
    rel_tol: f64,
}

#[derive(Args, serde::Serialize)]
struct FitArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, serde::Serialize)]
struct CvArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    /// Per-sample group ids (one integer per line) for group-out splits.
    #[arg(long)]
    groups: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    /// Fold plan: `k:<n>` or `loo-group`.
    #[arg(long, default_value = "k:2")]
    folds: String,
    /// Nested inner selection of λ per outer fold.
    #[arg(long, default_value_t = false)]
    nested: bool,
    /// Grid preset: `sim` (10^3 .. 10^-3) or `auto` (λ_max halvings).
    #[arg(long, default_value = "sim")]
    grid: String,
    #[arg(long, default_value_t = 30)]
    grid_count: usize,
    /// Seed for fold shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-fold report CSV.
    #[arg(long)]
    out: PathBuf,
    /// Aligned text summary.
    #[arg(long)]
    out_table: Option<PathBuf>,
    /// Refit-on-all-data model at the selected λ.
    #[arg(long)]
    out_fit: Option<PathBuf>,
}

#[derive(Args, serde::Serialize)]
struct ProjectArgs {
    /// Coefficient matrix CSV (a fit's `.coef.csv` sidecar or any matrix).
    #[arg(long)]
    weights: PathBuf,
    /// Column to project when the matrix has several.
    #[arg(long, default_value_t = 0)]
    column: usize,
    #[arg(long)]
    tree: PathBuf,
    #[arg(long, conflicts_with = "dims")]
    mask: Option<PathBuf>,
    #[arg(long, value_parser = parse_dims)]
    dims: Option<(usize, usize, usize)>,
    /// Slice depth; omitted = full ancestor-sum projection.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Optional 8-bit PGM rendering (2D masks only).
    #[arg(long)]
    pgm: Option<PathBuf>,
}

#[derive(Args, serde::Serialize)]
struct ReportArgs {
    /// Report CSVs produced by `cv`.
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() < 2 || parts.len() > 3 {
        return Err("expected nx,ny[,nz]".into());
    }
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad dimension '{t}'"));
    Ok((
        parse(parts[0])?,
        parse(parts[1])?,
        if parts.len() == 3 { parse(parts[2])? } else { 1 },
    ))
}

#[derive(serde::Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(serde::Serialize)]
struct RunManifest {
    command: String,
    parameters: serde_json::Value,
    inputs: Vec<FileDigest>,
    artifacts: Vec<FileDigest>,
    seed: Option<u64>,
    version: String,
    wall_s: f64,
}

fn digest_all(paths: &[&Path]) -> Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: p.display().to_string(),
                sha256: io::sha256_file(p)?,
            })
        })
        .collect()
}

/// Write the manifest next to the primary output.
fn write_manifest(
    primary_out: &Path,
    command: &str,
    parameters: serde_json::Value,
    inputs: &[&Path],
    artifacts: &[&Path],
    seed: Option<u64>,
    started: Instant,
) -> Result<()> {
    let manifest = RunManifest {
        command: command.into(),
        parameters,
        inputs: digest_all(inputs)?,
        artifacts: digest_all(artifacts)?,
        seed,
        version: env!("CARGO_PKG_VERSION").into(),
        wall_s: started.elapsed().as_secs_f64(),
    };
    let mut path = primary_out.as_os_str().to_owned();
    path.push(".manifest.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    io::atomic_write(Path::new(&path), json.as_bytes())?;
    Ok(())
}

fn read_design(path: &Path, binary: bool) -> Result<Array2<f64>> {
    Ok(if binary {
        io::read_matrix_bin(path)?
    } else {
        io::read_matrix_csv(path)?
    })
}

fn parse_loss(name: &str) -> Result<LossKind> {
    Ok(match name {
        "squared" => LossKind::Squared,
        "squared-ova" => LossKind::SquaredOva,
        "logistic-ova" => LossKind::LogisticOva,
        "multinomial" => LossKind::Multinomial,
        other => bail!("unknown loss '{other}'"),
    })
}

fn parse_penalty(args: &ModelArgs) -> Result<PenaltyKind> {
    Ok(match args.model.as_str() {
        "ridge" => PenaltyKind::Ridge,
        "l1" => PenaltyKind::L1 { augmented: false },
        "l1-aug" => PenaltyKind::L1 { augmented: true },
        "enet" => PenaltyKind::ElasticNet { alpha: args.alpha },
        "rw-l1" => PenaltyKind::ReweightedL1 {
            stages: args.stages,
            eps: args.eps,
        },
        "l1-tree-weights" => PenaltyKind::WeightedL1 { rho: args.rho },
        "tree-l2" => PenaltyKind::TreeL2 { rho: args.rho },
        "tree-linf" => PenaltyKind::TreeLInf { rho: args.rho },
        "mt-l2" => PenaltyKind::MultiTaskL2,
        "mt-linf" => PenaltyKind::MultiTaskLInf,
        other => bail!("unknown model '{other}'"),
    })
}

/// Load targets according to the loss: reals for regression, 1-based labels
/// for classification.
fn load_dataset(
    x_path: &Path,
    y_path: &Path,
    groups: Option<&Path>,
    loss: LossKind,
) -> Result<Dataset> {
    let x = read_design(x_path, false)?;
    let targets = if loss.is_classification() {
        let labels = io::read_labels_csv(y_path)?;
        let n_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
        Targets::Labels { y: labels, n_classes }
    } else {
        Targets::Real(io::read_vector_csv(y_path)?)
    };
    let group_id = groups.map(io::read_labels_csv).transpose()?;
    Ok(Dataset::new(x, targets, group_id)?)
}

fn load_tree_for(model: &ModelArgs, penalty: &PenaltyKind) -> Result<Option<ClusterTree>> {
    if let Some(path) = &model.tree {
        Ok(Some(io::read_tree(path)?))
    } else if penalty.needs_tree() {
        bail!("model '{}' needs --tree", model.model);
    } else {
        Ok(None)
    }
}

fn solver_config(model: &ModelArgs) -> SolverConfig {
    SolverConfig {
        max_iter: model.max_iter,
        rel_tol: model.rel_tol,
        ..Default::default()
    }
}

fn mask_from(mask: &Option<PathBuf>, dims: &Option<(usize, usize, usize)>) -> Result<GridMask> {
    match (mask, dims) {
        (Some(path), _) => Ok(io::read_mask(path)?),
        (None, Some((nx, ny, nz))) => Ok(GridMask::full(*nx, *ny, *nz)?),
        (None, None) => bail!("either --mask or --dims is required"),
    }
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let started = Instant::now();
    let mut spec: SimulationSpec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SimulationSpec::default(),
    };
    spec.seed = args.seed;
    let ds = treesparse::datagen::simulate(&spec)?;
    io::write_matrix_csv(&args.out_x, ds.design())?;
    io::write_vector_csv(&args.out_y, ds.targets_as_real().view())?;
    let mut artifacts: Vec<&Path> = vec![&args.out_x, &args.out_y];
    let truth;
    if let Some(out) = &args.out_truth {
        truth = treesparse::datagen::make_truth(&spec)?;
        io::write_vector_csv(out, truth.view())?;
        artifacts.push(out);
    }
    let inputs: Vec<&Path> = args.spec.iter().map(PathBuf::as_path).collect();
    write_manifest(
        &args.out_x,
        "simulate",
        serde_json::to_value(args)?,
        &inputs,
        &artifacts,
        Some(args.seed),
        started,
    )
}

fn run_cluster(args: &ClusterArgs) -> Result<()> {
    let started = Instant::now();
    let x = read_design(&args.input, args.binary)?;
    let mask = mask_from(&args.mask, &args.dims)?;
    let adj = Adjacency::from_mask(&mask)?;
    let tree = ward_cluster(x.view(), &adj)?;
    io::write_tree(&args.out, &tree)?;
    let mut inputs: Vec<&Path> = vec![&args.input];
    if let Some(m) = &args.mask {
        inputs.push(m);
    }
    write_manifest(
        &args.out,
        "cluster",
        serde_json::to_value(args)?,
        &inputs,
        &[&args.out],
        None,
        started,
    )
}

fn run_fit(args: &FitArgs) -> Result<()> {
    let started = Instant::now();
    let loss = parse_loss(&args.model.loss)?;
    let penalty = parse_penalty(&args.model)?;
    let ds = load_dataset(&args.x, &args.y, None, loss)?;
    let tree = load_tree_for(&args.model, &penalty)?;
    let spec = ModelSpec {
        loss,
        penalty,
        lambda: args.lambda,
    };
    let cfg = solver_config(&args.model);
    let fit = fit_model(&ds, &spec, tree.as_ref(), &cfg, None)?;
    io::write_fit(&args.out, &fit)?;
    let mut coef = args.out.as_os_str().to_owned();
    coef.push(".coef.csv");
    let coef = PathBuf::from(coef);
    let mut inputs: Vec<&Path> = vec![&args.x, &args.y];
    if let Some(t) = &args.model.tree {
        inputs.push(t);
    }
    write_manifest(
        &args.out,
        "fit",
        serde_json::to_value(args)?,
        &inputs,
        &[args.out.as_path(), coef.as_path()],
        None,
        started,
    )
}

fn run_cv(args: &CvArgs, jobs: usize) -> Result<()> {
    let started = Instant::now();
    let loss = parse_loss(&args.model.loss)?;
    let penalty = parse_penalty(&args.model)?;
    let ds = load_dataset(&args.x, &args.y, args.groups.as_deref(), loss)?;
    let tree = load_tree_for(&args.model, &penalty)?;
    let spec = ModelSpec {
        loss,
        penalty,
        lambda: f64::NAN, // selected from the grid
    };
    let plan = match args.folds.as_str() {
        "loo-group" => {
            let groups = ds
                .group_id()
                .ok_or_else(|| anyhow::anyhow!("--folds loo-group needs --groups"))?;
            CVPlan::leave_one_group_out(groups)?
        }
        other => match other.strip_prefix("k:") {
            Some(k) => CVPlan::kfold(ds.n(), k.parse().context("bad fold count")?, args.seed)?,
            None => bail!("unknown fold plan '{other}' (use 'k:<n>' or 'loo-group')"),
        },
    }
    .with_nested(args.nested);
    let grid = match args.grid.as_str() {
        "sim" => lambda_grid_log(1e3, 1e-3, args.grid_count),
        "auto" => lambda_grid(&spec, &ds, tree.as_ref(), args.grid_count)?,
        other => bail!("unknown grid preset '{other}' (use 'sim' or 'auto')"),
    };
    let cfg = solver_config(&args.model);
    let report =
        treesparse::harness::cross_validate(&ds, &plan, &spec, tree.as_ref(), &grid, &cfg, jobs)?;
    io::write_report_csv(&args.out, &report)?;
    let mut artifacts: Vec<PathBuf> = vec![args.out.clone()];
    if let Some(table) = &args.out_table {
        let text = io::format_report_table(&[(report.clone(), None)]);
        io::atomic_write(table, text.as_bytes())?;
        artifacts.push(table.clone());
    }
    if let Some(out_fit) = &args.out_fit {
        if let Some(fit) = &report.final_fit {
            io::write_fit(out_fit, fit)?;
            artifacts.push(out_fit.clone());
            let mut coef = out_fit.as_os_str().to_owned();
            coef.push(".coef.csv");
            artifacts.push(PathBuf::from(coef));
        }
    }
    let mut inputs: Vec<&Path> = vec![&args.x, &args.y];
    if let Some(g) = &args.groups {
        inputs.push(g);
    }
    if let Some(t) = &args.model.tree {
        inputs.push(t);
    }
    let artifact_refs: Vec<&Path> = artifacts.iter().map(PathBuf::as_path).collect();
    write_manifest(
        &args.out,
        "cv",
        serde_json::to_value(args)?,
        &inputs,
        &artifact_refs,
        Some(args.seed),
        started,
    )
}

fn run_project(args: &ProjectArgs) -> Result<()> {
    let started = Instant::now();
    let weights = io::read_matrix_csv(&args.weights)?;
    if args.column >= weights.ncols() {
        bail!(
            "--column {} out of range ({} columns)",
            args.column,
            weights.ncols()
        );
    }
    let w = weights.column(args.column).to_owned();
    let tree = io::read_tree(&args.tree)?;
    let mask = mask_from(&args.mask, &args.dims)?;
    if mask.p() != tree.p() {
        bail!("mask voxels ({}) do not match tree leaves ({})", mask.p(), tree.p());
    }
    let map = match args.depth {
        Some(d) => scale_slice(w.view(), &tree, d)?,
        None => project_to_voxels(w.view(), &tree)?,
    };
    io::write_voxel_map_csv(&args.out, map.view(), &mask)?;
    let mut artifacts: Vec<PathBuf> = vec![args.out.clone()];
    if let Some(pgm) = &args.pgm {
        io::write_voxel_map_pgm(pgm, map.view(), &mask)?;
        artifacts.push(pgm.clone());
        let mut scale = pgm.as_os_str().to_owned();
        scale.push(".scale.txt");
        artifacts.push(PathBuf::from(scale));
    }
    let mut inputs: Vec<&Path> = vec![&args.weights, &args.tree];
    if let Some(m) = &args.mask {
        inputs.push(m);
    }
    let artifact_refs: Vec<&Path> = artifacts.iter().map(PathBuf::as_path).collect();
    write_manifest(
        &args.out,
        "project",
        serde_json::to_value(args)?,
        &inputs,
        &artifact_refs,
        None,
        started,
    )
}

fn run_report(args: &ReportArgs) -> Result<()> {
    let started = Instant::now();
    let reports = args
        .inputs
        .iter()
        .map(|p| Ok(io::read_report_csv(p)?))
        .collect::<Result<Vec<_>>>()?;
    let pvalues = pairwise_against_best(&reports)?;
    let rows: Vec<_> = reports
        .into_iter()
        .zip(pvalues.into_iter().map(|(_, p)| p))
        .collect();
    let table = io::format_report_table(&rows);
    io::atomic_write(&args.out, table.as_bytes())?;
    print!("{table}");
    let inputs: Vec<&Path> = args.inputs.iter().map(PathBuf::as_path).collect();
    write_manifest(
        &args.out,
        "report",
        serde_json::to_value(args)?,
        &inputs,
        &[&args.out],
        None,
        started,
    )
}

fn main() {
    let cli = Cli::parse();
    let jobs = if cli.jobs != 0 {
        cli.jobs
    } else {
        std::env::var("TSP_JOBS")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(0)
    };
    let outcome = match &cli.command {
        Command::Simulate(args) => run_simulate(args),
        Command::Cluster(args) => run_cluster(args),
        Command::Fit(args) => run_fit(args),
        Command::Cv(args) => run_cv(args, jobs),
        Command::Project(args) => run_project(args),
        Command::Report(args) => run_report(args),
    };
    if let Err(err) = outcome {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
