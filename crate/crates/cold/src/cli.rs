//! Command-line interface. Exit codes: 0 success, 1 usage error, 2 data or
//! format error, 3 numerical failure.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use cold_core::density::{batch_log_density, DensityError, DensityEvaluator, DensityMode, DensityModel};
use cold_core::knn_index::{build_index, HnswParams, KnnIndex};
use cold_core::objectives::{self, ImageGray, ObjectiveError};
use cold_core::pipeline::{sample_grid, GridSpec, PipelineError};

use crate::bench::bench_knn;
use crate::formats::{self, fmt_f64, Encodings};
use crate::parallel::{default_workers, PoolExecutor};
use crate::run::{run_and_write, RunConfig, RunError};

#[derive(Debug, Parser)]
#[command(name = "cold", version, about = "Density-constrained multi-start optimisation in latent spaces")]
pub struct Cli {
    /// Worker threads [default: COLD_WORKERS, else available cores]
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the mixture log-density at each point
    Density(DensityArgs),
    /// Draw points from N(0, b·I)
    Sample(SampleArgs),
    /// Run a full optimisation from a JSON config
    Optimize(OptimizeArgs),
    /// Compute an image metric for each image
    Objective(ObjectiveArgs),
    /// Print the diversity of a set of images
    Diversity(DiversityArgs),
    /// Emit accuracy and timing tables for the k-NN approximation
    BenchKnn(BenchArgs),
    /// Build an HNSW index over encoding means and save it
    Index(IndexArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exact,
    Knn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Thickness,
    Aspect,
    Rotation,
}

#[derive(Debug, Args)]
pub struct HnswArgs {
    /// HNSW links per node
    #[arg(long, default_value_t = HnswParams::default().m)]
    pub m: usize,
    /// HNSW construction beam width
    #[arg(long, default_value_t = HnswParams::default().ef_construction)]
    pub ef_construction: usize,
    /// HNSW level-assignment seed
    #[arg(long, default_value_t = HnswParams::default().seed)]
    pub index_seed: u64,
}

impl HnswArgs {
    fn params(&self) -> HnswParams {
        HnswParams {
            m: self.m,
            ef_construction: self.ef_construction,
            seed: self.index_seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct DensityArgs {
    /// Encodings file (binary or CSV)
    #[arg(long)]
    pub encodings: PathBuf,
    /// Points file (binary or CSV)
    #[arg(long)]
    pub points: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
    pub mode: ModeArg,
    /// Neighbours per point; required with --mode knn
    #[arg(long)]
    pub k: Option<usize>,
    /// Search beam width in knn mode
    #[arg(long, default_value_t = HnswParams::DEFAULT_EF_SEARCH)]
    pub ef: usize,
    /// Saved index to load instead of building one
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[command(flatten)]
    pub hnsw: HnswArgs,
    /// Output CSV
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub dim: usize,
    #[arg(long)]
    pub count: usize,
    /// Variance scale
    #[arg(long)]
    pub b: f64,
    #[arg(long)]
    pub seed: u64,
    /// Output points file (binary)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// Run configuration (JSON)
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct ObjectiveArgs {
    #[arg(long, value_enum)]
    pub metric: MetricArg,
    /// Image files (PGM, or CSV matrices with a .csv extension)
    #[arg(long, num_args = 1.., required = true)]
    pub images: Vec<PathBuf>,
    /// Output CSV
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiversityArgs {
    /// Two or more images of equal size
    #[arg(long, num_args = 1.., required = true)]
    pub images: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Encodings file (binary or CSV)
    #[arg(long)]
    pub encodings: PathBuf,
    /// Points file (binary or CSV)
    #[arg(long)]
    pub points: PathBuf,
    /// Comma-separated neighbour counts
    #[arg(long, value_delimiter = ',', required = true)]
    pub ks: Vec<usize>,
    /// Points evaluated untimed before each measurement
    #[arg(long, default_value_t = 100)]
    pub warmup: usize,
    /// Saved index to load instead of building one
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[command(flatten)]
    pub hnsw: HnswArgs,
    /// Output CSV
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Encodings file (binary or CSV)
    #[arg(long)]
    pub encodings: PathBuf,
    #[command(flatten)]
    pub hnsw: HnswArgs,
    /// Output index file
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

fn data<E: fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Data(m) => CliError::Data(m),
            RunError::Numerical(m) => CliError::Numerical(m),
        }
    }
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let workers = cli.workers.map_or_else(default_workers, |w| w as usize);
    let exec = PoolExecutor::new(workers).map_err(|e| CliError::Numerical(e.to_string()))?;
    match cli.command {
        Command::Density(a) => cmd_density(&a, &exec),
        Command::Sample(a) => cmd_sample(&a),
        Command::Optimize(a) => cmd_optimize(&a, &exec),
        Command::Objective(a) => cmd_objective(&a),
        Command::Diversity(a) => cmd_diversity(&a),
        Command::BenchKnn(a) => cmd_bench_knn(&a, &exec),
        Command::Index(a) => cmd_index(&a),
    }
}

fn load_model(path: &Path) -> Result<(Encodings, DensityModel), CliError> {
    let enc = formats::read_encodings(path).map_err(data)?;
    let model = DensityModel::build(&enc.components).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok((enc, model))
}

fn load_or_build_index(model: &DensityModel, path: Option<&Path>, hnsw: &HnswArgs) -> Result<KnnIndex, CliError> {
    match path {
        Some(p) => formats::read_index(p, model.means(), model.dim()).map_err(data),
        None => build_index(model.means(), model.dim(), &hnsw.params()).map_err(|e| CliError::Usage(e.to_string())),
    }
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn check_point_dims(points: &[Vec<f64>], dim: usize, path: &Path) -> Result<(), CliError> {
    match points.iter().position(|p| p.len() != dim) {
        Some(i) => Err(CliError::Data(format!(
            "{}: point {i} has dimension {}, encodings have {dim}",
            path.display(),
            points[i].len()
        ))),
        None => Ok(()),
    }
}

fn cmd_density(a: &DensityArgs, exec: &PoolExecutor) -> Result<(), CliError> {
    if a.mode == ModeArg::Exact && a.k.is_some() {
        return Err(CliError::Usage("--k is only valid with --mode knn".into()));
    }
    let k = match (a.mode, a.k) {
        (ModeArg::Knn, None) => return Err(CliError::Usage("--mode knn requires --k".into())),
        (_, k) => k,
    };
    let (_, model) = load_model(&a.encodings)?;
    let points = formats::read_points(&a.points).map_err(data)?;
    check_point_dims(&points, model.dim(), &a.points)?;
    let index = match k {
        Some(k) => {
            if k == 0 || k > model.len() {
                return Err(CliError::Usage(format!("--k {k} outside [1, {}]", model.len())));
            }
            if a.ef < k {
                return Err(CliError::Usage(format!("--ef {} is smaller than --k {k}", a.ef)));
            }
            Some(load_or_build_index(&model, a.index.as_deref(), &a.hnsw)?)
        }
        None => None,
    };
    let mode = match (&index, k) {
        (Some(index), Some(k)) => DensityMode::Knn {
            index,
            k,
            ef_search: a.ef,
        },
        _ => DensityMode::Exact,
    };
    let evaluator = DensityEvaluator::new(&model, mode).map_err(|e| match e {
        DensityError::IndexMismatch { .. } => data(e),
        e => CliError::Usage(e.to_string()),
    })?;
    let values = batch_log_density(&evaluator, &points, exec).map_err(|e| CliError::Numerical(e.to_string()))?;
    let mut out = String::from("point_index,log_density\n");
    for (i, v) in values.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", fmt_f64(*v)));
    }
    write_out(&a.out, out.as_bytes())
}

fn cmd_sample(a: &SampleArgs) -> Result<(), CliError> {
    if a.dim == 0 {
        return Err(CliError::Usage("--dim must be at least 1".into()));
    }
    let grid = GridSpec {
        count: a.count,
        b: a.b,
        seed: a.seed,
    };
    grid.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let points = sample_grid(&grid, a.dim).map_err(|e: PipelineError| CliError::Usage(e.to_string()))?;
    formats::write_points(&a.out, &points).map_err(data)
}

fn cmd_optimize(a: &OptimizeArgs, exec: &PoolExecutor) -> Result<(), CliError> {
    let cfg = RunConfig::load(&a.config)?;
    let report = run_and_write(&cfg, exec)?;
    if report.truncated {
        eprintln!(
            "warning: only {} feasible starts, fewer than t = {}",
            report.starts.len(),
            report.t
        );
    }
    if report.all_decodes_failed {
        eprintln!("warning: every decode failed");
    }
    Ok(())
}

fn objective_cell(metric: MetricArg, img: &ImageGray) -> (String, String) {
    let undefined = |_: ObjectiveError| (String::new(), "undefined".to_string());
    match metric {
        MetricArg::Thickness => (fmt_f64(objectives::thickness(img)), String::new()),
        MetricArg::Aspect => objectives::aspect_ratio(img).map_or_else(undefined, |v| (fmt_f64(v), String::new())),
        MetricArg::Rotation => match objectives::rotation(img) {
            Ok(r) if r.vertical => (String::new(), "vertical".to_string()),
            Ok(r) => (fmt_f64(r.slope), String::new()),
            Err(e) => undefined(e),
        },
    }
}

fn cmd_objective(a: &ObjectiveArgs) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["path", "value", "error"]).map_err(data)?;
    let mut parsed = 0usize;
    let mut last_err = String::new();
    for path in &a.images {
        let (value, error) = match formats::read_image(path) {
            Ok(img) => {
                parsed += 1;
                objective_cell(a.metric, &img)
            }
            Err(e) => {
                last_err = e.to_string();
                (String::new(), last_err.clone())
            }
        };
        w.write_record([path.display().to_string(), value, error]).map_err(data)?;
    }
    if parsed == 0 {
        return Err(CliError::Data(format!("no image could be read: {last_err}")));
    }
    write_out(&a.out, &w.into_inner().map_err(data)?)
}

fn cmd_diversity(a: &DiversityArgs) -> Result<(), CliError> {
    if a.images.len() < 2 {
        return Err(CliError::Usage("diversity needs at least two images".into()));
    }
    let images = a
        .images
        .iter()
        .map(|p| formats::read_image(p))
        .collect::<Result<Vec<_>, _>>()
        .map_err(data)?;
    let u = objectives::diversity(&images).map_err(data)?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{u:.11e}").map_err(data)
}

fn cmd_bench_knn(a: &BenchArgs, exec: &PoolExecutor) -> Result<(), CliError> {
    let (_, model) = load_model(&a.encodings)?;
    let points = formats::read_points(&a.points).map_err(data)?;
    check_point_dims(&points, model.dim(), &a.points)?;
    if let Some(&k) = a.ks.iter().find(|&&k| k == 0 || k > model.len()) {
        return Err(CliError::Usage(format!("--ks entry {k} outside [1, {}]", model.len())));
    }
    let index = load_or_build_index(&model, a.index.as_deref(), &a.hnsw)?;
    let rows = bench_knn(&model, &index, &points, &a.ks, a.warmup, exec).map_err(|e| match e {
        PipelineError::BadKs { .. } => CliError::Usage(e.to_string()),
        e => CliError::Numerical(e.to_string()),
    })?;
    let mut out = String::from("k,approx_mean,exact_mean,approx_seconds,exact_seconds\n");
    for r in &rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.accuracy.k,
            fmt_f64(r.accuracy.approx_mean),
            fmt_f64(r.accuracy.exact_mean),
            fmt_f64(r.timing.approx.as_secs_f64()),
            fmt_f64(r.timing.exact.as_secs_f64()),
        ));
    }
    write_out(&a.out, out.as_bytes())
}

fn cmd_index(a: &IndexArgs) -> Result<(), CliError> {
    let (_, model) = load_model(&a.encodings)?;
    let index = load_or_build_index(&model, None, &a.hnsw)?;
    formats::write_index(&a.out, &index).map_err(data)
}
