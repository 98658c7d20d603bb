//! JSON run configuration for a full optimisation run, and report output.
//!
//! Relative paths in a config resolve against the config file's directory.

use std::fmt;
use std::path::{Path, PathBuf};

use cold_core::density::{DensityError, DensityEvaluator, DensityMode, DensityModel};
use cold_core::exec::Executor;
use cold_core::knn_index::{build_index, HnswParams, KnnIndex};
use cold_core::model::MlpPredictor;
use cold_core::optimizer::OptConfig;
use cold_core::pipeline::{
    run_cold, ColdRunReport, Decoder, GridSpec, IdentityDecoder, ImageMetric, ImageScore, LinearScore, PipelineError,
    PredictorScore, QuadraticScore, RunSettings, TrueScore,
};
use serde::{Deserialize, Serialize};

use crate::formats::{self, fmt_f64, FormatError, IndexLoadError, LinearDecoder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub encodings: PathBuf,
    pub predictor: PathBuf,
    pub decoder: DecoderConfig,
    pub true_score: TrueScoreConfig,
    /// `null` means no density constraint.
    pub eta: Option<f64>,
    pub grid: GridSpec,
    pub t: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub mode: ModeConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DecoderConfig {
    /// Affine decoder weights file.
    ToyLinear { weights: PathBuf },
    /// Latent point passed through unchanged.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrueScoreConfig {
    Quadratic {
        target: Vec<f64>,
    },
    Linear {
        coefficients: Vec<f64>,
    },
    Image {
        metric: ImageMetric,
        side: usize,
        #[serde(default = "default_max_intensity")]
        max_intensity: f64,
    },
    /// The run's predictor applied to the decoded sample.
    Predictor,
}

fn default_max_intensity() -> f64 {
    cold_core::objectives::DEFAULT_MAX_INTENSITY
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub rho_begin: f64,
    pub rho_end: f64,
    pub max_evals: Option<usize>,
    pub tol_c: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let d = OptConfig::default();
        Self {
            rho_begin: d.rho_begin,
            rho_end: d.rho_end,
            max_evals: d.max_evals,
            tol_c: d.tol_c,
        }
    }
}

impl From<OptimizerConfig> for OptConfig {
    fn from(c: OptimizerConfig) -> Self {
        OptConfig {
            rho_begin: c.rho_begin,
            rho_end: c.rho_end,
            max_evals: c.max_evals,
            tol_c: c.tol_c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModeConfig {
    Exact,
    Knn {
        k: usize,
        #[serde(default = "default_ef")]
        ef_search: usize,
        /// Persisted index; built from `hnsw` when absent.
        #[serde(default)]
        index: Option<PathBuf>,
        #[serde(default)]
        hnsw: HnswConfig,
    },
}

fn default_ef() -> usize {
    HnswParams::DEFAULT_EF_SEARCH
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HnswConfig {
    pub m: usize,
    pub ef_construction: usize,
    pub seed: u64,
}

impl Default for HnswConfig {
    fn default() -> Self {
        let p = HnswParams::default();
        Self {
            m: p.m,
            ef_construction: p.ef_construction,
            seed: p.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub report: PathBuf,
    pub starts_csv: PathBuf,
}

/// Failure classes of a run, mapped to exit codes by the CLI.
#[derive(Debug)]
pub enum RunError {
    /// Unreadable or malformed inputs, or inconsistent configuration.
    Data(String),
    /// No feasible start or a numerical failure during optimisation.
    Numerical(String),
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Data(m) | RunError::Numerical(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for RunError {}

impl From<FormatError> for RunError {
    fn from(e: FormatError) -> Self {
        RunError::Data(e.to_string())
    }
}

impl From<IndexLoadError> for RunError {
    fn from(e: IndexLoadError) -> Self {
        RunError::Data(e.to_string())
    }
}

fn density_error(e: DensityError) -> RunError {
    RunError::Data(e.to_string())
}

impl From<PipelineError> for RunError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::NoFeasibleStarts { .. } | PipelineError::Optimizer { .. } | PipelineError::Predictor { .. } => {
                RunError::Numerical(e.to_string())
            }
            _ => RunError::Data(e.to_string()),
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read(path).map_err(|e| RunError::Data(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_slice(&text).map_err(|e| RunError::Data(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.encodings = resolve(base, &cfg.encodings);
        cfg.predictor = resolve(base, &cfg.predictor);
        if let DecoderConfig::ToyLinear { weights } = &mut cfg.decoder {
            *weights = resolve(base, weights);
        }
        if let ModeConfig::Knn { index: Some(index), .. } = &mut cfg.mode {
            *index = resolve(base, index);
        }
        cfg.output.report = resolve(base, &cfg.output.report);
        cfg.output.starts_csv = resolve(base, &cfg.output.starts_csv);
        Ok(cfg)
    }
}

/// Loads every input named by `cfg`, runs the pipeline, and returns the report.
pub fn execute<E: Executor>(cfg: &RunConfig, exec: &E) -> Result<ColdRunReport, RunError> {
    let enc = formats::read_encodings(&cfg.encodings)?;
    let model = DensityModel::build(&enc.components).map_err(density_error)?;
    let predictor = formats::read_predictor(&cfg.predictor)?;
    let decoder: Box<dyn Decoder> = match &cfg.decoder {
        DecoderConfig::ToyLinear { weights } => {
            let d: LinearDecoder = formats::read_linear_decoder(weights)?;
            if d.weight.cols() != model.dim() {
                return Err(RunError::Data(format!(
                    "decoder expects latent dimension {}, encodings have {}",
                    d.weight.cols(),
                    model.dim()
                )));
            }
            Box::new(d)
        }
        DecoderConfig::None => Box::new(IdentityDecoder),
    };
    let true_score: Box<dyn TrueScore + '_> = match &cfg.true_score {
        TrueScoreConfig::Quadratic { target } => Box::new(QuadraticScore { target: target.clone() }),
        TrueScoreConfig::Linear { coefficients } => Box::new(LinearScore {
            coefficients: coefficients.clone(),
        }),
        TrueScoreConfig::Image {
            metric,
            side,
            max_intensity,
        } => Box::new(ImageScore {
            metric: *metric,
            side: *side,
            max_intensity: *max_intensity,
        }),
        TrueScoreConfig::Predictor => Box::new(PredictorScore::<MlpPredictor>(&predictor)),
    };
    let index: Option<KnnIndex> = match &cfg.mode {
        ModeConfig::Exact => None,
        ModeConfig::Knn { index: Some(path), .. } => Some(formats::read_index(path, model.means(), model.dim())?),
        ModeConfig::Knn {
            index: None, hnsw, ..
        } => {
            let params = HnswParams {
                m: hnsw.m,
                ef_construction: hnsw.ef_construction,
                seed: hnsw.seed,
            };
            Some(build_index(model.means(), model.dim(), &params).map_err(|e| RunError::Data(e.to_string()))?)
        }
    };
    let mode = match (&cfg.mode, &index) {
        (ModeConfig::Knn { k, ef_search, .. }, Some(index)) => DensityMode::Knn {
            index,
            k: *k,
            ef_search: *ef_search,
        },
        _ => DensityMode::Exact,
    };
    let evaluator = DensityEvaluator::new(&model, mode).map_err(density_error)?;
    let opt: OptConfig = cfg.optimizer.into();
    opt.validate(model.dim()).map_err(|e| RunError::Data(e.to_string()))?;
    let settings = RunSettings {
        evaluator,
        eta: cfg.eta.unwrap_or(f64::NEG_INFINITY),
        grid: cfg.grid,
        t: cfg.t,
        opt,
    };
    Ok(run_cold(&settings, &predictor, decoder.as_ref(), true_score.as_ref(), exec)?)
}

pub fn report_json(report: &ColdRunReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report is serialisable");
    s.push('\n');
    s
}

/// One row per start: points, log-densities, scores and termination.
pub fn starts_csv(report: &ColdRunReport) -> String {
    let d = report.starts.first().map_or(0, |s| s.start.len());
    let mut header = vec!["rank".to_string(), "candidate_index".to_string()];
    header.extend((0..d).map(|i| format!("start_{i}")));
    header.extend((0..d).map(|i| format!("optimum_{i}")));
    header.extend(
        [
            "start_log_density",
            "optimum_log_density",
            "start_predicted_score",
            "optimum_predicted_score",
            "true_score",
            "decode_ok",
            "evaluations",
            "termination",
            "error",
        ]
        .map(String::from),
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for s in &report.starts {
        let mut row = vec![s.rank.to_string(), s.candidate_index.to_string()];
        row.extend(s.start.iter().map(|&v| fmt_f64(v)));
        row.extend(s.optimum.iter().map(|&v| fmt_f64(v)));
        row.push(fmt_f64(s.start_log_density));
        row.push(fmt_f64(s.optimum_log_density));
        row.push(fmt_f64(s.start_predicted_score));
        row.push(fmt_f64(s.optimum_predicted_score));
        row.push(s.true_score.map(fmt_f64).unwrap_or_default());
        row.push(s.decode_ok().to_string());
        row.push(s.evaluations.to_string());
        row.push(
            serde_json::to_value(s.termination)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
        );
        row.push(s.error.clone().unwrap_or_default());
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// Runs `cfg` and writes both outputs.
pub fn run_and_write<E: Executor>(cfg: &RunConfig, exec: &E) -> Result<ColdRunReport, RunError> {
    let report = execute(cfg, exec)?;
    let write = |p: &Path, s: String| std::fs::write(p, s).map_err(|e| RunError::Data(format!("{}: {e}", p.display())));
    write(&cfg.output.report, report_json(&report))?;
    write(&cfg.output.starts_csv, starts_csv(&report))?;
    Ok(report)
}
