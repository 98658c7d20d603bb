//! Multi-start constrained optimisation over a density-filtered sample of
//! the latent space.
//!
//! A run samples points from `N(0, b·I)`, keeps those whose mixture
//! log-density is at least `eta`, ranks them by predicted score, and
//! locally maximises the predictor from the `t` best under the density
//! constraint. Each optimum is decoded and scored by a true-score plug-in.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cell::RefCell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::density::{batch_log_density, DensityError, DensityEvaluator, DensityModel};
use crate::exec::Executor;
use crate::knn_index::KnnIndex;
use crate::math::{sqrt, LogSumExp};
use crate::model::{MlpPredictor, ModelError, ToyPvae};
use crate::objectives::{self, ImageGray};
use crate::optimizer::{maximize_constrained, OptConfig, OptError, Termination};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid grid: {0}")]
    InvalidGrid(&'static str),
    #[error("t must be at least 1")]
    InvalidT,
    #[error("predictor expects dimension {expected}, density model has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no feasible starts: none of {sampled} sampled points has log-density >= {eta}")]
    NoFeasibleStarts { sampled: usize, eta: f64 },
    #[error("predictor failed at candidate {index}: {message}")]
    Predictor { index: usize, message: String },
    #[error("optimisation from start {rank} failed: {source}")]
    Optimizer {
        rank: usize,
        #[source]
        source: OptError,
    },
    #[error("k list must be nonempty with every k in [1, {n}]")]
    BadKs { n: usize },
    #[error(transparent)]
    Density(#[from] DensityError),
}

/// Failure reported by a decoder or true-score plug-in.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct PluginError(pub String);

impl PluginError {
    pub fn new(message: impl ToString) -> Self {
        Self(message.to_string())
    }
}

/// Latent-space property predictor.
pub trait Predictor: Sync {
    fn input_dim(&self) -> usize;
    fn predict(&self, z: &[f64]) -> Result<f64, ModelError>;
}

impl Predictor for MlpPredictor {
    fn input_dim(&self) -> usize {
        MlpPredictor::input_dim(self)
    }

    fn predict(&self, z: &[f64]) -> Result<f64, ModelError> {
        MlpPredictor::predict(self, z)
    }
}

impl Predictor for ToyPvae {
    fn input_dim(&self) -> usize {
        self.latent_dim()
    }

    fn predict(&self, z: &[f64]) -> Result<f64, ModelError> {
        ToyPvae::predict(self, z)
    }
}

/// Maps a latent point to a sample; may reject the point.
pub trait Decoder: Sync {
    fn decode(&self, z: &[f64]) -> Result<Vec<f64>, PluginError>;
}

/// Passes the latent point through unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDecoder;

impl Decoder for IdentityDecoder {
    fn decode(&self, z: &[f64]) -> Result<Vec<f64>, PluginError> {
        Ok(z.to_vec())
    }
}

impl Decoder for ToyPvae {
    fn decode(&self, z: &[f64]) -> Result<Vec<f64>, PluginError> {
        ToyPvae::decode(self, z).map_err(PluginError::new)
    }
}

/// Scores a decoded sample the same way the training targets were scored.
pub trait TrueScore: Sync {
    fn score(&self, sample: &[f64]) -> Result<f64, PluginError>;

    /// Image view of a sample, used for the diversity aggregate.
    fn as_image(&self, _sample: &[f64]) -> Option<ImageGray> {
        None
    }
}

/// `−‖x − target‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticScore {
    pub target: Vec<f64>,
}

impl TrueScore for QuadraticScore {
    fn score(&self, sample: &[f64]) -> Result<f64, PluginError> {
        if sample.len() != self.target.len() {
            return Err(PluginError::new("sample dimension does not match target"));
        }
        Ok(-crate::math::squared_distance(sample, &self.target))
    }
}

/// `cᵀx`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScore {
    pub coefficients: Vec<f64>,
}

impl TrueScore for LinearScore {
    fn score(&self, sample: &[f64]) -> Result<f64, PluginError> {
        if sample.len() != self.coefficients.len() {
            return Err(PluginError::new("sample dimension does not match coefficients"));
        }
        Ok(crate::math::dot(sample, &self.coefficients))
    }
}

/// Uses a predictor as the true score of a latent-valued sample.
pub struct PredictorScore<'a, P: Predictor + ?Sized>(pub &'a P);

impl<P: Predictor + ?Sized> TrueScore for PredictorScore<'_, P> {
    fn score(&self, sample: &[f64]) -> Result<f64, PluginError> {
        self.0.predict(sample).map_err(PluginError::new)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ImageMetric {
    Thickness,
    Aspect,
    Rotation,
}

/// Image metric of a decoded sample reshaped to `side × side` and clamped
/// to `[0, max_intensity]`. A vertical principal axis has no finite slope
/// and counts as a scoring failure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageScore {
    pub metric: ImageMetric,
    pub side: usize,
    pub max_intensity: f64,
}

impl ImageScore {
    fn image(&self, sample: &[f64]) -> Result<ImageGray, PluginError> {
        if sample.len() != self.side * self.side {
            return Err(PluginError::new("sample length is not side²"));
        }
        ImageGray::from_clamped(sample, self.max_intensity).map_err(PluginError::new)
    }
}

impl TrueScore for ImageScore {
    fn score(&self, sample: &[f64]) -> Result<f64, PluginError> {
        let img = self.image(sample)?;
        match self.metric {
            ImageMetric::Thickness => Ok(objectives::thickness(&img)),
            ImageMetric::Aspect => objectives::aspect_ratio(&img).map_err(PluginError::new),
            ImageMetric::Rotation => {
                let r = objectives::rotation(&img).map_err(PluginError::new)?;
                if r.vertical {
                    Err(PluginError::new("vertical principal axis"))
                } else {
                    Ok(r.slope)
                }
            }
        }
    }

    fn as_image(&self, sample: &[f64]) -> Option<ImageGray> {
        self.image(sample).ok()
    }
}

/// Sampling distribution `N(0, b·I)` for candidate points.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridSpec {
    pub count: usize,
    pub b: f64,
    pub seed: u64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.count == 0 {
            return Err(PipelineError::InvalidGrid("count must be at least 1"));
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(PipelineError::InvalidGrid("b must be positive and finite"));
        }
        Ok(())
    }
}

/// `grid.count` i.i.d. draws from `N(0, b·I_dim)`, coordinates drawn in
/// row-major order from a ChaCha8 stream seeded with `grid.seed`.
pub fn sample_grid(grid: &GridSpec, dim: usize) -> Result<Vec<Vec<f64>>, PipelineError> {
    grid.validate()?;
    if dim == 0 {
        return Err(PipelineError::InvalidGrid("dimension must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(grid.seed);
    let scale = sqrt(grid.b);
    Ok((0..grid.count)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Candidate {
    /// Position in the sampled point list.
    pub index: usize,
    pub point: Vec<f64>,
    pub log_density: f64,
    pub predicted_score: Option<f64>,
}

/// Keeps points with `log_density ≥ eta`, in input order.
pub fn filter_by_density<E: Executor>(
    points: &[Vec<f64>],
    evaluator: &DensityEvaluator<'_>,
    eta: f64,
    exec: &E,
) -> Result<Vec<Candidate>, PipelineError> {
    let densities = batch_log_density(evaluator, points, exec)?;
    Ok(points
        .iter()
        .zip(densities)
        .enumerate()
        .filter(|(_, (_, d))| *d >= eta)
        .map(|(index, (p, log_density))| Candidate {
            index,
            point: p.clone(),
            log_density,
            predicted_score: None,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub starts: Vec<Candidate>,
    /// Fewer than `t` candidates were available.
    pub truncated: bool,
}

/// Fills predicted scores and returns the `t` best, by descending score
/// with ties broken by ascending candidate index.
pub fn rank_and_select<P, E>(
    mut candidates: Vec<Candidate>,
    predictor: &P,
    t: usize,
    exec: &E,
) -> Result<Selection, PipelineError>
where
    P: Predictor + ?Sized,
    E: Executor,
{
    if t == 0 {
        return Err(PipelineError::InvalidT);
    }
    if candidates.is_empty() {
        return Err(PipelineError::NoFeasibleStarts {
            sampled: 0,
            eta: f64::NAN,
        });
    }
    let scores = exec.map(candidates.len(), |i| predictor.predict(&candidates[i].point));
    for (c, s) in candidates.iter_mut().zip(scores) {
        let s = s.map_err(|e| PipelineError::Predictor {
            index: c.index,
            message: e.to_string(),
        })?;
        if !s.is_finite() {
            return Err(PipelineError::Predictor {
                index: c.index,
                message: "non-finite predicted score".into(),
            });
        }
        c.predicted_score = Some(s);
    }
    candidates.sort_by(|a, b| {
        let (sa, sb) = (a.predicted_score.unwrap_or(f64::NAN), b.predicted_score.unwrap_or(f64::NAN));
        sb.total_cmp(&sa).then(a.index.cmp(&b.index))
    });
    let truncated = candidates.len() < t;
    candidates.truncate(t);
    Ok(Selection {
        starts: candidates,
        truncated,
    })
}

/// Density, predictor and optimiser settings of a run.
#[derive(Debug, Clone, Copy)]
pub struct RunSettings<'a> {
    pub evaluator: DensityEvaluator<'a>,
    pub eta: f64,
    pub grid: GridSpec,
    pub t: usize,
    pub opt: OptConfig,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StartRecord {
    /// Position in the ranking, 0 for the best predicted candidate.
    pub rank: usize,
    pub candidate_index: usize,
    pub start: Vec<f64>,
    pub start_log_density: f64,
    pub start_predicted_score: f64,
    pub optimum: Vec<f64>,
    pub optimum_log_density: f64,
    pub optimum_predicted_score: f64,
    pub evaluations: usize,
    pub termination: Termination,
    pub decoded: Option<Vec<f64>>,
    pub true_score: Option<f64>,
    pub error: Option<String>,
}

impl StartRecord {
    pub fn decode_ok(&self) -> bool {
        self.decoded.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Aggregates {
    pub median_log_density: f64,
    /// Over starts with a true score; `None` when there are none.
    pub mean_true_score: Option<f64>,
    pub max_true_score: Option<f64>,
    /// Best start by true score, ties to the lower rank.
    pub best_rank: Option<usize>,
    pub valid_fraction: f64,
    /// Over image-valued decodes; `None` for fewer than two images.
    pub diversity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ColdRunReport {
    pub eta: f64,
    pub grid: GridSpec,
    pub t: usize,
    pub sampled: usize,
    pub feasible: usize,
    pub truncated: bool,
    pub all_decodes_failed: bool,
    pub starts: Vec<StartRecord>,
    pub aggregates: Aggregates,
}

/// Median with the mean of the two central values for even counts.
/// Returns NaN for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Recomputes the report aggregates from per-start records.
pub fn aggregate<T: TrueScore + ?Sized>(starts: &[StartRecord], true_score: &T) -> Aggregates {
    let densities: Vec<f64> = starts.iter().map(|s| s.optimum_log_density).collect();
    let scored: Vec<(usize, f64)> = starts.iter().filter_map(|s| s.true_score.map(|v| (s.rank, v))).collect();
    let mean_true_score = (!scored.is_empty()).then(|| scored.iter().map(|(_, v)| v).sum::<f64>() / scored.len() as f64);
    let best = scored
        .iter()
        .copied()
        .reduce(|best, cur| if cur.1 > best.1 { cur } else { best });
    let valid = starts.iter().filter(|s| s.decode_ok()).count();
    let images: Vec<ImageGray> = starts
        .iter()
        .filter_map(|s| s.decoded.as_deref().and_then(|d| true_score.as_image(d)))
        .collect();
    let diversity = if images.len() >= 2 {
        objectives::diversity(&images).ok()
    } else {
        None
    };
    Aggregates {
        median_log_density: median(&densities),
        mean_true_score,
        max_true_score: best.map(|b| b.1),
        best_rank: best.map(|b| b.0),
        valid_fraction: if starts.is_empty() {
            0.0
        } else {
            valid as f64 / starts.len() as f64
        },
        diversity,
    }
}

/// Runs one constrained maximisation of the predictor from `start`.
pub fn optimize_start<P: Predictor + ?Sized>(
    evaluator: &DensityEvaluator<'_>,
    predictor: &P,
    eta: f64,
    start: &[f64],
    config: &OptConfig,
) -> Result<crate::optimizer::OptResult, OptError> {
    let scratch = RefCell::new(evaluator.new_scratch());
    maximize_constrained(
        |g| predictor.predict(g).unwrap_or(f64::NAN),
        |g| {
            evaluator
                .log_density_with(&mut scratch.borrow_mut(), g)
                .unwrap_or(f64::NAN)
        },
        eta,
        start,
        config,
    )
}

/// Sample, filter, rank, optimise, decode and score.
///
/// Decode and scoring failures are recorded per start. Optimiser failures
/// abort the run.
pub fn run_cold<P, D, T, E>(
    settings: &RunSettings<'_>,
    predictor: &P,
    decoder: &D,
    true_score: &T,
    exec: &E,
) -> Result<ColdRunReport, PipelineError>
where
    P: Predictor + ?Sized,
    D: Decoder + ?Sized,
    T: TrueScore + ?Sized,
    E: Executor,
{
    let dim = settings.evaluator.model().dim();
    if predictor.input_dim() != dim {
        return Err(PipelineError::DimensionMismatch {
            expected: predictor.input_dim(),
            got: dim,
        });
    }
    if settings.t == 0 {
        return Err(PipelineError::InvalidT);
    }
    let points = sample_grid(&settings.grid, dim)?;
    let candidates = filter_by_density(&points, &settings.evaluator, settings.eta, exec)?;
    let feasible = candidates.len();
    if feasible == 0 {
        return Err(PipelineError::NoFeasibleStarts {
            sampled: points.len(),
            eta: settings.eta,
        });
    }
    let selection = rank_and_select(candidates, predictor, settings.t, exec)?;
    let starts = &selection.starts;

    let runs = exec.map(starts.len(), |rank| {
        let c = &starts[rank];
        let result = optimize_start(&settings.evaluator, predictor, settings.eta, &c.point, &settings.opt)
            .map_err(|source| PipelineError::Optimizer { rank, source })?;
        let optimum_log_density = settings.evaluator.log_density(&result.point)?;
        let (decoded, true_value, error) = match decoder.decode(&result.point) {
            Err(e) => (None, None, Some(e.0)),
            Ok(sample) => match true_score.score(&sample) {
                Ok(v) if v.is_finite() => (Some(sample), Some(v), None),
                Ok(_) => (Some(sample), None, Some("non-finite true score".into())),
                Err(e) => (Some(sample), None, Some(e.0)),
            },
        };
        Ok(StartRecord {
            rank,
            candidate_index: c.index,
            start: c.point.clone(),
            start_log_density: c.log_density,
            start_predicted_score: c.predicted_score.unwrap_or(f64::NAN),
            optimum: result.point,
            optimum_log_density,
            optimum_predicted_score: result.objective,
            evaluations: result.evaluations,
            termination: result.termination,
            decoded,
            true_score: true_value,
            error,
        })
    });
    let records = runs.into_iter().collect::<Result<Vec<_>, PipelineError>>()?;
    let aggregates = aggregate(&records, true_score);
    Ok(ColdRunReport {
        eta: settings.eta,
        grid: settings.grid,
        t: settings.t,
        sampled: points.len(),
        feasible,
        truncated: selection.truncated,
        all_decodes_failed: records.iter().all(|r| !r.decode_ok()),
        starts: records,
        aggregates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AccuracyRow {
    pub k: usize,
    pub approx_mean: f64,
    pub exact_mean: f64,
}

/// Mean approximate and exact log-density over `points` for each `k`.
///
/// Each point is queried once for `max(ks)` neighbours with beam
/// `max(ef_search, max(ks))`; the rows use prefixes of that list, so the
/// neighbour sets are nested and `approx_mean` is nondecreasing in `k`.
/// Rows follow the order of `ks`.
pub fn knn_accuracy_study<P, E>(
    model: &DensityModel,
    index: &KnnIndex,
    points: &[P],
    ks: &[usize],
    ef_search: usize,
    exec: &E,
) -> Result<Vec<AccuracyRow>, PipelineError>
where
    P: AsRef<[f64]> + Sync,
    E: Executor,
{
    let n = model.len();
    if ks.is_empty() || ks.iter().any(|&k| k == 0 || k > n) {
        return Err(PipelineError::BadKs { n });
    }
    let k_max = *ks.iter().max().expect("nonempty");
    let ef = ef_search.max(k_max);
    // validates checksum and length
    DensityEvaluator::new(
        model,
        crate::density::DensityMode::Knn {
            index,
            k: k_max,
            ef_search: ef,
        },
    )?;
    let mut order: Vec<usize> = (0..ks.len()).collect();
    order.sort_by_key(|&i| ks[i]);

    let per_point = exec.map_init(
        points.len(),
        || crate::knn_index::SearchScratch::new(index.len()),
        |scratch, p| -> Result<(Vec<f64>, f64), DensityError> {
            let g = points[p].as_ref();
            let exact = model.exact_log_density(g)?;
            let neighbors = index.query_with(scratch, g, k_max, ef)?;
            let mut acc = LogSumExp::new();
            let mut approx = alloc::vec![0.0; ks.len()];
            let mut next = 0;
            for (count, nb) in neighbors.iter().enumerate() {
                acc.push(model.component_log_density(nb.id, g)?);
                while next < order.len() && ks[order[next]] == count + 1 {
                    approx[order[next]] = acc.value() - crate::math::ln(n as f64);
                    next += 1;
                }
            }
            Ok((approx, exact))
        },
    );
    let mut sums = alloc::vec![0.0; ks.len()];
    let mut exact_sum = 0.0;
    for (p, r) in per_point.into_iter().enumerate() {
        let (approx, exact) = r.map_err(|e| DensityError::AtPoint {
            index: p,
            source: alloc::boxed::Box::new(e),
        })?;
        for (s, a) in sums.iter_mut().zip(approx) {
            *s += a;
        }
        exact_sum += exact;
    }
    let count = points.len() as f64;
    Ok(ks
        .iter()
        .zip(sums)
        .map(|(&k, s)| AccuracyRow {
            k,
            approx_mean: s / count,
            exact_mean: exact_sum / count,
        })
        .collect())
}
