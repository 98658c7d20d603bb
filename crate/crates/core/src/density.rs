//! Log-density of the uniformly weighted diagonal-Gaussian mixture built
//! from per-datapoint encoding distributions.
//!
//! Component log-densities use the sum over dimensions in the quadratic
//! term and the `D/2 · log 2π` normaliser:
//!
//! ```text
//! log p_i(g) = -½ Σ_d (g_d − μ_id)² / σ²_id − (D/2) log 2π − ½ Σ_d log σ²_id
//! ```
//!
//! The mixture value is a log-sum-exp over components shifted by the
//! largest term, minus `log N`. Restricting the sum to the `k` components
//! whose means are closest to `g` gives the k-NN approximation, which is a
//! lower bound of the exact value and equal to it at `k = N`.

use alloc::vec::Vec;

use crate::exec::Executor;
use crate::knn_index::{self, KnnError, KnnIndex, SearchScratch};
use crate::math::{ln, LogSumExp, LN_2PI};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DensityError {
    #[error("no encodings supplied")]
    Empty,
    #[error("encodings have zero dimensions")]
    ZeroDimension,
    #[error("encoding {index} has dimension {got}, expected {expected}")]
    MixedDimensions {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("encoding {index}: variance in dimension {dim} is not strictly positive and finite")]
    BadVariance { index: usize, dim: usize },
    #[error("encoding {index}: non-finite mean")]
    NonFiniteMean { index: usize },
    #[error("point has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("k = {k} outside [1, {n}]")]
    KOutOfRange { k: usize, n: usize },
    #[error("index was built over different means (checksum {index:#018x} vs model {model:#018x})")]
    IndexMismatch { index: u64, model: u64 },
    #[error("point {index}: {source}")]
    AtPoint {
        index: usize,
        #[source]
        source: alloc::boxed::Box<DensityError>,
    },
    #[error(transparent)]
    Knn(#[from] KnnError),
}

/// Diagonal Gaussian: one training point's encoding distribution.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GaussianComponent {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
}

impl GaussianComponent {
    pub fn new(mu: Vec<f64>, var: Vec<f64>) -> Self {
        Self { mu, var }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `−(D/2) log 2π − ½ Σ_d log σ²_d`.
    pub fn log_normalizer(&self) -> f64 {
        -0.5 * self.dim() as f64 * LN_2PI - 0.5 * self.var.iter().map(|&v| ln(v)).sum::<f64>()
    }
}

/// Log-density of a single component at `g`.
pub fn log_component_density(c: &GaussianComponent, g: &[f64]) -> Result<f64, DensityError> {
    if g.len() != c.dim() {
        return Err(DensityError::DimensionMismatch {
            expected: c.dim(),
            got: g.len(),
        });
    }
    let quad: f64 = g
        .iter()
        .zip(c.mu.iter().zip(&c.var))
        .map(|(x, (m, v))| (x - m) * (x - m) / v)
        .sum();
    Ok(-0.5 * quad + c.log_normalizer())
}

/// Uniform mixture over `N ≥ 1` components of a shared dimension `D`.
///
/// Means and inverse variances are stored flat for cache-friendly scans.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityModel {
    dim: usize,
    means: Vec<f64>,
    vars: Vec<f64>,
    inv_vars: Vec<f64>,
    log_norms: Vec<f64>,
    checksum: u64,
}

impl DensityModel {
    /// One component per encoding `(mu, var)`; duplicates are kept.
    pub fn build<M, V>(encodings: &[(M, V)]) -> Result<Self, DensityError>
    where
        M: AsRef<[f64]>,
        V: AsRef<[f64]>,
    {
        let dim = encodings.first().ok_or(DensityError::Empty)?.0.as_ref().len();
        if dim == 0 {
            return Err(DensityError::ZeroDimension);
        }
        let n = encodings.len();
        let mut means = Vec::with_capacity(n * dim);
        let mut vars = Vec::with_capacity(n * dim);
        for (index, (mu, var)) in encodings.iter().enumerate() {
            let (mu, var) = (mu.as_ref(), var.as_ref());
            for got in [mu.len(), var.len()] {
                if got != dim {
                    return Err(DensityError::MixedDimensions {
                        index,
                        expected: dim,
                        got,
                    });
                }
            }
            if !mu.iter().all(|m| m.is_finite()) {
                return Err(DensityError::NonFiniteMean { index });
            }
            if let Some(d) = var.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(DensityError::BadVariance { index, dim: d });
            }
            means.extend_from_slice(mu);
            vars.extend_from_slice(var);
        }
        let inv_vars = vars.iter().map(|v| 1.0 / v).collect();
        let log_norms = vars
            .chunks_exact(dim)
            .map(|var| -0.5 * dim as f64 * LN_2PI - 0.5 * var.iter().map(|&v| ln(v)).sum::<f64>())
            .collect();
        let checksum = knn_index::means_checksum(&means, n, dim);
        Ok(Self {
            dim,
            means,
            vars,
            inv_vars,
            log_norms,
            checksum,
        })
    }

    pub fn from_components(components: &[GaussianComponent]) -> Result<Self, DensityError> {
        let pairs: Vec<(&[f64], &[f64])> = components
            .iter()
            .map(|c| (c.mu.as_slice(), c.var.as_slice()))
            .collect();
        Self::build(&pairs)
    }

    pub fn len(&self) -> usize {
        self.log_norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_norms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Flat row-major `N × D` means.
    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn mean(&self, i: usize) -> &[f64] {
        &self.means[i * self.dim..(i + 1) * self.dim]
    }

    pub fn variance(&self, i: usize) -> &[f64] {
        &self.vars[i * self.dim..(i + 1) * self.dim]
    }

    pub fn component(&self, i: usize) -> GaussianComponent {
        GaussianComponent::new(self.mean(i).to_vec(), self.variance(i).to_vec())
    }

    pub fn log_normalizers(&self) -> &[f64] {
        &self.log_norms
    }

    /// Checksum of the component means, shared with [`KnnIndex`].
    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    fn check_point(&self, g: &[f64]) -> Result<(), DensityError> {
        if g.len() == self.dim {
            Ok(())
        } else {
            Err(DensityError::DimensionMismatch {
                expected: self.dim,
                got: g.len(),
            })
        }
    }

    #[inline]
    fn component_log_density_unchecked(&self, i: usize, g: &[f64]) -> f64 {
        let d = self.dim;
        let mu = &self.means[i * d..(i + 1) * d];
        let iv = &self.inv_vars[i * d..(i + 1) * d];
        let mut quad = 0.0;
        for j in 0..d {
            let diff = g[j] - mu[j];
            quad += diff * diff * iv[j];
        }
        -0.5 * quad + self.log_norms[i]
    }

    /// Log-density of component `i` at `g`.
    pub fn component_log_density(&self, i: usize, g: &[f64]) -> Result<f64, DensityError> {
        self.check_point(g)?;
        Ok(self.component_log_density_unchecked(i, g))
    }

    /// Mixture log-density restricted to the given components.
    fn log_density_over<I: IntoIterator<Item = usize>>(&self, g: &[f64], ids: I) -> f64 {
        let mut acc = LogSumExp::new();
        for i in ids {
            acc.push(self.component_log_density_unchecked(i, g));
        }
        acc.value() - ln(self.len() as f64)
    }

    /// Exact `log((1/N) Σ_i p_i(g))`.
    pub fn exact_log_density(&self, g: &[f64]) -> Result<f64, DensityError> {
        self.check_point(g)?;
        Ok(self.log_density_over(g, 0..self.len()))
    }

    fn check_k(&self, k: usize) -> Result<(), DensityError> {
        if k >= 1 && k <= self.len() {
            Ok(())
        } else {
            Err(DensityError::KOutOfRange { k, n: self.len() })
        }
    }

    fn check_index(&self, index: &KnnIndex) -> Result<(), DensityError> {
        if index.len() != self.len() || index.checksum() != self.checksum {
            return Err(DensityError::IndexMismatch {
                index: index.checksum(),
                model: self.checksum,
            });
        }
        Ok(())
    }

    /// k-NN approximation using the HNSW index to find the `k` components
    /// whose means are nearest `g`. The beam width is `max(ef_search, k)`.
    pub fn approx_log_density(
        &self,
        index: &KnnIndex,
        g: &[f64],
        k: usize,
        ef_search: usize,
    ) -> Result<f64, DensityError> {
        let mut scratch = SearchScratch::new(index.len());
        self.approx_log_density_with(index, &mut scratch, g, k, ef_search)
    }

    pub fn approx_log_density_with(
        &self,
        index: &KnnIndex,
        scratch: &mut SearchScratch,
        g: &[f64],
        k: usize,
        ef_search: usize,
    ) -> Result<f64, DensityError> {
        self.check_point(g)?;
        self.check_k(k)?;
        self.check_index(index)?;
        let hits = index.query_with(scratch, g, k, ef_search.max(k))?;
        Ok(self.log_density_over(g, hits.iter().map(|h| h.id)))
    }

    /// k-NN density with exact neighbours from a full scan. Neighbour sets
    /// are nested in `k`, so the value is nondecreasing in `k`.
    pub fn knn_log_density_exact_neighbors(&self, g: &[f64], k: usize) -> Result<f64, DensityError> {
        self.check_point(g)?;
        self.check_k(k)?;
        let hits = knn_index::brute_force_knn(&self.means, self.dim, g, k)?;
        Ok(self.log_density_over(g, hits.iter().map(|h| h.id)))
    }
}

/// Free-function form of [`DensityModel::build`].
pub fn build_density_model<M, V>(encodings: &[(M, V)]) -> Result<DensityModel, DensityError>
where
    M: AsRef<[f64]>,
    V: AsRef<[f64]>,
{
    DensityModel::build(encodings)
}

/// How a mixture log-density is evaluated.
#[derive(Debug, Clone, Copy)]
pub enum DensityMode<'a> {
    Exact,
    /// HNSW neighbours; beam width `max(ef_search, k)`.
    Knn {
        index: &'a KnnIndex,
        k: usize,
        ef_search: usize,
    },
    /// Exact neighbours from a full scan over the means.
    KnnExactNeighbors { k: usize },
}

/// Density evaluator binding a model to a mode; validated on construction.
#[derive(Debug, Clone, Copy)]
pub struct DensityEvaluator<'a> {
    model: &'a DensityModel,
    mode: DensityMode<'a>,
}

impl<'a> DensityEvaluator<'a> {
    pub fn new(model: &'a DensityModel, mode: DensityMode<'a>) -> Result<Self, DensityError> {
        match mode {
            DensityMode::Exact => {}
            DensityMode::Knn { index, k, .. } => {
                model.check_k(k)?;
                model.check_index(index)?;
            }
            DensityMode::KnnExactNeighbors { k } => model.check_k(k)?,
        }
        Ok(Self { model, mode })
    }

    pub fn model(&self) -> &'a DensityModel {
        self.model
    }

    pub fn mode(&self) -> DensityMode<'a> {
        self.mode
    }

    pub fn new_scratch(&self) -> SearchScratch {
        match self.mode {
            DensityMode::Knn { index, .. } => SearchScratch::new(index.len()),
            _ => SearchScratch::new(0),
        }
    }

    pub fn log_density_with(&self, scratch: &mut SearchScratch, g: &[f64]) -> Result<f64, DensityError> {
        match self.mode {
            DensityMode::Exact => self.model.exact_log_density(g),
            DensityMode::Knn { index, k, ef_search } => {
                self.model.approx_log_density_with(index, scratch, g, k, ef_search)
            }
            DensityMode::KnnExactNeighbors { k } => self.model.knn_log_density_exact_neighbors(g, k),
        }
    }

    pub fn log_density(&self, g: &[f64]) -> Result<f64, DensityError> {
        let mut scratch = self.new_scratch();
        self.log_density_with(&mut scratch, g)
    }
}

/// Evaluates the log-density at every point, preserving input order.
/// The first failing point is reported with its index.
pub fn batch_log_density<P, E>(
    evaluator: &DensityEvaluator<'_>,
    points: &[P],
    exec: &E,
) -> Result<Vec<f64>, DensityError>
where
    P: AsRef<[f64]> + Sync,
    E: Executor,
{
    let results = exec.map_init(
        points.len(),
        || evaluator.new_scratch(),
        |scratch, i| evaluator.log_density_with(scratch, points[i].as_ref()),
    );
    results
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|e| DensityError::AtPoint {
                index,
                source: alloc::boxed::Box::new(e),
            })
        })
        .collect()
}
