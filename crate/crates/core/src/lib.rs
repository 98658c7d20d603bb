//! Constrained latent-space optimisation under a Gaussian-mixture density
//! of training encodings.
//!
//! The crate is `no_std` and needs only `alloc`. Parallelism is injected
//! through [`exec::Executor`].

#![no_std]
// index loops mirror the linear-algebra notation; negated comparisons reject NaN
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]
extern crate alloc;

pub mod density;
pub mod exec;
pub mod knn_index;
pub mod linalg;
pub mod math;
pub mod model;
pub mod objectives;
pub mod optimizer;
pub mod pipeline;

pub use density::{build_density_model, DensityError, DensityEvaluator, DensityMode, DensityModel};
pub use exec::{Executor, Sequential};
pub use knn_index::{build_index, HnswParams, KnnError, KnnIndex, Neighbor};
pub use linalg::Matrix;
pub use model::{Activation, Layer, MlpPredictor, ModelError, ToyPvae};
pub use objectives::{ImageGray, ObjectiveError};
pub use optimizer::{maximize_constrained, minimize_cobyla, OptConfig, OptError, OptResult, Termination};
pub use pipeline::{
    knn_accuracy_study, run_cold, sample_grid, ColdRunReport, Decoder, GridSpec, PipelineError, Predictor, RunSettings,
    TrueScore,
};
