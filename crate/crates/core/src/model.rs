//! Toy linear-Gaussian predictive VAE and a general MLP predictor.
//!
//! The toy model has an affine encoder with a learned per-dimension log
//! variance, an affine decoder, and a linear predictor on the latent code.
//! It exists so the joint reconstruction/KL/prediction loss and the whole
//! optimisation pipeline can run without a deep-learning stack.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::Matrix;
use crate::math::{dot, exp, ln};

/// Default weight on the negative ELBO in the combined loss.
pub const DEFAULT_BETA: f64 = 0.00005;

/// Bound applied to every encoder log variance.
pub const LOGVAR_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("variance at index {index} is not strictly positive")]
    NonPositiveVariance { index: usize },
    #[error("non-finite value in {what}")]
    NonFinite { what: String },
    #[error("beta must lie in [0, 1], got {0}")]
    InvalidBeta(f64),
    #[error("layer {layer} does not compose: {reason}")]
    LayerShape { layer: usize, reason: &'static str },
    #[error("predictor has no layers")]
    EmptyPredictor,
    #[error("training set is empty")]
    EmptyDataset,
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), ModelError> {
    if expected == got {
        Ok(())
    } else {
        Err(ModelError::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}

fn check_finite(what: &str, values: &[f64]) -> Result<(), ModelError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite { what: what.into() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    /// Sigmoid saturates at the representable values nearest to 0 and 1 so
    /// its output stays inside the open unit interval.
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::Sigmoid => {
                let s = if x >= 0.0 {
                    1.0 / (1.0 + exp(-x))
                } else {
                    let e = exp(x);
                    e / (1.0 + e)
                };
                s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Fully connected feed-forward predictor `f(z)` with a scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpPredictor {
    layers: Vec<Layer>,
}

impl MlpPredictor {
    /// Validates that consecutive layer shapes compose and that the final
    /// layer has a single output.
    pub fn new(layers: Vec<Layer>) -> Result<Self, ModelError> {
        if layers.is_empty() {
            return Err(ModelError::EmptyPredictor);
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.weight.rows() {
                return Err(ModelError::LayerShape {
                    layer: i,
                    reason: "bias length differs from weight rows",
                });
            }
            if i > 0 && layers[i - 1].weight.rows() != layer.weight.cols() {
                return Err(ModelError::LayerShape {
                    layer: i,
                    reason: "input width differs from previous layer output",
                });
            }
            if !layer.weight.as_slice().iter().chain(&layer.bias).all(|v| v.is_finite()) {
                return Err(ModelError::NonFinite {
                    what: alloc::format!("layer {i} parameters"),
                });
            }
        }
        if layers[layers.len() - 1].weight.rows() != 1 {
            return Err(ModelError::LayerShape {
                layer: layers.len() - 1,
                reason: "final layer must have exactly one output",
            });
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn predict(&self, z: &[f64]) -> Result<f64, ModelError> {
        check_len("predictor input", self.input_dim(), z.len())?;
        let mut h = z.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = layer.weight.mul_vec(&h);
            for (v, b) in next.iter_mut().zip(&layer.bias) {
                *v = layer.activation.apply(*v + b);
            }
            if !next.iter().all(|v| v.is_finite()) {
                return Err(ModelError::NonFinite {
                    what: alloc::format!("layer {i} output"),
                });
            }
            h = next;
        }
        Ok(h[0])
    }
}

/// Parts of the combined loss for one data point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub recon: f64,
    pub kl: f64,
    pub pred_sq_err: f64,
    pub total: f64,
}

/// `KL(N(mu, diag var) || N(0, I))`.
pub fn kl_to_standard_normal(mu: &[f64], var: &[f64]) -> Result<f64, ModelError> {
    check_len("variance vector", mu.len(), var.len())?;
    let mut kl = 0.0;
    for (d, (&m, &v)) in mu.iter().zip(var).enumerate() {
        if !(v > 0.0) {
            return Err(ModelError::NonPositiveVariance { index: d });
        }
        kl += v + m * m - 1.0 - ln(v);
    }
    // rounding can leave a tiny negative residue near the minimum
    Ok((0.5 * kl).max(0.0))
}

/// Affine encoder/decoder pair with a linear latent predictor.
///
/// Parameters are laid out in [`ToyPvae::parameters`] order: encoder
/// weight (row-major), encoder bias, encoder log variance, decoder weight
/// (row-major), decoder bias, predictor weight, predictor bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPvae {
    enc_weight: Matrix,
    enc_bias: Vec<f64>,
    enc_logvar: Vec<f64>,
    dec_weight: Matrix,
    dec_bias: Vec<f64>,
    pred_weight: Vec<f64>,
    pred_bias: f64,
}

/// Gradient of the combined loss, shaped like [`ToyPvae`].
pub type ToyPvaeGradient = ToyPvae;

impl ToyPvae {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        enc_weight: Matrix,
        enc_bias: Vec<f64>,
        enc_logvar: Vec<f64>,
        dec_weight: Matrix,
        dec_bias: Vec<f64>,
        pred_weight: Vec<f64>,
        pred_bias: f64,
    ) -> Result<Self, ModelError> {
        let d_latent = enc_weight.rows();
        let d_data = enc_weight.cols();
        check_len("encoder bias", d_latent, enc_bias.len())?;
        check_len("encoder log variance", d_latent, enc_logvar.len())?;
        check_len("decoder weight rows", d_data, dec_weight.rows())?;
        check_len("decoder weight cols", d_latent, dec_weight.cols())?;
        check_len("decoder bias", d_data, dec_bias.len())?;
        check_len("predictor weight", d_latent, pred_weight.len())?;
        let model = Self {
            enc_weight,
            enc_bias,
            enc_logvar: enc_logvar
                .into_iter()
                .map(|v| v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP))
                .collect(),
            dec_weight,
            dec_bias,
            pred_weight,
            pred_bias,
        };
        check_finite("model parameters", &model.parameters())?;
        Ok(model)
    }

    pub fn zeros(d_data: usize, d_latent: usize) -> Self {
        Self {
            enc_weight: Matrix::zeros(d_latent, d_data),
            enc_bias: vec![0.0; d_latent],
            enc_logvar: vec![0.0; d_latent],
            dec_weight: Matrix::zeros(d_data, d_latent),
            dec_bias: vec![0.0; d_data],
            pred_weight: vec![0.0; d_latent],
            pred_bias: 0.0,
        }
    }

    /// Weights and biases drawn i.i.d. from `N(0, scale²)`, log variances 0.
    pub fn random(d_data: usize, d_latent: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::zeros(d_data, d_latent);
        let mut params = model.parameters();
        let logvar = model.logvar_range();
        for (i, p) in params.iter_mut().enumerate() {
            if !logvar.contains(&i) {
                let r: f64 = StandardNormal.sample(&mut rng);
                *p = scale * r;
            }
        }
        model.set_parameters(&params);
        model
    }

    pub fn data_dim(&self) -> usize {
        self.enc_weight.cols()
    }

    pub fn latent_dim(&self) -> usize {
        self.enc_weight.rows()
    }

    pub fn enc_weight(&self) -> &Matrix {
        &self.enc_weight
    }

    pub fn enc_bias(&self) -> &[f64] {
        &self.enc_bias
    }

    pub fn enc_logvar(&self) -> &[f64] {
        &self.enc_logvar
    }

    pub fn dec_weight(&self) -> &Matrix {
        &self.dec_weight
    }

    pub fn dec_bias(&self) -> &[f64] {
        &self.dec_bias
    }

    pub fn pred_weight(&self) -> &[f64] {
        &self.pred_weight
    }

    pub fn pred_bias(&self) -> f64 {
        self.pred_bias
    }

    pub fn num_parameters(&self) -> usize {
        let (dd, dl) = (self.data_dim(), self.latent_dim());
        2 * dd * dl + 3 * dl + dd + 1
    }

    fn logvar_range(&self) -> core::ops::Range<usize> {
        let start = self.enc_weight.as_slice().len() + self.enc_bias.len();
        start..start + self.enc_logvar.len()
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_parameters());
        p.extend_from_slice(self.enc_weight.as_slice());
        p.extend_from_slice(&self.enc_bias);
        p.extend_from_slice(&self.enc_logvar);
        p.extend_from_slice(self.dec_weight.as_slice());
        p.extend_from_slice(&self.dec_bias);
        p.extend_from_slice(&self.pred_weight);
        p.push(self.pred_bias);
        p
    }

    /// Overwrites all parameters from a flat slice in [`parameters`] order.
    /// Log variances are clamped.
    ///
    /// Panics if `params.len() != self.num_parameters()`.
    ///
    /// [`parameters`]: ToyPvae::parameters
    pub fn set_parameters(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_parameters(), "parameter count");
        let mut rest = params;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        take(self.enc_weight.as_mut_slice());
        take(&mut self.enc_bias);
        take(&mut self.enc_logvar);
        take(self.dec_weight.as_mut_slice());
        take(&mut self.dec_bias);
        take(&mut self.pred_weight);
        let mut b = [0.0];
        take(&mut b);
        self.pred_bias = b[0];
        for v in &mut self.enc_logvar {
            *v = v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP);
        }
    }

    /// Encoding distribution `q(z|x) = N(mu, diag var)`.
    pub fn encode(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        check_len("data vector", self.data_dim(), x.len())?;
        let mut mu = self.enc_weight.mul_vec(x);
        for (m, b) in mu.iter_mut().zip(&self.enc_bias) {
            *m += b;
        }
        let var = self.enc_logvar.iter().map(|&lv| exp(lv)).collect();
        Ok((mu, var))
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>, ModelError> {
        check_len("latent vector", self.latent_dim(), z.len())?;
        let mut x = self.dec_weight.mul_vec(z);
        for (v, b) in x.iter_mut().zip(&self.dec_bias) {
            *v += b;
        }
        Ok(x)
    }

    /// Linear latent predictor `f(z) = pred_weight · z + pred_bias`.
    pub fn predict(&self, z: &[f64]) -> Result<f64, ModelError> {
        check_len("latent vector", self.latent_dim(), z.len())?;
        Ok(dot(&self.pred_weight, z) + self.pred_bias)
    }

    /// The predictor as a one-layer identity-activation [`MlpPredictor`].
    pub fn predictor_as_mlp(&self) -> MlpPredictor {
        let weight = Matrix::from_row_major(1, self.latent_dim(), self.pred_weight.clone())
            .expect("shape");
        MlpPredictor::new(vec![Layer {
            weight,
            bias: vec![self.pred_bias],
            activation: Activation::Identity,
        }])
        .expect("single linear layer always composes")
    }

    /// Combined loss `beta·(recon + kl) + (1 − beta)·(w − f(z))²` with a
    /// unit-variance Gaussian decoder (constant dropped).
    pub fn pvae_loss(
        &self,
        x: &[f64],
        w: f64,
        z_sample: &[f64],
        beta: f64,
    ) -> Result<LossBreakdown, ModelError> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(ModelError::InvalidBeta(beta));
        }
        let (mu, var) = self.encode(x)?;
        let x_hat = self.decode(z_sample)?;
        let recon = 0.5
            * x.iter()
                .zip(&x_hat)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        let kl = kl_to_standard_normal(&mu, &var)?;
        let e = w - self.predict(z_sample)?;
        let pred_sq_err = e * e;
        Ok(LossBreakdown {
            recon,
            kl,
            pred_sq_err,
            total: beta * (recon + kl) + (1.0 - beta) * pred_sq_err,
        })
    }

    /// Loss of the deterministic `z = mu` variant.
    pub fn deterministic_loss(&self, x: &[f64], w: f64, beta: f64) -> Result<LossBreakdown, ModelError> {
        let (mu, _) = self.encode(x)?;
        self.pvae_loss(x, w, &mu, beta)
    }

    /// Analytic gradient of [`deterministic_loss`](ToyPvae::deterministic_loss)
    /// with respect to every parameter.
    pub fn pvae_loss_grad(&self, x: &[f64], w: f64, beta: f64) -> Result<ToyPvaeGradient, ModelError> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(ModelError::InvalidBeta(beta));
        }
        let (z, var) = self.encode(x)?;
        let x_hat = self.decode(&z)?;
        let resid: Vec<f64> = x.iter().zip(&x_hat).map(|(a, b)| a - b).collect();
        let e = w - self.predict(&z)?;
        let pred_coef = -2.0 * (1.0 - beta) * e;

        // dL/dz: decoder path, KL mean term, predictor path
        let back = self.dec_weight.mul_transpose_vec(&resid);
        let dz: Vec<f64> = (0..self.latent_dim())
            .map(|j| beta * (z[j] - back[j]) + pred_coef * self.pred_weight[j])
            .collect();

        let mut g = Self::zeros(self.data_dim(), self.latent_dim());
        for j in 0..self.latent_dim() {
            for i in 0..self.data_dim() {
                g.enc_weight[(j, i)] = dz[j] * x[i];
            }
        }
        g.enc_bias.copy_from_slice(&dz);
        for (gl, v) in g.enc_logvar.iter_mut().zip(&var) {
            *gl = 0.5 * beta * (v - 1.0);
        }
        for i in 0..self.data_dim() {
            for j in 0..self.latent_dim() {
                g.dec_weight[(i, j)] = -beta * resid[i] * z[j];
            }
            g.dec_bias[i] = -beta * resid[i];
        }
        for j in 0..self.latent_dim() {
            g.pred_weight[j] = pred_coef * z[j];
        }
        g.pred_bias = pred_coef;
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub latent_dim: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub beta: f64,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            steps: 2000,
            learning_rate: 0.01,
            beta: DEFAULT_BETA,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

/// Mean deterministic loss over a dataset.
pub fn dataset_loss(model: &ToyPvae, data: &[(Vec<f64>, f64)], beta: f64) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for (x, w) in data {
        total += model.deterministic_loss(x, *w, beta)?.total;
    }
    Ok(total / data.len() as f64)
}

/// Full-batch gradient descent on the deterministic `z = mu` loss.
///
/// Returns the lowest-loss parameters visited, so the result is never worse
/// than the seeded initialisation.
pub fn toy_train(data: &[(Vec<f64>, f64)], config: &TrainConfig) -> Result<ToyPvae, ModelError> {
    let d_data = data.first().ok_or(ModelError::EmptyDataset)?.0.len();
    for (x, _) in data {
        check_len("training vector", d_data, x.len())?;
    }
    let mut model = ToyPvae::random(d_data, config.latent_dim, config.init_scale, config.seed);
    let mut best = model.clone();
    let mut best_loss = dataset_loss(&model, data, config.beta)?;
    if !best_loss.is_finite() {
        return Err(ModelError::Diverged { step: 0 });
    }
    let n = data.len() as f64;
    let mut params = model.parameters();
    for step in 1..=config.steps {
        let mut grad = vec![0.0; params.len()];
        for (x, w) in data {
            let g = model.pvae_loss_grad(x, *w, config.beta)?.parameters();
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b / n;
            }
        }
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= config.learning_rate * g;
        }
        model.set_parameters(&params);
        params = model.parameters();
        let loss = dataset_loss(&model, data, config.beta)?;
        if !loss.is_finite() {
            return Err(ModelError::Diverged { step });
        }
        if loss < best_loss {
            best_loss = loss;
            best = model.clone();
        }
    }
    Ok(best)
}
