//! Variational autoencoder over attribute IRs.
//!
//! Each attribute IR is encoded independently by one shared encoder into a
//! diagonal Gaussian `N(μ, σ²)`; a tuple is represented by its `m` Gaussians.

mod io;
mod train;

pub use io::{load_model, load_model_for, save_model, MODEL_FORMAT, MODEL_FORMAT_VERSION};
pub use train::{train_vae, vae_loss, vae_loss_and_grads, TrainReport, VaeConfig, VaeGrads};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMutD, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::{IrMatrix, IrVector};
use crate::nnkit::{Activation, DenseCache, DenseGrads, DenseLayer, Gradients, Mlp, Trainable};

pub const DEFAULT_HIDDEN_DIM: usize = 200;
pub const DEFAULT_LATENT_DIM: usize = 100;

/// Shared encoder: a ReLU trunk followed by linear mean and log-variance
/// heads. IRs are multiplied by `input_scale` before the trunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub input_scale: f64,
    pub trunk: DenseLayer,
    pub mean: DenseLayer,
    pub log_var: DenseLayer,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    trunk: DenseCache,
    mean: DenseCache,
    log_var: DenseCache,
    sigma: Array2<f64>,
}

impl EncoderCache {
    pub fn mu(&self) -> &Array2<f64> {
        self.mean.output()
    }

    pub fn sigma(&self) -> &Array2<f64> {
        &self.sigma
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub trunk: DenseGrads,
    pub mean: DenseGrads,
    pub log_var: DenseGrads,
}

impl EncoderGrads {
    pub fn zeros_like(enc: &Encoder) -> Self {
        EncoderGrads {
            trunk: DenseGrads::zeros_like(&enc.trunk),
            mean: DenseGrads::zeros_like(&enc.mean),
            log_var: DenseGrads::zeros_like(&enc.log_var),
        }
    }

    pub fn accumulate(&mut self, other: &EncoderGrads) {
        self.trunk.accumulate(&other.trunk);
        self.mean.accumulate(&other.mean);
        self.log_var.accumulate(&other.log_var);
    }

    pub fn into_gradients(self) -> Gradients {
        let mut g = self.trunk.into_gradients();
        g.extend(self.mean.into_gradients());
        g.extend(self.log_var.into_gradients());
        g
    }
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, latent: usize, rng: &mut R) -> Self {
        Encoder {
            input_scale: 1.0,
            trunk: DenseLayer::new(input, hidden, Activation::Relu, rng),
            mean: DenseLayer::new(hidden, latent, Activation::Identity, rng),
            log_var: DenseLayer::new(hidden, latent, Activation::Identity, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.inputs()
    }

    pub fn latent_dim(&self) -> usize {
        self.mean.outputs()
    }

    fn scaled(&self, irs: ArrayView2<f64>) -> Array2<f64> {
        &irs * self.input_scale
    }

    /// `(μ, σ)` for every row of a `rows × d` IR batch.
    pub fn forward(&self, irs: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let h = self.trunk.forward(self.scaled(irs).view())?;
        let mu = self.mean.forward(h.view())?;
        let sigma = self.log_var.forward(h.view())?.mapv_into(|lv| (0.5 * lv).exp());
        Ok((mu, sigma))
    }

    pub fn forward_cached(&self, irs: ArrayView2<f64>) -> Result<EncoderCache> {
        let trunk = self.trunk.forward_cached(self.scaled(irs).view())?;
        let mean = self.mean.forward_cached(trunk.output().view())?;
        let log_var = self.log_var.forward_cached(trunk.output().view())?;
        let sigma = log_var.output().mapv(|lv| (0.5 * lv).exp());
        Ok(EncoderCache {
            trunk,
            mean,
            log_var,
            sigma,
        })
    }

    /// Backpropagates gradients given w.r.t. `μ` and the log-variance.
    pub fn backward_log_var(
        &self,
        cache: &EncoderCache,
        grad_mu: ArrayView2<f64>,
        grad_log_var: ArrayView2<f64>,
    ) -> EncoderGrads {
        let (mean, g1) = self.mean.backward(&cache.mean, grad_mu);
        let (log_var, g2) = self.log_var.backward(&cache.log_var, grad_log_var);
        let (trunk, _) = self.trunk.backward(&cache.trunk, (g1 + g2).view());
        EncoderGrads { trunk, mean, log_var }
    }

    /// Backpropagates gradients given w.r.t. `μ` and `σ`.
    pub fn backward(
        &self,
        cache: &EncoderCache,
        grad_mu: ArrayView2<f64>,
        grad_sigma: ArrayView2<f64>,
    ) -> EncoderGrads {
        // σ = exp(lv / 2) ⇒ ∂σ/∂lv = σ / 2
        let grad_log_var = &grad_sigma * &cache.sigma * 0.5;
        self.backward_log_var(cache, grad_mu, grad_log_var.view())
    }
}

impl Trainable for Encoder {
    fn params_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut p = self.trunk.params_mut();
        p.extend(self.mean.params_mut());
        p.extend(self.log_var.params_mut());
        p
    }
}

/// The representation model: encoder, decoder and the metadata needed to
/// reuse it on another task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeModel {
    pub format: String,
    pub format_version: u32,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    /// Attribute count of the tables the model was trained on.
    pub arity: Option<usize>,
    pub ir_fingerprint: String,
    pub encoder: Encoder,
    /// `k → h` ReLU, `h → d` linear.
    pub decoder: Mlp,
}

impl VaeModel {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, latent: usize, rng: &mut R) -> Self {
        let encoder = Encoder::new(input, hidden, latent, rng);
        let decoder = Mlp {
            layers: vec![
                DenseLayer::new(latent, hidden, Activation::Relu, rng),
                DenseLayer::new(hidden, input, Activation::Identity, rng),
            ],
        };
        VaeModel {
            format: MODEL_FORMAT.into(),
            format_version: MODEL_FORMAT_VERSION,
            input_dim: input,
            hidden_dim: hidden,
            latent_dim: latent,
            arity: None,
            ir_fingerprint: String::new(),
            encoder,
            decoder,
        }
    }

    pub fn check_input_dim(&self, d: usize) -> Result<()> {
        if d != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                actual: d,
            });
        }
        Ok(())
    }

    pub fn check_arity(&self, m: usize) -> Result<()> {
        match self.arity {
            Some(expected) if expected != m => Err(Error::Arity { expected, actual: m }),
            _ => Ok(()),
        }
    }
}

impl Trainable for VaeModel {
    fn params_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }
}

/// Per-attribute diagonal Gaussians of one tuple; row `i` of `mu` / `sigma`
/// belongs to attribute `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianRepr {
    pub mu: Array2<f64>,
    pub sigma: Array2<f64>,
}

impl GaussianRepr {
    pub fn new(mu: Array2<f64>, sigma: Array2<f64>) -> Result<Self> {
        if mu.dim() != sigma.dim() {
            return Err(Error::InvalidArgument(format!(
                "mean shape {:?} differs from stddev shape {:?}",
                mu.dim(),
                sigma.dim()
            )));
        }
        Ok(GaussianRepr { mu, sigma })
    }

    pub fn arity(&self) -> usize {
        self.mu.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.mu.ncols()
    }

    pub fn attribute(&self, i: usize) -> (ArrayView1<'_, f64>, ArrayView1<'_, f64>) {
        (self.mu.row(i), self.sigma.row(i))
    }

    /// All attribute means concatenated, length `m·k`.
    pub fn mean_concat(&self) -> Array1<f64> {
        self.mu.iter().copied().collect()
    }
}

pub fn encode(vae: &VaeModel, ir: &IrVector) -> Result<(Array1<f64>, Array1<f64>)> {
    vae.check_input_dim(ir.len())?;
    let (mu, sigma) = vae.encoder.forward(ir.view().insert_axis(Axis(0)))?;
    Ok((mu.row(0).to_owned(), sigma.row(0).to_owned()))
}

/// `z = μ + σ ⊙ ε`.
pub fn reparameterize(mu: ArrayView1<f64>, sigma: ArrayView1<f64>, noise: ArrayView1<f64>) -> Array1<f64> {
    let mut z = mu.to_owned();
    Zip::from(&mut z)
        .and(&sigma)
        .and(&noise)
        .for_each(|z, &s, &e| *z += s * e);
    z
}

/// `KL(N(μ, diag σ²) ‖ N(0, I)) = ½ Σ (σ² + μ² − 1 − ln σ²)`.
pub fn kl_to_standard_normal(mu: ArrayView1<f64>, sigma: ArrayView1<f64>) -> f64 {
    mu.iter()
        .zip(sigma.iter())
        .map(|(&m, &s)| {
            let s2 = s * s;
            0.5 * (s2 + m * m - 1.0 - s2.ln())
        })
        .sum()
}

pub fn represent_record(vae: &VaeModel, irs: &IrMatrix) -> Result<GaussianRepr> {
    vae.check_arity(irs.nrows())?;
    vae.check_input_dim(irs.ncols())?;
    let (mu, sigma) = vae.encoder.forward(irs.view())?;
    GaussianRepr::new(mu, sigma)
}

/// Encodes many records with one batched pass; results are identical to
/// calling [`represent_record`] per record.
pub fn represent_records(vae: &VaeModel, irs: &[IrMatrix]) -> Result<Vec<GaussianRepr>> {
    let Some(first) = irs.first() else {
        return Ok(Vec::new());
    };
    let m = first.nrows();
    vae.check_arity(m)?;
    vae.check_input_dim(first.ncols())?;
    let mut out = Vec::with_capacity(irs.len());
    for chunk in irs.chunks(256) {
        let views: Vec<_> = chunk.iter().map(|x| x.view()).collect();
        for x in &views {
            if x.nrows() != m {
                return Err(Error::Arity {
                    expected: m,
                    actual: x.nrows(),
                });
            }
        }
        let stacked = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let (mu, sigma) = vae.encoder.forward(stacked.view())?;
        for i in 0..chunk.len() {
            let rows = ndarray::s![i * m..(i + 1) * m, ..];
            out.push(GaussianRepr::new(
                mu.slice(rows).to_owned(),
                sigma.slice(rows).to_owned(),
            )?);
        }
    }
    Ok(out)
}
