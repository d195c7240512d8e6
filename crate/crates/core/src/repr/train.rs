use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{EncoderGrads, VaeModel, DEFAULT_HIDDEN_DIM, DEFAULT_LATENT_DIM};
use crate::error::{Error, Result};
use crate::ir::IrMatrix;
use crate::nnkit::{Adam, AdamConfig, DenseGrads, Gradients, Trainable};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VaeConfig {
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub epochs: usize,
    /// Records per mini-batch.
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Stop once the epoch loss improves by less than this fraction ...
    pub min_improvement: f64,
    /// ... for this many consecutive epochs.
    pub patience: usize,
    /// Multiplier applied to IRs; `None` picks one so that non-empty IRs
    /// have unit mean square per coordinate. Defaults to 1 (IRs as-is).
    pub input_scale: Option<f64>,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            hidden_dim: DEFAULT_HIDDEN_DIM,
            latent_dim: DEFAULT_LATENT_DIM,
            epochs: 20,
            batch_size: 32,
            seed: 42,
            adam: AdamConfig::default(),
            min_improvement: 1e-3,
            patience: 3,
            input_scale: Some(1.0),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-record loss of every completed epoch.
    pub epoch_losses: Vec<f64>,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeGrads {
    pub encoder: EncoderGrads,
    pub decoder: Vec<DenseGrads>,
}

impl VaeGrads {
    pub fn into_gradients(self) -> Gradients {
        let mut g = self.encoder.into_gradients();
        g.extend(self.decoder.into_iter().flat_map(DenseGrads::into_gradients));
        g
    }
}

/// Negative ELBO summed over the rows of `irs` (`rows × d`), with one noise
/// draw per row (`rows × k`): squared reconstruction error plus the KL term.
pub fn vae_loss(vae: &VaeModel, irs: ArrayView2<f64>, noise: ArrayView2<f64>) -> Result<f64> {
    vae_loss_and_grads(vae, irs, noise).map(|(l, _)| l)
}

pub fn vae_loss_and_grads(vae: &VaeModel, irs: ArrayView2<f64>, noise: ArrayView2<f64>) -> Result<(f64, VaeGrads)> {
    vae.check_input_dim(irs.ncols())?;
    if noise.dim() != (irs.nrows(), vae.latent_dim) {
        return Err(Error::Dimension {
            expected: vae.latent_dim,
            actual: noise.ncols(),
        });
    }
    let enc = vae.encoder.forward_cached(irs)?;
    let mu = enc.mu();
    let sigma = enc.sigma();
    let mut z = mu.clone();
    Zip::from(&mut z)
        .and(sigma)
        .and(&noise)
        .for_each(|z, &s, &e| *z += s * e);
    let dec = vae.decoder.forward_cached(z.view())?;
    let target = &irs * vae.encoder.input_scale;
    let residual = dec.output() - &target;

    let reconstruction: f64 = residual.iter().map(|r| r * r).sum();
    let mut kl = 0.0;
    Zip::from(mu).and(sigma).for_each(|&m, &s| {
        let s2 = s * s;
        kl += 0.5 * (s2 + m * m - 1.0 - s2.ln());
    });
    let loss = reconstruction + kl;

    let grad_out = residual * 2.0;
    let (decoder, grad_z) = vae.decoder.backward(&dec, grad_out.view());
    let grad_mu = &grad_z + mu;
    // ∂z/∂lv = ½σε, ∂KL/∂lv = ½(σ² − 1)
    let mut grad_lv = Array2::zeros(sigma.raw_dim());
    Zip::from(&mut grad_lv)
        .and(&grad_z)
        .and(sigma)
        .and(&noise)
        .for_each(|g, &gz, &s, &e| *g = 0.5 * gz * s * e + 0.5 * (s * s - 1.0));
    let encoder = vae.encoder.backward_log_var(&enc, grad_mu.view(), grad_lv.view());
    Ok((loss, VaeGrads { encoder, decoder }))
}

fn auto_input_scale(rows: &[&IrMatrix], d: usize) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for x in rows {
        for r in x.rows() {
            let sq: f64 = r.iter().map(|v| v * v).sum();
            if sq > 0.0 {
                sum += sq;
                count += 1;
            }
        }
    }
    if count == 0 || sum == 0.0 {
        1.0
    } else {
        (d as f64 / (sum / count as f64)).sqrt()
    }
}

/// Trains a VAE on the IR matrices of all records (of both tables).
/// Deterministic given `config.seed`.
pub fn train_vae(irs: &[IrMatrix], config: &VaeConfig) -> Result<(VaeModel, TrainReport)> {
    let first = irs
        .first()
        .ok_or_else(|| Error::InvalidArgument("VAE training needs at least one record".into()))?;
    let (m, d) = first.dim();
    if irs.iter().any(|x| x.dim() != (m, d)) {
        return Err(Error::InvalidArgument("all IR matrices must share one shape".into()));
    }
    if config.batch_size == 0 || config.hidden_dim == 0 || config.latent_dim == 0 {
        return Err(Error::InvalidArgument(
            "batch size and layer widths must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut vae = VaeModel::new(d, config.hidden_dim, config.latent_dim, &mut rng);
    vae.arity = Some(m);
    vae.encoder.input_scale = match config.input_scale {
        Some(s) => s,
        None => auto_input_scale(&irs.iter().collect::<Vec<_>>(), d),
    };
    let mut adam = Adam::new(config.adam);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..irs.len()).collect();
    let mut stale = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let views: Vec<_> = chunk.iter().map(|&i| irs[i].view()).collect();
            let batch = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let noise =
                Array2::from_shape_simple_fn((batch.nrows(), config.latent_dim), || StandardNormal.sample(&mut rng));
            let (loss, grads) = vae_loss_and_grads(&vae, batch.view(), noise.view())?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { loss, epoch, batch: b });
            }
            total += loss;
            let scale = 1.0 / chunk.len() as f64;
            let grads: Gradients = grads.into_gradients().into_iter().map(|g| g * scale).collect();
            adam.step(vae.params_mut(), &grads)?;
        }
        let epoch_loss = total / irs.len() as f64;
        log::debug!("vae epoch {epoch}: loss {epoch_loss:.5}");
        if let Some(&prev) = report.epoch_losses.last() {
            if prev - epoch_loss < config.min_improvement * prev.abs() {
                stale += 1;
            } else {
                stale = 0;
            }
        }
        report.epoch_losses.push(epoch_loss);
        if config.patience > 0 && stale >= config.patience {
            report.stopped_early = true;
            break;
        }
    }
    Ok((vae, report))
}
