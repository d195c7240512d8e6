//! Siamese matcher: twin encoders sharing one parameter set, an
//! attribute-wise squared 2-Wasserstein distance layer and a two-layer MLP
//! classifier, trained with BCE plus a margin contrastive term.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayViewMutD, Axis, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PairSet;
use crate::error::{Error, Result};
use crate::ir::{IrMatrix, TableIrs};
use crate::metrics::{ConfusionCounts, Prf1};
use crate::nnkit::{Activation, Adam, AdamConfig, DenseLayer, Gradients, Mlp, Trainable};
use crate::repr::{Encoder, EncoderGrads, GaussianRepr, VaeModel};

pub const MATCHER_FORMAT: &str = "vaer-matcher";
pub const MATCHER_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_MARGIN: f64 = 0.5;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Squared 2-Wasserstein distance between two diagonal Gaussians given as
/// `(μ, σ)`.
pub fn w2_squared(p: (ArrayView1<f64>, ArrayView1<f64>), q: (ArrayView1<f64>, ArrayView1<f64>)) -> Result<f64> {
    let k = p.0.len();
    for v in [&p.1, &q.0, &q.1] {
        if v.len() != k {
            return Err(Error::Dimension {
                expected: k,
                actual: v.len(),
            });
        }
    }
    let mut acc = 0.0;
    for j in 0..k {
        let dm = p.0[j] - q.0[j];
        let ds = p.1[j] - q.1[j];
        acc += dm * dm + ds * ds;
    }
    Ok(acc)
}

fn check_same_shape(s: &GaussianRepr, t: &GaussianRepr) -> Result<()> {
    if s.arity() != t.arity() {
        return Err(Error::Arity {
            expected: s.arity(),
            actual: t.arity(),
        });
    }
    if s.latent_dim() != t.latent_dim() {
        return Err(Error::Dimension {
            expected: s.latent_dim(),
            actual: t.latent_dim(),
        });
    }
    Ok(())
}

/// Attribute-wise distance vectors `(μˢ−μᵗ)² + (σˢ−σᵗ)²`, concatenated in
/// attribute order (length `m·k`).
pub fn wasserstein_vec(s: &GaussianRepr, t: &GaussianRepr) -> Result<Array1<f64>> {
    check_same_shape(s, t)?;
    let mut out = Array1::zeros(s.arity() * s.latent_dim());
    Zip::from(&mut out)
        .and(s.mu.view().into_shape_with_order(out_len(s)).expect("contiguous"))
        .and(t.mu.view().into_shape_with_order(out_len(s)).expect("contiguous"))
        .and(s.sigma.view().into_shape_with_order(out_len(s)).expect("contiguous"))
        .and(t.sigma.view().into_shape_with_order(out_len(s)).expect("contiguous"))
        .for_each(|o, &ms, &mt, &ss, &st| {
            let dm = ms - mt;
            let ds = ss - st;
            *o = dm * dm + ds * ds;
        });
    Ok(out)
}

fn out_len(r: &GaussianRepr) -> usize {
    r.arity() * r.latent_dim()
}

/// Per-attribute squared 2-Wasserstein distances.
pub fn attribute_w2(s: &GaussianRepr, t: &GaussianRepr) -> Result<Vec<f64>> {
    check_same_shape(s, t)?;
    (0..s.arity())
        .map(|i| w2_squared(s.attribute(i), t.attribute(i)))
        .collect()
}

/// Contrastive objective for one pair: binary cross-entropy of the predicted
/// probability plus, per attribute, `W₂²` for duplicates or
/// `max(0, margin − W₂²)` for non-duplicates, averaged over attributes.
pub fn contrastive_loss(probability: f64, label: u8, attribute_w2: &[f64], margin: f64) -> f64 {
    let x = f64::from(label);
    let bce = -(xlogy(x, probability) + xlogy(1.0 - x, 1.0 - probability));
    bce + contrastive_term(label, attribute_w2, margin)
}

fn contrastive_term(label: u8, attribute_w2: &[f64], margin: f64) -> f64 {
    let m = attribute_w2.len().max(1) as f64;
    attribute_w2
        .iter()
        .map(|&w| if label == 1 { w } else { (margin - w).max(0.0) })
        .sum::<f64>()
        / m
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderInit {
    /// Start from the trained representation encoder.
    Vae,
    /// Glorot-initialized encoder of the same shape.
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatcherConfig {
    pub hidden_dim: usize,
    pub margin: f64,
    pub threshold: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Fraction of each class held out for the reported F1.
    pub holdout_fraction: f64,
    pub encoder_init: EncoderInit,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        MatcherConfig {
            hidden_dim: 64,
            margin: DEFAULT_MARGIN,
            threshold: DEFAULT_THRESHOLD,
            epochs: 30,
            batch_size: 16,
            seed: 42,
            adam: AdamConfig::default(),
            holdout_fraction: 0.1,
            encoder_init: EncoderInit::Vae,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherModel {
    pub format: String,
    pub format_version: u32,
    pub arity: usize,
    pub margin: f64,
    pub threshold: f64,
    pub ir_fingerprint: String,
    /// One parameter set shared by both Siamese branches.
    pub encoder: Encoder,
    /// `m·k → c` ReLU, `c → 1` logit; the output probability is the
    /// sigmoid of the logit.
    pub classifier: Mlp,
}

impl Trainable for MatcherModel {
    fn params_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut p = self.encoder.params_mut();
        p.extend(self.classifier.params_mut());
        p
    }
}

impl MatcherModel {
    pub fn new<R: rand::Rng + ?Sized>(encoder: Encoder, arity: usize, config: &MatcherConfig, rng: &mut R) -> Self {
        let features = arity * encoder.latent_dim();
        let classifier = Mlp {
            layers: vec![
                DenseLayer::new(features, config.hidden_dim, Activation::Relu, rng),
                DenseLayer::new(config.hidden_dim, 1, Activation::Identity, rng),
            ],
        };
        MatcherModel {
            format: MATCHER_FORMAT.into(),
            format_version: MATCHER_FORMAT_VERSION,
            arity,
            margin: config.margin,
            threshold: config.threshold,
            ir_fingerprint: String::new(),
            encoder,
            classifier,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    fn check_pair(&self, s: &IrMatrix, t: &IrMatrix) -> Result<()> {
        for x in [s, t] {
            if x.nrows() != self.arity {
                return Err(Error::Arity {
                    expected: self.arity,
                    actual: x.nrows(),
                });
            }
            if x.ncols() != self.input_dim() {
                return Err(Error::Dimension {
                    expected: self.input_dim(),
                    actual: x.ncols(),
                });
            }
        }
        Ok(())
    }

    /// Encodes a record with the (fine-tuned) matcher encoder.
    pub fn represent(&self, irs: &IrMatrix) -> Result<GaussianRepr> {
        let (mu, sigma) = self.encoder.forward(irs.view())?;
        GaussianRepr::new(mu, sigma)
    }

    /// Match probabilities for a batch of pairs.
    pub fn probabilities(&self, pairs: &[(&IrMatrix, &IrMatrix)]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(128) {
            for (s, t) in chunk {
                self.check_pair(s, t)?;
            }
            let s: Vec<_> = chunk.iter().map(|(s, _)| s.view()).collect();
            let t: Vec<_> = chunk.iter().map(|(_, t)| t.view()).collect();
            let s = ndarray::concatenate(Axis(0), &s).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let t = ndarray::concatenate(Axis(0), &t).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let (ms, ss) = self.encoder.forward(s.view())?;
            let (mt, st) = self.encoder.forward(t.view())?;
            let dist = distance_features(&ms, &ss, &mt, &st, chunk.len());
            let logits = self.classifier.forward(dist.view())?;
            out.extend(logits.column(0).iter().map(|&a| crate::nnkit::sigmoid(a)));
        }
        Ok(out)
    }
}

impl MatcherModel {
    /// Encodes many records with the matcher encoder in fixed-size chunks.
    pub fn represent_all(&self, irs: &[IrMatrix]) -> Result<Vec<GaussianRepr>> {
        irs.iter()
            .map(|x| {
                if x.nrows() != self.arity {
                    return Err(Error::Arity {
                        expected: self.arity,
                        actual: x.nrows(),
                    });
                }
                self.represent(x)
            })
            .collect()
    }

    /// Match probabilities from representations already produced by
    /// [`MatcherModel::represent_all`].
    pub fn probabilities_from_reprs(&self, pairs: &[(&GaussianRepr, &GaussianRepr)]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(256) {
            let mut rows = Vec::with_capacity(chunk.len());
            for (s, t) in chunk {
                rows.push(wasserstein_vec(s, t)?);
            }
            let views: Vec<_> = rows.iter().map(|r| r.view().insert_axis(Axis(0))).collect();
            let features = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let logits = self.classifier.forward(features.view())?;
            out.extend(logits.column(0).iter().map(|&a| crate::nnkit::sigmoid(a)));
        }
        Ok(out)
    }
}

/// `(B·m) × k` encodings of both sides → `B × (m·k)` distance features.
fn distance_features(
    ms: &Array2<f64>,
    ss: &Array2<f64>,
    mt: &Array2<f64>,
    st: &Array2<f64>,
    batch: usize,
) -> Array2<f64> {
    let mut d = Array2::zeros(ms.raw_dim());
    Zip::from(&mut d)
        .and(ms)
        .and(mt)
        .and(ss)
        .and(st)
        .for_each(|o, &a, &b, &c, &e| {
            let dm = a - b;
            let ds = c - e;
            *o = dm * dm + ds * ds;
        });
    let cols = d.len() / batch;
    d.into_shape_with_order((batch, cols)).expect("contiguous rows")
}

/// `p_γ(1 | s, t)` for one pair of IR matrices.
pub fn match_forward(model: &MatcherModel, s: &IrMatrix, t: &IrMatrix) -> Result<f64> {
    Ok(model.probabilities(&[(s, t)])?[0])
}

/// Probability and label (`probability > threshold`) for each pair.
pub fn predict(model: &MatcherModel, pairs: &[(&IrMatrix, &IrMatrix)], threshold: f64) -> Result<Vec<(f64, bool)>> {
    Ok(model
        .probabilities(pairs)?
        .into_iter()
        .map(|p| (p, p > threshold))
        .collect())
}

#[derive(Debug, Clone, Copy)]
pub struct LabeledExample<'a> {
    pub left: &'a IrMatrix,
    pub right: &'a IrMatrix,
    pub label: u8,
}

/// Mean contrastive loss over a batch and its gradients (encoder followed
/// by classifier, in `params_mut` order).
pub fn matcher_loss_and_grads(model: &MatcherModel, batch: &[LabeledExample<'_>]) -> Result<(f64, Gradients)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let m = model.arity;
    let k = model.encoder.latent_dim();
    for ex in batch {
        model.check_pair(ex.left, ex.right)?;
    }
    let s: Vec<_> = batch.iter().map(|e| e.left.view()).collect();
    let t: Vec<_> = batch.iter().map(|e| e.right.view()).collect();
    let s = ndarray::concatenate(Axis(0), &s).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let t = ndarray::concatenate(Axis(0), &t).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let cs = model.encoder.forward_cached(s.view())?;
    let ct = model.encoder.forward_cached(t.view())?;
    let dmu = cs.mu() - ct.mu();
    let dsig = cs.sigma() - ct.sigma();
    let dist = (&dmu * &dmu) + (&dsig * &dsig);
    let features = dist.clone().into_shape_with_order((n, m * k)).expect("contiguous rows");
    let cls = model.classifier.forward_cached(features.view())?;
    let logits = cls.output().column(0).to_owned();

    let attr_w2 = dist.sum_axis(Axis(1));
    let mut loss = 0.0;
    let mut grad_logit = Array2::zeros((n, 1));
    let mut grad_row = Array1::<f64>::zeros(n * m);
    let inv_n = 1.0 / n as f64;
    let inv_m = 1.0 / m as f64;
    for (b, ex) in batch.iter().enumerate() {
        let a = logits[b];
        let x = f64::from(ex.label);
        loss += x * softplus(-a) + (1.0 - x) * softplus(a);
        grad_logit[(b, 0)] = (crate::nnkit::sigmoid(a) - x) * inv_n;
        for i in 0..m {
            let w = attr_w2[b * m + i];
            if ex.label == 1 {
                loss += w * inv_m;
                grad_row[b * m + i] = inv_m * inv_n;
            } else if w < model.margin {
                loss += (model.margin - w) * inv_m;
                grad_row[b * m + i] = -inv_m * inv_n;
            }
        }
    }
    loss *= inv_n;

    let (cls_grads, grad_features) = model.classifier.backward(&cls, grad_logit.view());
    let mut grad_dist = grad_features
        .into_shape_with_order((n * m, k))
        .expect("contiguous rows");
    grad_dist += &grad_row.view().insert_axis(Axis(1));
    let grad_mu_s = &grad_dist * &dmu * 2.0;
    let grad_sig_s = &grad_dist * &dsig * 2.0;
    let mut enc = model.encoder.backward(&cs, grad_mu_s.view(), grad_sig_s.view());
    let neg_mu = -&grad_mu_s;
    let neg_sig = -&grad_sig_s;
    let enc_t: EncoderGrads = model.encoder.backward(&ct, neg_mu.view(), neg_sig.view());
    enc.accumulate(&enc_t);

    let mut grads = enc.into_gradients();
    grads.extend(cls_grads.into_iter().flat_map(|g| g.into_gradients()));
    Ok((loss, grads))
}

/// Mean contrastive loss over a batch.
pub fn matcher_loss(model: &MatcherModel, batch: &[LabeledExample<'_>]) -> Result<f64> {
    let pairs: Vec<_> = batch.iter().map(|e| (e.left, e.right)).collect();
    let probs = model.probabilities(&pairs)?;
    let mut total = 0.0;
    for (ex, p) in batch.iter().zip(probs) {
        let s = model.represent(ex.left)?;
        let t = model.represent(ex.right)?;
        total += contrastive_loss(p, ex.label, &attribute_w2(&s, &t)?, model.margin);
    }
    Ok(total / batch.len() as f64)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MatcherReport {
    pub epoch_losses: Vec<f64>,
    pub train_size: usize,
    pub holdout_size: usize,
    /// Scores on the held-out split, when it is non-empty.
    pub holdout: Option<Prf1>,
}

/// Stratified split: the first `holdout` indices of each shuffled class go
/// to the held-out set. Each class keeps at least one training example.
fn split(examples: &[LabeledExample<'_>], fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut held = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..examples.len()).filter(|&i| examples[i].label == class).collect();
        idx.shuffle(rng);
        let n_held = ((idx.len() as f64 * fraction).round() as usize).min(idx.len().saturating_sub(1));
        held.extend_from_slice(&idx[..n_held]);
        train.extend_from_slice(&idx[n_held..]);
    }
    train.sort_unstable();
    held.sort_unstable();
    (train, held)
}

/// Fine-tunes a Siamese matcher whose encoder starts from `vae`.
pub fn train_matcher(
    examples: &[LabeledExample<'_>],
    vae: &VaeModel,
    config: &MatcherConfig,
) -> Result<(MatcherModel, MatcherReport)> {
    let positives = examples.iter().filter(|e| e.label == 1).count();
    if examples.iter().any(|e| e.label > 1) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    if positives == 0 || positives == examples.len() {
        return Err(Error::SingleClass(if positives == 0 { 0 } else { 1 }));
    }
    if config.margin <= 0.0 {
        return Err(Error::InvalidArgument("margin must be positive".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let arity = examples[0].left.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let encoder = match config.encoder_init {
        EncoderInit::Vae => vae.encoder.clone(),
        EncoderInit::Random => {
            let mut e = Encoder::new(vae.input_dim, vae.hidden_dim, vae.latent_dim, &mut rng);
            e.input_scale = vae.encoder.input_scale;
            e
        }
    };
    let mut model = MatcherModel::new(encoder, arity, config, &mut rng);
    model.ir_fingerprint = vae.ir_fingerprint.clone();

    let (mut train, held) = split(examples, config.holdout_fraction, &mut rng);
    let mut adam = Adam::new(config.adam);
    let mut report = MatcherReport {
        train_size: train.len(),
        holdout_size: held.len(),
        ..Default::default()
    };
    for epoch in 0..config.epochs {
        train.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in train.chunks(config.batch_size).enumerate() {
            let batch: Vec<LabeledExample<'_>> = chunk.iter().map(|&i| examples[i]).collect();
            let (loss, grads) = matcher_loss_and_grads(&model, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { loss, epoch, batch: b });
            }
            total += loss * chunk.len() as f64;
            adam.step(model.params_mut(), &grads)?;
        }
        let epoch_loss = total / train.len() as f64;
        log::debug!("matcher epoch {epoch}: loss {epoch_loss:.5}");
        report.epoch_losses.push(epoch_loss);
    }
    if !held.is_empty() {
        report.holdout = Some(evaluate_examples(&model, held.iter().map(|&i| examples[i]))?);
    }
    Ok((model, report))
}

/// Scores a matcher on labeled examples at its own threshold.
pub fn evaluate_examples<'a>(
    model: &MatcherModel,
    examples: impl IntoIterator<Item = LabeledExample<'a>>,
) -> Result<Prf1> {
    let examples: Vec<_> = examples.into_iter().collect();
    let pairs: Vec<_> = examples.iter().map(|e| (e.left, e.right)).collect();
    let preds = predict(model, &pairs, model.threshold)?;
    Ok(ConfusionCounts::from_outcomes(preds.iter().zip(&examples).map(|((_, y), e)| (*y, e.label == 1))).scores())
}

/// Resolves a pair set against encoded tables.
pub fn examples_from_pairs<'a>(
    pairs: &PairSet,
    left: &'a TableIrs,
    right: &'a TableIrs,
) -> Result<Vec<LabeledExample<'a>>> {
    pairs
        .pairs
        .iter()
        .map(|p| {
            let l = left.get(&p.left_id).ok_or_else(|| Error::UnknownId {
                table: left.name.clone(),
                id: p.left_id.clone(),
            })?;
            let r = right.get(&p.right_id).ok_or_else(|| Error::UnknownId {
                table: right.name.clone(),
                id: p.right_id.clone(),
            })?;
            Ok(LabeledExample {
                left: l,
                right: r,
                label: p.label,
            })
        })
        .collect()
}

pub fn save_matcher(model: &MatcherModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_vec_pretty(model)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_matcher(path: impl AsRef<Path>) -> Result<MatcherModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let model: MatcherModel = serde_json::from_slice(&bytes)?;
    if model.format != MATCHER_FORMAT || model.format_version != MATCHER_FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "{} v{}, expected {MATCHER_FORMAT} v{MATCHER_FORMAT_VERSION}",
            model.format, model.format_version
        )));
    }
    let features = model.arity * model.encoder.latent_dim();
    if model.classifier.layers.len() != 2 || model.classifier.inputs() != features || model.classifier.outputs() != 1 {
        return Err(Error::ModelFormat(
            "classifier shape does not match arity × latent dim".into(),
        ));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::gradcheck::{finite_difference, flat_params, relative_error, with_params};
    use ndarray::{array, Array};
    use rand::Rng;

    fn toy_model(seed: u64, d: usize, m: usize, k: usize) -> MatcherModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = MatcherConfig {
            hidden_dim: 5,
            ..Default::default()
        };
        let enc = Encoder::new(d, 6, k, &mut rng);
        MatcherModel::new(enc, m, &cfg, &mut rng)
    }

    #[test]
    fn w2_closed_form() {
        let p = (array![0.0, 1.0], array![1.0, 2.0]);
        let q = (array![3.0, 1.0], array![1.0, 0.5]);
        let w = w2_squared((p.0.view(), p.1.view()), (q.0.view(), q.1.view())).unwrap();
        assert!((w - (9.0 + 2.25)).abs() < 1e-12);
        assert_eq!(
            w2_squared((p.0.view(), p.1.view()), (p.0.view(), p.1.view())).unwrap(),
            0.0
        );
    }

    #[test]
    fn w2_rejects_mismatched_lengths() {
        let a = array![0.0, 1.0];
        let b = array![0.0];
        assert!(matches!(
            w2_squared((a.view(), a.view()), (b.view(), a.view())),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn distance_vector_is_symmetric_and_sums_to_attribute_w2() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = GaussianRepr::new(
            Array::from_shape_simple_fn((3, 4), || rng.random_range(-1.0..1.0)),
            Array::from_shape_simple_fn((3, 4), || rng.random_range(0.1..1.0)),
        )
        .unwrap();
        let t = GaussianRepr::new(
            Array::from_shape_simple_fn((3, 4), || rng.random_range(-1.0..1.0)),
            Array::from_shape_simple_fn((3, 4), || rng.random_range(0.1..1.0)),
        )
        .unwrap();
        let st = wasserstein_vec(&s, &t).unwrap();
        assert_eq!(st, wasserstein_vec(&t, &s).unwrap());
        let per = attribute_w2(&s, &t).unwrap();
        for (i, w) in per.iter().enumerate() {
            let block: f64 = st.slice(ndarray::s![i * 4..(i + 1) * 4]).sum();
            assert!((block - w).abs() < 1e-12);
        }
    }

    #[test]
    fn contrastive_loss_values() {
        // BCE only when distances satisfy the margin.
        let l = contrastive_loss(0.8, 1, &[0.0, 0.0], 0.5);
        assert!((l + 0.8f64.ln()).abs() < 1e-12);
        let l = contrastive_loss(0.2, 0, &[1.0, 0.7], 0.5);
        assert!((l + 0.8f64.ln()).abs() < 1e-12);
        // Hinge for a close non-duplicate, mean over attributes.
        let l = contrastive_loss(0.5, 0, &[0.1, 0.5], 0.5);
        assert!((l - (2f64.ln() + 0.4 / 2.0)).abs() < 1e-12);
        let l = contrastive_loss(0.5, 1, &[0.1, 0.3], 0.5);
        assert!((l - (2f64.ln() + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn pair_probability_is_symmetric() {
        let model = toy_model(5, 4, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let s = Array::from_shape_simple_fn((2, 4), || rng.random_range(-1.0..1.0));
            let t = Array::from_shape_simple_fn((2, 4), || rng.random_range(-1.0..1.0));
            let a = match_forward(&model, &s, &t).unwrap();
            let b = match_forward(&model, &t, &s).unwrap();
            assert_eq!(a, b);
            assert!(a > 0.0 && a < 1.0);
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        for seed in 0..20u64 {
            let mut model = toy_model(200 + seed, 4, 2, 3);
            model.encoder.input_scale = 1.3;
            let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
            let irs: Vec<IrMatrix> = (0..6)
                .map(|_| Array::from_shape_simple_fn((2, 4), || rng.random_range(-1.0..1.0)))
                .collect();
            // Large margin keeps non-duplicates on the active side of the hinge.
            model.margin = 50.0;
            let batch: Vec<LabeledExample<'_>> = (0..3)
                .map(|i| LabeledExample {
                    left: &irs[2 * i],
                    right: &irs[2 * i + 1],
                    label: (i % 2) as u8,
                })
                .collect();
            let (loss, grads) = matcher_loss_and_grads(&model, &batch).unwrap();
            assert!((loss - matcher_loss(&model, &batch).unwrap()).abs() < 1e-10);
            let analytic: Vec<f64> = grads.into_iter().flat_map(|a| a.into_iter()).collect();
            let numeric = finite_difference(
                |theta| matcher_loss(&with_params(&model, theta), &batch).unwrap(),
                &flat_params(&model),
                1e-5,
            );
            let err = relative_error(&analytic, &numeric);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    fn clustered(rng: &mut ChaCha8Rng, n: usize, d: usize, m: usize) -> (Vec<IrMatrix>, Vec<IrMatrix>) {
        let centers: Vec<IrMatrix> = (0..n)
            .map(|_| Array::from_shape_simple_fn((m, d), || rng.random_range(-1.0..1.0)))
            .collect();
        let twins = centers
            .iter()
            .map(|c| c.mapv(|x| x + rng.random_range(-0.05..0.05)))
            .collect();
        (centers, twins)
    }

    fn toy_examples<'a>(left: &'a [IrMatrix], right: &'a [IrMatrix]) -> Vec<LabeledExample<'a>> {
        let n = left.len();
        let mut out = Vec::new();
        for i in 0..n {
            out.push(LabeledExample {
                left: &left[i],
                right: &right[i],
                label: 1,
            });
            out.push(LabeledExample {
                left: &left[i],
                right: &right[(i + 1) % n],
                label: 0,
            });
        }
        out
    }

    #[test]
    fn separable_toy_is_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (l, r) = clustered(&mut rng, 20, 6, 2);
        let examples = toy_examples(&l, &r);
        let vae = VaeModel::new(6, 16, 4, &mut rng);
        let cfg = MatcherConfig {
            hidden_dim: 16,
            holdout_fraction: 0.0,
            adam: AdamConfig {
                learning_rate: 1e-2,
                ..Default::default()
            },
            ..Default::default()
        };
        let (model, report) = train_matcher(&examples, &vae, &cfg).unwrap();
        assert!(report.holdout.is_none());
        assert!(report.epoch_losses.last().unwrap() < &report.epoch_losses[0]);
        let scores = evaluate_examples(&model, examples.iter().copied()).unwrap();
        assert_eq!(scores.f1, 1.0, "{scores:?}");
    }

    #[test]
    fn single_class_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (l, r) = clustered(&mut rng, 3, 4, 1);
        let examples: Vec<_> = toy_examples(&l, &r).into_iter().filter(|e| e.label == 1).collect();
        let vae = VaeModel::new(4, 5, 2, &mut rng);
        assert!(matches!(
            train_matcher(&examples, &vae, &MatcherConfig::default()),
            Err(Error::SingleClass(1))
        ));
    }

    #[test]
    fn training_is_deterministic_and_holdout_is_stratified() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (l, r) = clustered(&mut rng, 20, 5, 2);
        let examples = toy_examples(&l, &r);
        let vae = VaeModel::new(5, 8, 3, &mut rng);
        let cfg = MatcherConfig {
            epochs: 3,
            ..Default::default()
        };
        let (a, ra) = train_matcher(&examples, &vae, &cfg).unwrap();
        let (b, _) = train_matcher(&examples, &vae, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.holdout_size, 4);
        let h = ra.holdout.unwrap();
        assert_eq!(h.counts.tp + h.counts.fn_, 2);
    }

    #[test]
    fn random_init_keeps_input_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (l, r) = clustered(&mut rng, 5, 4, 1);
        let examples = toy_examples(&l, &r);
        let mut vae = VaeModel::new(4, 5, 2, &mut rng);
        vae.encoder.input_scale = 7.0;
        let cfg = MatcherConfig {
            epochs: 0,
            encoder_init: EncoderInit::Random,
            ..Default::default()
        };
        let (m, _) = train_matcher(&examples, &vae, &cfg).unwrap();
        assert_eq!(m.encoder.input_scale, 7.0);
        assert_ne!(m.encoder.trunk, vae.encoder.trunk);
        let cfg = MatcherConfig {
            epochs: 0,
            ..Default::default()
        };
        let (m, _) = train_matcher(&examples, &vae, &cfg).unwrap();
        assert_eq!(m.encoder, vae.encoder);
    }

    #[test]
    fn cached_representations_give_identical_probabilities() {
        let model = toy_model(12, 4, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let irs: Vec<IrMatrix> = (0..6)
            .map(|_| Array::from_shape_simple_fn((2, 4), || rng.random_range(-1.0..1.0)))
            .collect();
        let reprs = model.represent_all(&irs).unwrap();
        let direct = model.probabilities(&[(&irs[0], &irs[1]), (&irs[2], &irs[5])]).unwrap();
        let cached = model
            .probabilities_from_reprs(&[(&reprs[0], &reprs[1]), (&reprs[2], &reprs[5])])
            .unwrap();
        for (a, b) in direct.iter().zip(&cached) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let model = toy_model(8, 4, 3, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_matcher(&model, &path).unwrap();
        assert_eq!(load_matcher(&path).unwrap(), model);
    }

    #[test]
    fn wrong_arity_is_reported() {
        let model = toy_model(8, 4, 3, 2);
        let s = Array2::zeros((2, 4));
        assert!(matches!(
            match_forward(&model, &s, &s),
            Err(Error::Arity { expected: 3, actual: 2 })
        ));
    }
}
