use ndarray::{Array1, Array2, ArrayView2, ArrayViewMutD, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Gradients, Trainable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
    Softplus,
    Sigmoid,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative given the pre-activation and the activation output.
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Softplus => sigmoid(pre),
            Activation::Sigmoid => out * (1.0 - out),
        }
    }
}

/// `activation(W·x + b)` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Array2<f64>,
    pre: Array2<f64>,
    output: Array2<f64>,
}

impl DenseCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseGrads {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        DenseGrads {
            weights: Array2::zeros(layer.weights.raw_dim()),
            bias: Array1::zeros(layer.bias.raw_dim()),
        }
    }

    pub fn accumulate(&mut self, other: &DenseGrads) {
        self.weights += &other.weights;
        self.bias += &other.bias;
    }

    pub fn into_gradients(self) -> Gradients {
        vec![self.weights.into_dyn(), self.bias.into_dyn()]
    }
}

impl DenseLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = Array2::from_shape_simple_fn((outputs, inputs), || rng.random_range(-limit..limit));
        DenseLayer {
            weights,
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        DenseLayer {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    fn check(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.inputs() {
            return Err(Error::Dimension {
                expected: self.inputs(),
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    fn pre_activation(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut pre = x.dot(&self.weights.t());
        pre += &self.bias;
        pre
    }

    /// Forward pass over a `batch × in` matrix.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&x)?;
        let act = self.activation;
        Ok(self.pre_activation(&x).mapv_into(|v| act.apply(v)))
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<DenseCache> {
        self.check(&x)?;
        let pre = self.pre_activation(&x);
        let act = self.activation;
        let output = pre.mapv(|v| act.apply(v));
        Ok(DenseCache {
            input: x.to_owned(),
            pre,
            output,
        })
    }

    /// Reverse pass: parameter gradients and the gradient w.r.t. the input.
    pub fn backward(&self, cache: &DenseCache, grad_out: ArrayView2<f64>) -> (DenseGrads, Array2<f64>) {
        let act = self.activation;
        let mut grad_pre = grad_out.to_owned();
        if act != Activation::Identity {
            ndarray::Zip::from(&mut grad_pre)
                .and(&cache.pre)
                .and(&cache.output)
                .for_each(|g, &p, &o| *g *= act.derivative(p, o));
        }
        let weights = grad_pre.t().dot(&cache.input);
        let bias = grad_pre.sum_axis(Axis(0));
        let grad_in = grad_pre.dot(&self.weights);
        (DenseGrads { weights, bias }, grad_in)
    }
}

impl Trainable for DenseLayer {
    fn params_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        vec![self.weights.view_mut().into_dyn(), self.bias.view_mut().into_dyn()]
    }
}

/// A stack of dense layers applied in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    layers: Vec<DenseCache>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.layers.last().expect("non-empty mlp").output()
    }
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("an MLP needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::Dimension {
                    expected: w[0].outputs(),
                    actual: w[1].inputs(),
                });
            }
        }
        Ok(Mlp { layers })
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map(DenseLayer::outputs).unwrap_or(0)
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut h = self.layers[0].forward(x)?;
        for layer in &self.layers[1..] {
            h = layer.forward(h.view())?;
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<MlpCache> {
        let mut caches: Vec<DenseCache> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let cache = match caches.last() {
                Some(prev) => layer.forward_cached(prev.output.view())?,
                None => layer.forward_cached(x)?,
            };
            caches.push(cache);
        }
        Ok(MlpCache { layers: caches })
    }

    /// Backpropagates `grad_out` through every layer; returns per-layer
    /// gradients (input order) and the gradient w.r.t. the network input.
    pub fn backward(&self, cache: &MlpCache, grad_out: ArrayView2<f64>) -> (Vec<DenseGrads>, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.to_owned();
        for (layer, c) in self.layers.iter().zip(&cache.layers).rev() {
            let (lg, gi) = layer.backward(c, g.view());
            grads.push(lg);
            g = gi;
        }
        grads.reverse();
        (grads, g)
    }
}

impl Trainable for Mlp {
    fn params_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::gradcheck::{finite_difference, relative_error};
    use ndarray::{array, Array};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_layer(n: usize, act: Activation) -> DenseLayer {
        DenseLayer {
            weights: Array2::eye(n),
            bias: Array1::zeros(n),
            activation: act,
        }
    }

    #[test]
    fn identity_and_relu() {
        let x = array![[-1.0, 2.0]];
        assert_eq!(identity_layer(2, Activation::Identity).forward(x.view()).unwrap(), x);
        assert_eq!(
            identity_layer(2, Activation::Relu).forward(x.view()).unwrap(),
            array![[0.0, 2.0]]
        );
    }

    #[test]
    fn batch_equals_stacked_single_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = DenseLayer::new(3, 4, Activation::Softplus, &mut rng);
        let batch = array![[0.1, -0.2, 0.3], [1.0, 0.5, -2.0]];
        let out = layer.forward(batch.view()).unwrap();
        for i in 0..2 {
            let single = layer.forward(batch.slice(ndarray::s![i..i + 1, ..])).unwrap();
            assert_eq!(single.row(0), out.row(i));
        }
    }

    #[test]
    fn shape_mismatch() {
        let layer = DenseLayer::zeros(3, 2, Activation::Identity);
        assert!(layer.forward(array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn linear_squared_loss_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = DenseLayer::new(3, 2, Activation::Identity, &mut rng);
        let x = array![[0.5, -1.0, 2.0]];
        let y = array![[1.0, -1.0]];
        let cache = layer.forward_cached(x.view()).unwrap();
        let residual = cache.output() - &y;
        let (grads, _) = layer.backward(&cache, (2.0 * &residual).view());
        let expected = 2.0 * residual.t().dot(&x);
        assert!((&grads.weights - &expected).iter().all(|v| v.abs() < 1e-12));
        assert!((&grads.bias - &(2.0 * &residual.row(0)))
            .iter()
            .all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(vec![
            DenseLayer::new(3, 5, Activation::Relu, &mut rng),
            DenseLayer::new(5, 2, Activation::Sigmoid, &mut rng),
        ])
        .unwrap();
        let x = array![[0.3, 0.1, -0.7]];
        let cache = mlp.forward_cached(x.view()).unwrap();
        let (grads, gin) = mlp.backward(&cache, Array2::zeros((1, 2)).view());
        assert!(grads.iter().all(|g| g.weights.iter().all(|&v| v == 0.0)));
        assert!(gin.iter().all(|&v| v == 0.0));
    }

    /// Composed MLP with every activation; loss = Σ c ⊙ output.
    #[test]
    fn mlp_gradients_match_finite_differences() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mlp = Mlp::new(vec![
                DenseLayer::new(4, 6, Activation::Relu, &mut rng),
                DenseLayer::new(6, 5, Activation::Softplus, &mut rng),
                DenseLayer::new(5, 3, Activation::Sigmoid, &mut rng),
                DenseLayer::new(3, 2, Activation::Identity, &mut rng),
            ])
            .unwrap();
            let x = Array::from_shape_simple_fn((3, 4), || rng.random_range(-1.0..1.0));
            let c = Array::from_shape_simple_fn((3, 2), || rng.random_range(-1.0..1.0));
            let cache = mlp.forward_cached(x.view()).unwrap();
            let (grads, _) = mlp.backward(&cache, c.view());
            let analytic: Vec<f64> = grads
                .into_iter()
                .flat_map(|g| g.into_gradients())
                .flat_map(|a| a.into_iter())
                .collect();

            let flat: Vec<f64> = {
                let mut m = mlp.clone();
                m.params_mut()
                    .into_iter()
                    .flat_map(|p| p.iter().copied().collect::<Vec<_>>())
                    .collect()
            };
            let loss = |theta: &[f64]| {
                let mut m = mlp.clone();
                let mut it = theta.iter();
                for mut p in m.params_mut() {
                    p.iter_mut().for_each(|v| *v = *it.next().unwrap());
                }
                (m.forward(x.view()).unwrap() * &c).sum()
            };
            let numeric = finite_difference(loss, &flat, 1e-5);
            let err = relative_error(&analytic, &numeric);
            assert!(err < 1e-4, "seed {seed}: relative error {err}");
        }
    }
}
