//! Matcher training behaviour on a clustered toy fixture.

use ndarray::{Array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vaer::ir::IrMatrix;
use vaer::matcher::{evaluate_examples, train_matcher, EncoderInit, LabeledExample, MatcherConfig};
use vaer::repr::{train_vae, VaeConfig, VaeModel};

/// IRs lie near a `FACTORS`-dimensional subspace of `ℝ^D`.
const D: usize = 50;
const FACTORS: usize = 4;
const M: usize = 2;
const PAIRS: usize = 20;

struct Toy {
    left: Vec<IrMatrix>,
    right: Vec<IrMatrix>,
}

impl Toy {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = Array::from_shape_simple_fn((FACTORS, D), || rng.random_range(-1.0..1.0));
        let mut left = Vec::with_capacity(PAIRS);
        let mut right = Vec::with_capacity(PAIRS);
        for _ in 0..PAIRS {
            let code: Array2<f64> = Array::from_shape_simple_fn((M, FACTORS), || rng.random_range(-1.0..1.0));
            let twin = code.mapv(|x| x + rng.random_range(-0.1..0.1));
            left.push(code.dot(&basis).mapv(|x| x + rng.random_range(-0.05..0.05)));
            right.push(twin.dot(&basis).mapv(|x| x + rng.random_range(-0.05..0.05)));
        }
        Toy { left, right }
    }

    fn examples(&self) -> Vec<LabeledExample<'_>> {
        (0..PAIRS)
            .flat_map(|i| {
                [
                    LabeledExample {
                        left: &self.left[i],
                        right: &self.right[i],
                        label: 1,
                    },
                    LabeledExample {
                        left: &self.left[i],
                        right: &self.right[(i + 1) % PAIRS],
                        label: 0,
                    },
                ]
            })
            .collect()
    }

    fn vae(&self, seed: u64) -> VaeModel {
        let irs: Vec<IrMatrix> = self.left.iter().chain(&self.right).cloned().collect();
        let config = VaeConfig {
            hidden_dim: 32,
            latent_dim: 8,
            epochs: 50,
            batch_size: 8,
            seed,
            ..Default::default()
        };
        train_vae(&irs, &config).unwrap().0
    }
}

fn config(seed: u64, epochs: usize, init: EncoderInit) -> MatcherConfig {
    MatcherConfig {
        seed,
        epochs,
        holdout_fraction: 0.0,
        encoder_init: init,
        ..Default::default()
    }
}

/// First epoch count at which the training pairs are all classified correctly.
fn epochs_to_perfect(toy: &Toy, vae: &VaeModel, seed: u64, init: EncoderInit, max: usize) -> Option<usize> {
    let examples = toy.examples();
    (1..=max).find(|&e| {
        let (m, _) = train_matcher(&examples, vae, &config(seed, e, init)).unwrap();
        evaluate_examples(&m, examples.iter().copied()).unwrap().f1 == 1.0
    })
}

#[test]
fn moving_average_loss_never_rises() {
    for seed in [1u64, 2, 3] {
        let toy = Toy::new(seed);
        let vae = toy.vae(seed);
        let (_, report) = train_matcher(&toy.examples(), &vae, &config(seed, 30, EncoderInit::Vae)).unwrap();
        let losses = &report.epoch_losses;
        assert_eq!(losses.len(), 30);
        let avg: Vec<f64> = losses.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
        for (i, w) in avg.windows(2).enumerate() {
            assert!(
                w[1] <= w[0],
                "seed {seed}: moving average rose after epoch {}: {avg:?}",
                i + 5
            );
        }
    }
}

#[test]
fn vae_initialization_needs_at_most_half_the_epochs() {
    const MAX: usize = 60;
    let (mut total_vae, mut total_random) = (0, 0);
    for seed in [1u64, 2, 3, 4, 5] {
        let toy = Toy::new(seed);
        let vae = toy.vae(seed);
        let from_vae = epochs_to_perfect(&toy, &vae, seed, EncoderInit::Vae, MAX);
        let from_random = epochs_to_perfect(&toy, &vae, seed, EncoderInit::Random, MAX);
        println!("seed {seed}: F1 = 1 after {from_vae:?} epochs from the VAE, {from_random:?} from random weights");
        total_vae += from_vae.expect("VAE-initialized matcher separates the toy set");
        total_random += from_random.unwrap_or(MAX + 1);
    }
    assert!(
        2 * total_vae <= total_random,
        "{total_vae} epochs from the VAE vs {total_random} from random weights over the seed set"
    );
}
