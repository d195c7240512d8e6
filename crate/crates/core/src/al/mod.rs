//! Active learning: bootstrap labels from extreme latent distances, then
//! repeatedly propose certain and uncertain pairs on both sides of the
//! decision boundary, scored by prediction entropy and the density of
//! latent distances among known duplicates.

mod journal;
mod kde;
mod session;

pub use journal::{read_journal, JournalEntry, JournalWriter};
pub use kde::{
    expected_latent_distance, fit_kde, positive_distance_distribution, KdeDensity, DEFAULT_DISTANCE_SAMPLES,
    MIN_BANDWIDTH,
};
pub use session::{
    al_loop, AlConfig, AlContext, AlOutcome, IterationMetrics, Labeler, Proposal, Session, TrainedState, TrainingJob,
};

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::PairSet;
use crate::error::{Error, Result};
use crate::neighbors::CandidatePair;

pub const DEFAULT_BOOTSTRAP_PER_CLASS: usize = 15;
pub const DEFAULT_BATCH_SIZE: usize = 10;
/// Floor applied to entropies and densities before taking reciprocals.
pub const SCORE_FLOOR: f64 = 1e-12;

/// `−p ln p − (1 − p) ln(1 − p)`, with `0 ln 0 = 0`.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Probability(p));
    }
    let term = |q: f64| if q == 0.0 { 0.0 } else { -q * q.ln() };
    Ok(term(p) + term(1.0 - p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Bootstrap,
    Human,
    Given,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub pair: CandidatePair,
    pub label: u8,
    pub source: LabelSource,
}

/// Labeled duplicates, labeled non-duplicates and the unlabeled pool.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelPools {
    pub positives: Vec<LabeledPair>,
    pub negatives: Vec<LabeledPair>,
    pub unlabeled: Vec<CandidatePair>,
}

impl LabelPools {
    pub fn labeled(&self) -> impl Iterator<Item = &LabeledPair> {
        self.positives.iter().chain(&self.negatives)
    }

    pub fn labeled_count(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    /// Checks that no pair occurs twice across or within the pools.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let keys = self
            .labeled()
            .map(|l| (&l.pair.left_id, &l.pair.right_id))
            .chain(self.unlabeled.iter().map(|p| (&p.left_id, &p.right_id)));
        for (l, r) in keys {
            if !seen.insert((l, r)) {
                return Err(Error::DuplicatePair(l.clone(), r.clone()));
            }
        }
        Ok(())
    }

    /// Moves an unlabeled pair into the pool given by `label`.
    pub fn label(&mut self, left_id: &str, right_id: &str, label: u8, source: LabelSource) -> Result<()> {
        if label > 1 {
            return Err(Error::InvalidArgument(format!("label must be 0 or 1, got {label}")));
        }
        let pos = self
            .unlabeled
            .iter()
            .position(|p| p.left_id == left_id && p.right_id == right_id)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("pair ({left_id}, {right_id}) is not in the unlabeled pool"))
            })?;
        let pair = self.unlabeled.remove(pos);
        let labeled = LabeledPair { pair, label, source };
        if label == 1 {
            self.positives.push(labeled);
        } else {
            self.negatives.push(labeled);
        }
        Ok(())
    }
}

/// Drops candidates that appear in `held_out`, e.g. test pairs.
pub fn exclude_pairs(candidates: Vec<CandidatePair>, held_out: &PairSet) -> Vec<CandidatePair> {
    let keys: HashSet<(&str, &str)> = held_out
        .pairs
        .iter()
        .map(|p| (p.left_id.as_str(), p.right_id.as_str()))
        .collect();
    candidates
        .into_iter()
        .filter(|c| !keys.contains(&(c.left_id.as_str(), c.right_id.as_str())))
        .collect()
}

/// Seeds the labeled pools with the `per_class` candidates of smallest total
/// `W₂²` as duplicates and the `per_class` of largest as non-duplicates.
/// Ties break by pool order.
pub fn bootstrap(candidates: Vec<CandidatePair>, per_class: usize) -> Result<LabelPools> {
    let needed = 2 * per_class;
    if candidates.len() < needed {
        return Err(Error::PoolTooSmall {
            pool: candidates.len(),
            needed,
        });
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    let totals: Vec<f64> = candidates.iter().map(CandidatePair::w2_total).collect();
    order.sort_by(|&a, &b| totals[a].total_cmp(&totals[b]).then(a.cmp(&b)));
    let pos: HashSet<usize> = order[..per_class].iter().copied().collect();
    let neg: HashSet<usize> = order[order.len() - per_class..].iter().copied().collect();
    let mut pools = LabelPools::default();
    for (i, pair) in candidates.into_iter().enumerate() {
        if pos.contains(&i) {
            pools.positives.push(LabeledPair {
                pair,
                label: 1,
                source: LabelSource::Bootstrap,
            });
        } else if neg.contains(&i) {
            pools.negatives.push(LabeledPair {
                pair,
                label: 0,
                source: LabelSource::Bootstrap,
            });
        } else {
            pools.unlabeled.push(pair);
        }
    }
    Ok(pools)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    CertainPositive,
    CertainNegative,
    UncertainPositive,
    UncertainNegative,
}

impl Category {
    pub const PRIORITY: [Category; 4] = [
        Category::CertainPositive,
        Category::CertainNegative,
        Category::UncertainPositive,
        Category::UncertainNegative,
    ];

    pub fn predicted_positive(self) -> bool {
        matches!(self, Category::CertainPositive | Category::UncertainPositive)
    }

    pub fn is_certain(self) -> bool {
        matches!(self, Category::CertainPositive | Category::CertainNegative)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::CertainPositive => "certain_positive",
            Category::CertainNegative => "certain_negative",
            Category::UncertainPositive => "uncertain_positive",
            Category::UncertainNegative => "uncertain_negative",
        })
    }
}

/// Model outputs for one unlabeled pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredCandidate {
    pub probability: f64,
    pub entropy: f64,
    /// Positive-distance density at the pair's latent distance.
    pub density: f64,
}

/// Number of pairs drawn per category, in priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSplit(pub [usize; 4]);

impl BatchSplit {
    /// Splits a batch as evenly as possible, certain categories first;
    /// a batch of 10 is split 3/3/2/2.
    pub fn even(batch: usize) -> Self {
        let mut q = [batch / 4; 4];
        for slot in q.iter_mut().take(batch % 4) {
            *slot += 1;
        }
        BatchSplit(q)
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

impl Default for BatchSplit {
    fn default() -> Self {
        BatchSplit::even(DEFAULT_BATCH_SIZE)
    }
}

/// Category score; lower is preferred. `None` when the pair is not
/// eligible for the category.
pub fn category_score(c: Category, s: &ScoredCandidate, threshold: f64) -> Option<f64> {
    let positive = s.probability > threshold;
    if positive != c.predicted_positive() {
        return None;
    }
    let h = s.entropy.max(SCORE_FLOOR);
    let f = s.density.max(SCORE_FLOOR);
    if !c.is_certain() && s.entropy <= SCORE_FLOOR {
        return None;
    }
    Some(match c {
        Category::CertainPositive => h / f,
        Category::CertainNegative => h * f,
        Category::UncertainPositive => f / h,
        Category::UncertainNegative => 1.0 / (h * f),
    })
}

/// Picks up to `split.total()` candidates: each category's quota by
/// ascending score, a pair going to the first category in priority order
/// that takes it. Slots a category cannot fill go to the other categories
/// in priority order. Returns `(candidate index, category)` in selection
/// order.
pub fn select_samples(scored: &[ScoredCandidate], split: BatchSplit, threshold: f64) -> Vec<(usize, Category)> {
    let ranked: Vec<Vec<usize>> = Category::PRIORITY
        .iter()
        .map(|&c| {
            let mut v: Vec<(f64, usize)> = scored
                .iter()
                .enumerate()
                .filter_map(|(i, s)| category_score(c, s, threshold).map(|x| (x, i)))
                .collect();
            v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            v.into_iter().map(|(_, i)| i).collect()
        })
        .collect();
    let mut cursor = [0usize; 4];
    let mut taken = HashSet::new();
    let mut out = Vec::new();
    let mut next = |ci: usize, taken: &mut HashSet<usize>| -> Option<usize> {
        while cursor[ci] < ranked[ci].len() {
            let i = ranked[ci][cursor[ci]];
            cursor[ci] += 1;
            if taken.insert(i) {
                return Some(i);
            }
        }
        None
    };
    for (ci, &quota) in split.0.iter().enumerate() {
        for _ in 0..quota {
            match next(ci, &mut taken) {
                Some(i) => out.push((i, Category::PRIORITY[ci])),
                None => break,
            }
        }
    }
    let total = split.total();
    let mut progress = true;
    while out.len() < total && progress {
        progress = false;
        for ci in 0..4 {
            if out.len() == total {
                break;
            }
            if let Some(i) = next(ci, &mut taken) {
                out.push((i, Category::PRIORITY[ci]));
                progress = true;
            }
        }
    }
    out
}
