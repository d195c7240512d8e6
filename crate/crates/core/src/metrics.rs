//! Precision / recall / F1 over labeled pairs and recall@K for retrieval.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::PairSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    /// Counts `(predicted, actual)` outcomes.
    pub fn from_outcomes(outcomes: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = ConfusionCounts::default();
        for (pred, truth) in outcomes {
            match (pred, truth) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn scores(&self) -> Prf1 {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                (0.0, false)
            } else {
                (num as f64 / den as f64, true)
            }
        };
        let (precision, precision_defined) = ratio(self.tp, self.tp + self.fp);
        let (recall, recall_defined) = ratio(self.tp, self.tp + self.fn_);
        let (f1, f1_defined) = if precision + recall > 0.0 {
            (2.0 * precision * recall / (precision + recall), true)
        } else {
            (0.0, false)
        };
        Prf1 {
            precision,
            recall,
            f1,
            precision_defined,
            recall_defined,
            f1_defined,
            counts: *self,
        }
    }
}

/// Scores with flags marking the zero-denominator cases, which report 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_defined: bool,
    pub recall_defined: bool,
    pub f1_defined: bool,
    pub counts: ConfusionCounts,
}

impl Prf1 {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "precision,recall,f1,tp,fp,fn,tn")?;
        let c = self.counts;
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            self.precision, self.recall, self.f1, c.tp, c.fp, c.fn_, c.tn
        )
    }
}

impl fmt::Display for Prf1 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = |ok: bool| if ok { "" } else { " (undefined)" };
        let c = self.counts;
        writeln!(f, "{:<10} {:>8}", "metric", "value")?;
        writeln!(
            f,
            "{:<10} {:>8.4}{}",
            "precision",
            self.precision,
            mark(self.precision_defined)
        )?;
        writeln!(f, "{:<10} {:>8.4}{}", "recall", self.recall, mark(self.recall_defined))?;
        writeln!(f, "{:<10} {:>8.4}{}", "f1", self.f1, mark(self.f1_defined))?;
        write!(f, "tp={} fp={} fn={} tn={}", c.tp, c.fp, c.fn_, c.tn)
    }
}

/// Scores predictions keyed by `(left_id, right_id)` against a truth set.
pub fn prf1(predictions: &HashMap<(String, String), bool>, truth: &PairSet) -> Result<Prf1> {
    let mut missing = Vec::new();
    let mut outcomes = Vec::with_capacity(truth.len());
    for p in &truth.pairs {
        match predictions.get(&(p.left_id.clone(), p.right_id.clone())) {
            Some(&pred) => outcomes.push((pred, p.label == 1)),
            None => missing.push((p.left_id.clone(), p.right_id.clone())),
        }
    }
    if !missing.is_empty() {
        let count = missing.len();
        missing.truncate(10);
        return Err(Error::MissingPredictions { count, first: missing });
    }
    Ok(ConfusionCounts::from_outcomes(outcomes).scores())
}

/// Ranked neighbor lists in both directions between two tables.
#[derive(Debug, Clone, Default)]
pub struct NeighborLists {
    pub left_to_right: HashMap<String, Vec<String>>,
    pub right_to_left: HashMap<String, Vec<String>>,
}

/// Fraction of duplicate pairs `(a, b)` where `b` is among the first `k`
/// neighbors of `a` or `a` among the first `k` neighbors of `b`.
pub fn recall_at_k(neighbors: &NeighborLists, duplicates: &[(String, String)], k: usize) -> f64 {
    if duplicates.is_empty() || k == 0 {
        return 0.0;
    }
    let in_top = |lists: &HashMap<String, Vec<String>>, q: &str, target: &str| {
        lists
            .get(q)
            .map(|l| l.iter().take(k).any(|x| x == target))
            .unwrap_or(false)
    };
    let unique: HashSet<&(String, String)> = duplicates.iter().collect();
    let hits = unique
        .iter()
        .filter(|(a, b)| in_top(&neighbors.left_to_right, a, b) || in_top(&neighbors.right_to_left, b, a))
        .count();
    hits as f64 / unique.len() as f64
}
