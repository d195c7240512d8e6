use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::journal::now;
use super::{
    binary_entropy, bootstrap, expected_latent_distance, fit_kde, positive_distance_distribution, select_samples,
    BatchSplit, Category, JournalEntry, KdeDensity, LabelPools, LabelSource, ScoredCandidate,
    DEFAULT_BOOTSTRAP_PER_CLASS, DEFAULT_DISTANCE_SAMPLES,
};
use crate::corpus::PairSet;
use crate::error::{Error, Result};
use crate::ir::TableIrs;
use crate::matcher::{evaluate_examples, train_matcher, LabeledExample, MatcherConfig, MatcherModel};
use crate::metrics::Prf1;
use crate::neighbors::CandidatePair;
use crate::repr::{represent_records, GaussianRepr, VaeModel};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlConfig {
    pub bootstrap_per_class: usize,
    pub split: BatchSplit,
    pub distance_samples: usize,
    pub matcher: MatcherConfig,
}

impl Default for AlConfig {
    fn default() -> Self {
        AlConfig {
            bootstrap_per_class: DEFAULT_BOOTSTRAP_PER_CLASS,
            split: BatchSplit::default(),
            distance_samples: DEFAULT_DISTANCE_SAMPLES,
            matcher: MatcherConfig {
                holdout_fraction: 0.0,
                ..MatcherConfig::default()
            },
        }
    }
}

/// Read-only inputs shared by a session and its training jobs.
#[derive(Debug)]
pub struct AlContext {
    pub left: TableIrs,
    pub right: TableIrs,
    pub vae: VaeModel,
    pub left_reprs: Vec<GaussianRepr>,
    pub right_reprs: Vec<GaussianRepr>,
    /// Test pairs as `(left position, right position, label)`.
    test: Vec<(usize, usize, u8)>,
}

impl AlContext {
    pub fn new(left: TableIrs, right: TableIrs, vae: VaeModel, test: Option<&PairSet>) -> Result<Self> {
        let left_reprs = represent_records(&vae, left.irs())?;
        let right_reprs = represent_records(&vae, right.irs())?;
        let test = match test {
            None => Vec::new(),
            Some(set) => set
                .pairs
                .iter()
                .map(|p| Ok((locate(&left, &p.left_id)?, locate(&right, &p.right_id)?, p.label)))
                .collect::<Result<_>>()?,
        };
        Ok(AlContext {
            left,
            right,
            vae,
            left_reprs,
            right_reprs,
            test,
        })
    }

    fn positions(&self, pair: &CandidatePair) -> Result<(usize, usize)> {
        Ok((locate(&self.left, &pair.left_id)?, locate(&self.right, &pair.right_id)?))
    }
}

fn locate(t: &TableIrs, id: &str) -> Result<usize> {
    t.position(id).ok_or_else(|| Error::UnknownId {
        table: t.name.clone(),
        id: id.to_string(),
    })
}

/// A pair put to the labeler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub pair_id: usize,
    pub left_id: String,
    pub right_id: String,
    pub category: Category,
    pub probability: f64,
    pub entropy: f64,
    pub density: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    /// Labels supplied by the labeler so far.
    pub oracle_labels: usize,
    pub positives: usize,
    pub negatives: usize,
    pub unlabeled: usize,
    pub test: Option<Prf1>,
}

/// Matcher and positive-distance density for one iteration.
#[derive(Debug, Clone)]
pub struct TrainedState {
    pub matcher: MatcherModel,
    pub kde: KdeDensity,
    pub test: Option<Prf1>,
}

/// Everything needed to retrain off the session, e.g. on a worker thread.
#[derive(Debug, Clone)]
pub struct TrainingJob {
    ctx: Arc<AlContext>,
    config: AlConfig,
    iteration: usize,
    examples: Vec<(usize, usize, u8)>,
}

impl TrainingJob {
    pub fn run(&self) -> Result<TrainedState> {
        let ctx = &self.ctx;
        let examples: Vec<LabeledExample<'_>> = self
            .examples
            .iter()
            .map(|&(l, r, label)| LabeledExample {
                left: &ctx.left.irs()[l],
                right: &ctx.right.irs()[r],
                label,
            })
            .collect();
        let mut mcfg = self.config.matcher.clone();
        mcfg.seed = mcfg.seed.wrapping_add(self.iteration as u64);
        let (matcher, _) = train_matcher(&examples, &ctx.vae, &mcfg)?;

        let positives: Vec<(&GaussianRepr, &GaussianRepr)> = self
            .examples
            .iter()
            .filter(|e| e.2 == 1)
            .map(|&(l, r, _)| (&ctx.left_reprs[l], &ctx.right_reprs[r]))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mcfg.seed ^ 0x6b64_655f_7361_6d70);
        let distances = positive_distance_distribution(&positives, self.config.distance_samples, &mut rng)?;
        let kde = fit_kde(distances)?;

        let test = if ctx.test.is_empty() {
            None
        } else {
            let ex = ctx.test.iter().map(|&(l, r, label)| LabeledExample {
                left: &ctx.left.irs()[l],
                right: &ctx.right.irs()[r],
                label,
            });
            Some(evaluate_examples(&matcher, ex)?)
        };
        Ok(TrainedState { matcher, kde, test })
    }
}

/// An active-learning session: label pools, the current model and the
/// batch awaiting labels.
#[derive(Debug, Clone)]
pub struct Session {
    ctx: Arc<AlContext>,
    config: AlConfig,
    pools: LabelPools,
    pair_ids: HashMap<(String, String), usize>,
    iteration: usize,
    oracle_labels: usize,
    state: Option<TrainedState>,
    pending: Vec<Proposal>,
    history: Vec<IterationMetrics>,
}

impl Session {
    /// Bootstraps the pools from `candidates`; no model is trained yet.
    /// Pair ids are positions in `candidates`.
    pub fn bootstrap(ctx: Arc<AlContext>, candidates: Vec<CandidatePair>, config: AlConfig) -> Result<Self> {
        for c in &candidates {
            ctx.positions(c)?;
        }
        let pair_ids = candidates.iter().enumerate().map(|(i, c)| (c.key(), i)).collect();
        let pools = bootstrap(candidates, config.bootstrap_per_class)?;
        pools.check_disjoint()?;
        Ok(Session {
            ctx,
            config,
            pools,
            pair_ids,
            iteration: 0,
            oracle_labels: 0,
            state: None,
            pending: Vec::new(),
            history: Vec::new(),
        })
    }

    /// Bootstraps, replays `journal` and trains the model for the next batch.
    pub fn start(
        ctx: Arc<AlContext>,
        candidates: Vec<CandidatePair>,
        config: AlConfig,
        journal: &[JournalEntry],
    ) -> Result<Self> {
        let mut s = Session::bootstrap(ctx, candidates, config)?;
        s.replay(journal)?;
        let trained = s.training_job().run()?;
        s.install(trained)?;
        Ok(s)
    }

    /// Re-applies journaled labels, iteration by iteration.
    pub fn replay(&mut self, journal: &[JournalEntry]) -> Result<()> {
        let mut by_iteration: BTreeMap<usize, Vec<&JournalEntry>> = BTreeMap::new();
        for e in journal {
            by_iteration.entry(e.iteration).or_default().push(e);
        }
        for (it, entries) in by_iteration {
            for e in entries {
                self.pools.label(&e.left_id, &e.right_id, e.label, LabelSource::Human)?;
                self.oracle_labels += 1;
            }
            self.iteration = it + 1;
        }
        self.pending.clear();
        self.pools.check_disjoint()
    }

    pub fn context(&self) -> &Arc<AlContext> {
        &self.ctx
    }

    pub fn pools(&self) -> &LabelPools {
        &self.pools
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn oracle_labels(&self) -> usize {
        self.oracle_labels
    }

    pub fn pending(&self) -> &[Proposal] {
        &self.pending
    }

    pub fn history(&self) -> &[IterationMetrics] {
        &self.history
    }

    pub fn matcher(&self) -> Option<&MatcherModel> {
        self.state.as_ref().map(|s| &s.matcher)
    }

    pub fn latest_metrics(&self) -> Option<&IterationMetrics> {
        self.history.last()
    }

    /// Snapshot of the labeled pairs for retraining.
    pub fn training_job(&self) -> TrainingJob {
        let examples = self
            .pools
            .labeled()
            .map(|l| {
                let (a, b) = self.ctx.positions(&l.pair).expect("pool pairs were validated");
                (a, b, l.label)
            })
            .collect();
        TrainingJob {
            ctx: Arc::clone(&self.ctx),
            config: self.config.clone(),
            iteration: self.iteration,
            examples,
        }
    }

    /// Installs a retrained model, scores the unlabeled pool and proposes
    /// the next batch.
    pub fn install(&mut self, trained: TrainedState) -> Result<()> {
        let matcher = &trained.matcher;
        let left = matcher.represent_all(self.ctx.left.irs())?;
        let right = matcher.represent_all(self.ctx.right.irs())?;
        let positions: Vec<(usize, usize)> = self
            .pools
            .unlabeled
            .iter()
            .map(|p| self.ctx.positions(p))
            .collect::<Result<_>>()?;
        let reprs: Vec<_> = positions.iter().map(|&(l, r)| (&left[l], &right[r])).collect();
        let probs = matcher.probabilities_from_reprs(&reprs)?;
        let mut scored = Vec::with_capacity(probs.len());
        let mut distances = Vec::with_capacity(probs.len());
        for (&(l, r), &p) in positions.iter().zip(&probs) {
            let d = expected_latent_distance(&self.ctx.left_reprs[l], &self.ctx.right_reprs[r]);
            distances.push(d);
            scored.push(ScoredCandidate {
                probability: p,
                entropy: binary_entropy(p)?,
                density: trained.kde.evaluate(d),
            });
        }
        let selected = select_samples(&scored, self.config.split, matcher.threshold);
        self.pending = selected
            .into_iter()
            .map(|(i, category)| {
                let pair = &self.pools.unlabeled[i];
                Proposal {
                    pair_id: self.pair_ids[&pair.key()],
                    left_id: pair.left_id.clone(),
                    right_id: pair.right_id.clone(),
                    category,
                    probability: scored[i].probability,
                    entropy: scored[i].entropy,
                    density: scored[i].density,
                    distance: distances[i],
                }
            })
            .collect();
        let metrics = IterationMetrics {
            iteration: self.iteration,
            oracle_labels: self.oracle_labels,
            positives: self.pools.positives.len(),
            negatives: self.pools.negatives.len(),
            unlabeled: self.pools.unlabeled.len(),
            test: trained.test,
        };
        match &metrics.test {
            Some(t) => log::info!(
                "iteration {}: {} labels, test P {:.3} R {:.3} F1 {:.3}",
                metrics.iteration,
                metrics.oracle_labels,
                t.precision,
                t.recall,
                t.f1
            ),
            None => log::info!("iteration {}: {} labels", metrics.iteration, metrics.oracle_labels),
        }
        self.history.push(metrics);
        self.state = Some(trained);
        Ok(())
    }

    /// Applies labels for the whole pending batch, moving each pair to the
    /// pool its label names. Returns the journal lines to persist.
    pub fn apply_labels(&mut self, labels: &[(usize, u8)]) -> Result<Vec<JournalEntry>> {
        if self.pending.is_empty() {
            return Err(Error::InvalidArgument("no batch is awaiting labels".into()));
        }
        let expected: HashSet<usize> = self.pending.iter().map(|p| p.pair_id).collect();
        let given: HashMap<usize, u8> = labels.iter().copied().collect();
        if given.len() != labels.len() {
            return Err(Error::InvalidArgument("a pair is labeled more than once".into()));
        }
        if let Some((&id, _)) = given.iter().find(|(id, _)| !expected.contains(id)) {
            return Err(Error::InvalidArgument(format!("pair {id} is not in the pending batch")));
        }
        if let Some(p) = self.pending.iter().find(|p| !given.contains_key(&p.pair_id)) {
            return Err(Error::InvalidArgument(format!("pair {} is missing a label", p.pair_id)));
        }
        if let Some((id, l)) = given.iter().find(|(_, &l)| l > 1) {
            return Err(Error::InvalidArgument(format!(
                "pair {id}: label must be 0 or 1, got {l}"
            )));
        }
        let ts = now();
        let mut entries = Vec::with_capacity(self.pending.len());
        for p in std::mem::take(&mut self.pending) {
            let label = given[&p.pair_id];
            self.pools.label(&p.left_id, &p.right_id, label, LabelSource::Human)?;
            entries.push(JournalEntry {
                iteration: self.iteration,
                pair_id: p.pair_id,
                left_id: p.left_id,
                right_id: p.right_id,
                category: p.category,
                label,
                timestamp: ts,
            });
        }
        self.oracle_labels += entries.len();
        self.iteration += 1;
        Ok(entries)
    }
}

/// Supplies labels for a proposed batch; `None` ends the session early.
pub trait Labeler {
    fn label(&mut self, batch: &[Proposal]) -> Option<Vec<u8>>;
}

impl<F: FnMut(&[Proposal]) -> Option<Vec<u8>>> Labeler for F {
    fn label(&mut self, batch: &[Proposal]) -> Option<Vec<u8>> {
        self(batch)
    }
}

#[derive(Debug, Clone)]
pub struct AlOutcome {
    pub matcher: MatcherModel,
    /// Set when the labeler stopped before all iterations ran.
    pub partial: bool,
    pub history: Vec<IterationMetrics>,
    pub pools: LabelPools,
    pub journal: Vec<JournalEntry>,
}

/// Runs bootstrap and up to `iterations` label-retrain rounds.
pub fn al_loop(
    ctx: Arc<AlContext>,
    candidates: Vec<CandidatePair>,
    config: AlConfig,
    iterations: usize,
    labeler: &mut dyn Labeler,
) -> Result<AlOutcome> {
    let mut session = Session::start(ctx, candidates, config, &[])?;
    let mut journal = Vec::new();
    let mut partial = false;
    for _ in 0..iterations {
        if session.pending().is_empty() {
            break;
        }
        let Some(labels) = labeler.label(session.pending()) else {
            partial = true;
            break;
        };
        if labels.len() != session.pending().len() {
            return Err(Error::InvalidArgument(format!(
                "labeler returned {} labels for {} pairs",
                labels.len(),
                session.pending().len()
            )));
        }
        let ids: Vec<(usize, u8)> = session.pending().iter().map(|p| p.pair_id).zip(labels).collect();
        journal.extend(session.apply_labels(&ids)?);
        let trained = session.training_job().run()?;
        session.install(trained)?;
    }
    Ok(AlOutcome {
        matcher: session.matcher().expect("trained at start").clone(),
        partial,
        history: session.history().to_vec(),
        pools: session.pools().clone(),
        journal,
    })
}
