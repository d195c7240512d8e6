//! Euclidean LSH over concatenated representation means, with candidates
//! re-ranked by the full squared 2-Wasserstein distance.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::NeighborLists;
use crate::repr::GaussianRepr;

pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LshConfig {
    pub tables: usize,
    pub projections: usize,
    /// Bucket width is the sampled median pairwise mean distance divided by
    /// this value.
    pub width_divisor: f64,
    pub width_sample: usize,
    /// Indexes smaller than this are always scanned exhaustively.
    pub exhaustive_below: usize,
    pub seed: u64,
}

impl Default for LshConfig {
    fn default() -> Self {
        LshConfig {
            tables: 16,
            projections: 8,
            width_divisor: 4.0,
            width_sample: 200,
            exhaustive_below: 500,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone)]
struct HashTable {
    /// `projections × D`
    directions: Array2<f64>,
    offsets: Array1<f64>,
    buckets: HashMap<Vec<i64>, Vec<usize>>,
}

impl HashTable {
    fn key(&self, x: ArrayView1<f64>, width: f64) -> Vec<i64> {
        self.directions
            .dot(&x)
            .iter()
            .zip(&self.offsets)
            .map(|(&p, &b)| ((p + b) / width).floor() as i64)
            .collect()
    }
}

/// One neighbor of a query: its position in the index and `W₂²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub position: usize,
    pub w2: f64,
}

/// Immutable LSH index over a set of tuple representations.
#[derive(Debug, Clone)]
pub struct LshIndex {
    ids: Vec<String>,
    arity: usize,
    latent_dim: usize,
    /// `n × (m·k)` concatenated means and standard deviations.
    mu: Array2<f64>,
    sigma: Array2<f64>,
    width: f64,
    tables: Vec<HashTable>,
    exhaustive_below: usize,
}

fn stack(reprs: &[GaussianRepr], f: impl Fn(&GaussianRepr) -> &Array2<f64>) -> Array2<f64> {
    let dim = reprs[0].arity() * reprs[0].latent_dim();
    let flat: Vec<f64> = reprs.iter().flat_map(|r| f(r).iter().copied()).collect();
    Array2::from_shape_vec((reprs.len(), dim), flat).expect("uniform shapes")
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Builds the index. `ids[i]` names `reprs[i]`.
pub fn build_index(ids: Vec<String>, reprs: &[GaussianRepr], config: &LshConfig) -> Result<LshIndex> {
    if reprs.is_empty() {
        return Err(Error::InvalidArgument("cannot index an empty table".into()));
    }
    if ids.len() != reprs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} ids for {} representations",
            ids.len(),
            reprs.len()
        )));
    }
    let (arity, latent_dim) = (reprs[0].arity(), reprs[0].latent_dim());
    for r in reprs {
        if r.arity() != arity {
            return Err(Error::Arity {
                expected: arity,
                actual: r.arity(),
            });
        }
        if r.latent_dim() != latent_dim {
            return Err(Error::Dimension {
                expected: latent_dim,
                actual: r.latent_dim(),
            });
        }
    }
    let mu = stack(reprs, |r| &r.mu);
    let sigma = stack(reprs, |r| &r.sigma);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let n = reprs.len();
    let sample: Vec<usize> = if n <= config.width_sample {
        (0..n).collect()
    } else {
        rand::seq::index::sample(&mut rng, n, config.width_sample).into_vec()
    };
    let mut dists = Vec::new();
    for (a, &i) in sample.iter().enumerate() {
        for &j in &sample[a + 1..] {
            dists.push(sq_dist(mu.row(i), mu.row(j)).sqrt());
        }
    }
    let mut width = median(dists) / config.width_divisor;
    if !(width.is_finite() && width > 0.0) {
        width = 1.0;
    }

    let dim = mu.ncols();
    let tables = (0..config.tables)
        .map(|_| {
            let directions =
                Array2::from_shape_simple_fn((config.projections, dim), || rng.sample::<f64, _>(StandardNormal));
            let offsets = Array1::from_shape_simple_fn(config.projections, || rng.random_range(0.0..width));
            let mut table = HashTable {
                directions,
                offsets,
                buckets: HashMap::new(),
            };
            for (i, row) in mu.axis_iter(Axis(0)).enumerate() {
                let key = table.key(row, width);
                table.buckets.entry(key).or_default().push(i);
            }
            table
        })
        .collect();

    Ok(LshIndex {
        ids,
        arity,
        latent_dim,
        mu,
        sigma,
        width,
        tables,
        exhaustive_below: config.exhaustive_below,
    })
}

impl LshIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn table_count(&self) -> usize {
        self.tables.len()
    }

    /// Bucket key of every indexed record in table `t`.
    pub fn bucket_keys(&self, t: usize) -> Vec<Vec<i64>> {
        self.mu
            .axis_iter(Axis(0))
            .map(|row| self.tables[t].key(row, self.width))
            .collect()
    }

    fn check(&self, q: &GaussianRepr) -> Result<()> {
        if q.arity() != self.arity {
            return Err(Error::Arity {
                expected: self.arity,
                actual: q.arity(),
            });
        }
        if q.latent_dim() != self.latent_dim {
            return Err(Error::Dimension {
                expected: self.latent_dim,
                actual: q.latent_dim(),
            });
        }
        Ok(())
    }

    fn w2_to(&self, q_mu: ArrayView1<f64>, q_sigma: ArrayView1<f64>, i: usize) -> f64 {
        sq_dist(q_mu, self.mu.row(i)) + sq_dist(q_sigma, self.sigma.row(i))
    }

    /// Per-attribute `W₂²` between a query and indexed record `i`.
    pub fn attribute_w2(&self, query: &GaussianRepr, i: usize) -> Result<Vec<f64>> {
        self.check(query)?;
        let k = self.latent_dim;
        let (mu, sigma) = (self.mu.row(i), self.sigma.row(i));
        Ok((0..self.arity)
            .map(|a| {
                let (qm, qs) = query.attribute(a);
                let r = a * k..(a + 1) * k;
                sq_dist(qm, mu.slice(ndarray::s![r.clone()])) + sq_dist(qs, sigma.slice(ndarray::s![r]))
            })
            .collect())
    }

    /// Indexed records sharing a bucket with the query in any table.
    pub fn probe(&self, query: &GaussianRepr) -> Result<Vec<usize>> {
        self.check(query)?;
        let q = query.mu.iter().copied().collect::<Array1<f64>>();
        let mut seen = HashSet::new();
        for table in &self.tables {
            if let Some(b) = table.buckets.get(&table.key(q.view(), self.width)) {
                seen.extend(b.iter().copied());
            }
        }
        let mut out: Vec<usize> = seen.into_iter().collect();
        out.sort_unstable();
        Ok(out)
    }

    /// The `k` nearest indexed records by `W₂²`, drawn from the probed
    /// buckets or from a full scan when the index is small or the buckets
    /// hold fewer than `k` records. Ties break by index position.
    pub fn lookup(&self, query: &GaussianRepr, k: usize) -> Result<Vec<Neighbor>> {
        self.check(query)?;
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut pool = if self.len() < self.exhaustive_below {
            Vec::new()
        } else {
            self.probe(query)?
        };
        if pool.len() < k {
            pool = (0..self.len()).collect();
        }
        let q_mu: Array1<f64> = query.mu.iter().copied().collect();
        let q_sigma: Array1<f64> = query.sigma.iter().copied().collect();
        let mut scored: Vec<Neighbor> = pool
            .into_iter()
            .map(|i| Neighbor {
                position: i,
                w2: self.w2_to(q_mu.view(), q_sigma.view(), i),
            })
            .collect();
        scored.sort_by(|a, b| a.w2.total_cmp(&b.w2).then(a.position.cmp(&b.position)));
        scored.truncate(k);
        Ok(scored)
    }

    /// Exhaustive top-`k` by squared Euclidean distance between means.
    pub fn exact_mean_neighbors(&self, query: &GaussianRepr, k: usize) -> Result<Vec<usize>> {
        self.check(query)?;
        let q: Array1<f64> = query.mu.iter().copied().collect();
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .map(|i| (sq_dist(q.view(), self.mu.row(i)), i))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(scored.into_iter().take(k).map(|(_, i)| i).collect())
    }
}

/// An unlabeled candidate pair with its cached per-attribute `W₂²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub left_id: String,
    pub right_id: String,
    pub attribute_w2: Vec<f64>,
}

impl CandidatePair {
    pub fn key(&self) -> (String, String) {
        (self.left_id.clone(), self.right_id.clone())
    }

    pub fn w2_total(&self) -> f64 {
        self.attribute_w2.iter().sum()
    }
}

/// For each left record, its `k` nearest right records. Pairs are unique and
/// ordered by left record then rank.
pub fn candidate_pairs(
    left_ids: &[String],
    left: &[GaussianRepr],
    right: &LshIndex,
    k: usize,
) -> Result<Vec<CandidatePair>> {
    if left_ids.len() != left.len() {
        return Err(Error::InvalidArgument(format!(
            "{} ids for {} representations",
            left_ids.len(),
            left.len()
        )));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (id, q) in left_ids.iter().zip(left) {
        for n in right.lookup(q, k)? {
            let right_id = &right.ids[n.position];
            if seen.insert((id.clone(), right_id.clone())) {
                out.push(CandidatePair {
                    left_id: id.clone(),
                    right_id: right_id.clone(),
                    attribute_w2: right.attribute_w2(q, n.position)?,
                });
            }
        }
    }
    Ok(out)
}

/// Ranked neighbor lists in both directions, for recall@K.
pub fn neighbor_lists(
    left: &LshIndex,
    right: &LshIndex,
    left_reprs: &[GaussianRepr],
    right_reprs: &[GaussianRepr],
    k: usize,
) -> Result<NeighborLists> {
    let one_way =
        |queries: &LshIndex, reprs: &[GaussianRepr], target: &LshIndex| -> Result<HashMap<String, Vec<String>>> {
            queries
                .ids
                .iter()
                .zip(reprs)
                .map(|(id, q)| {
                    let list = target
                        .lookup(q, k)?
                        .into_iter()
                        .map(|n| target.ids[n.position].clone())
                        .collect();
                    Ok((id.clone(), list))
                })
                .collect()
        };
    Ok(NeighborLists {
        left_to_right: one_way(left, left_reprs, right)?,
        right_to_left: one_way(right, right_reprs, left)?,
    })
}

/// Writes `left_id,right_id,w2_total` rows.
pub fn write_candidates<W: Write>(pairs: &[CandidatePair], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::InvalidArgument(e.to_string());
    w.write_record(["left_id", "right_id", "w2_total"]).map_err(csv_err)?;
    for p in pairs {
        w.write_record([p.left_id.as_str(), p.right_id.as_str(), &format!("{:?}", p.w2_total())])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::attribute_w2;
    use ndarray::Array;

    fn random_reprs(rng: &mut ChaCha8Rng, n: usize, m: usize, k: usize) -> Vec<GaussianRepr> {
        (0..n)
            .map(|_| {
                GaussianRepr::new(
                    Array::from_shape_simple_fn((m, k), || rng.random_range(-1.0..1.0)),
                    Array::from_shape_simple_fn((m, k), || rng.random_range(0.05..0.5)),
                )
                .unwrap()
            })
            .collect()
    }

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn lsh_only() -> LshConfig {
        LshConfig {
            exhaustive_below: 0,
            ..Default::default()
        }
    }

    #[test]
    fn self_query_ranks_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let reprs = random_reprs(&mut rng, 30, 2, 4);
        let index = build_index(ids("r", 30), &reprs, &lsh_only()).unwrap();
        for (i, r) in reprs.iter().enumerate() {
            let top = index.lookup(r, 3).unwrap();
            assert_eq!(top[0].position, i);
            assert_eq!(top[0].w2, 0.0);
        }
    }

    #[test]
    fn builds_are_deterministic_and_identical_means_collide() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut reprs = random_reprs(&mut rng, 40, 2, 3);
        reprs[1] = reprs[0].clone();
        let a = build_index(ids("r", 40), &reprs, &LshConfig::default()).unwrap();
        let b = build_index(ids("r", 40), &reprs, &LshConfig::default()).unwrap();
        assert_eq!(a.table_count(), 16);
        for t in 0..a.table_count() {
            let keys = a.bucket_keys(t);
            assert_eq!(keys, b.bucket_keys(t));
            assert_eq!(keys[0], keys[1]);
            assert_eq!(keys.len(), 40);
            let total: usize = a.tables[t].buckets.values().map(Vec::len).sum();
            assert_eq!(total, 40);
        }
    }

    #[test]
    fn lookup_agrees_with_brute_force_w2() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let reprs = random_reprs(&mut rng, 20, 3, 4);
        let queries = random_reprs(&mut rng, 20, 3, 4);
        let index = build_index(ids("r", 20), &reprs, &lsh_only()).unwrap();
        let mut agree = 0;
        for q in &queries {
            let mut brute: Vec<(f64, usize)> = reprs
                .iter()
                .enumerate()
                .map(|(i, r)| (attribute_w2(q, r).unwrap().iter().sum(), i))
                .collect();
            brute.sort_by(|a, b| a.0.total_cmp(&b.0));
            let expected: Vec<usize> = brute.iter().take(10).map(|x| x.1).collect();
            let got: Vec<usize> = index.lookup(q, 10).unwrap().iter().map(|n| n.position).collect();
            agree += usize::from(expected == got);
        }
        assert!(agree >= 19, "{agree}/20");
    }

    #[test]
    fn w2_dominates_mean_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let reprs = random_reprs(&mut rng, 50, 2, 5);
        for p in &reprs[..10] {
            for q in &reprs {
                let w: f64 = attribute_w2(p, q).unwrap().iter().sum();
                let d = sq_dist(p.mean_concat().view(), q.mean_concat().view());
                assert!(w >= d);
            }
        }
    }

    #[test]
    fn lsh_recall_against_exact_mean_neighbors() {
        // Clustered data at the size where hashing is active.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let centers = random_reprs(&mut rng, 100, 2, 8);
        let reprs: Vec<GaussianRepr> = (0..800)
            .map(|i| {
                let c = &centers[i % 100];
                GaussianRepr::new(c.mu.mapv(|x| x + rng.random_range(-0.05..0.05)), c.sigma.clone()).unwrap()
            })
            .collect();
        let index = build_index(ids("r", 800), &reprs, &LshConfig::default()).unwrap();
        let mut hits = 0;
        let mut total = 0;
        for q in reprs.iter().step_by(8) {
            let exact: HashSet<usize> = index.exact_mean_neighbors(q, 10).unwrap().into_iter().collect();
            let got = index.lookup(q, 10).unwrap();
            hits += got.iter().filter(|n| exact.contains(&n.position)).count();
            total += 10;
        }
        let recall = hits as f64 / total as f64;
        assert!(recall >= 0.95, "{recall}");
    }

    #[test]
    fn candidate_pool_bounds_and_dedup() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let right = random_reprs(&mut rng, 30, 2, 3);
        let mut left = random_reprs(&mut rng, 12, 2, 3);
        left[0] = right[7].clone();
        let mut left_ids = ids("a", 12);
        // A repeated query id must not produce repeated pairs.
        left.push(left[0].clone());
        left_ids.push("a0".into());
        let index = build_index(ids("b", 30), &right, &LshConfig::default()).unwrap();
        let pool = candidate_pairs(&left_ids, &left, &index, 4).unwrap();
        assert!(pool.len() <= 12 * 4);
        let keys: HashSet<_> = pool.iter().map(CandidatePair::key).collect();
        assert_eq!(keys.len(), pool.len());
        assert!(keys.contains(&("a0".to_string(), "b7".to_string())));
        let exact = pool.iter().find(|p| p.left_id == "a0" && p.right_id == "b7").unwrap();
        assert_eq!(exact.w2_total(), 0.0);
        let mut buf = Vec::new();
        write_candidates(&pool, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("left_id,right_id,w2_total\n"));
        assert_eq!(text.lines().count(), pool.len() + 1);
    }

    #[test]
    fn mismatched_query_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let reprs = random_reprs(&mut rng, 5, 2, 3);
        let index = build_index(ids("r", 5), &reprs, &LshConfig::default()).unwrap();
        let q = random_reprs(&mut rng, 1, 3, 3).remove(0);
        assert!(matches!(index.lookup(&q, 2), Err(Error::Arity { .. })));
    }
}
