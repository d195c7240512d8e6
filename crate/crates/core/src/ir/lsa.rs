//! Latent semantic analysis over attribute values.
//!
//! Every non-empty attribute value is one document. Documents are weighted
//! with TF-IDF (smoothed idf `ln((1+N)/(1+df)) + 1`, rows L2-normalized) and
//! the term space is reduced to the top `d` right singular vectors.
//!
//! Small corpora are factored exactly through the eigendecomposition of the
//! smaller Gram matrix; larger ones through a randomized range finder with
//! power iterations.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{hex_digest, IrProvider, IrVector};
use crate::corpus::{tokenize_value, Record};
use crate::error::{Error, Result};

pub const DEFAULT_LSA_DIM: usize = 300;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LsaConfig {
    pub dim: usize,
    pub seed: u64,
    /// Corpora whose smaller side is at most this are factored exactly.
    pub exact_limit: usize,
    pub oversample: usize,
    pub power_iterations: usize,
}

impl Default for LsaConfig {
    fn default() -> Self {
        LsaConfig {
            dim: DEFAULT_LSA_DIM,
            seed: 0x15a,
            exact_limit: 1000,
            oversample: 20,
            power_iterations: 3,
        }
    }
}

impl LsaConfig {
    pub fn with_dim(dim: usize) -> Self {
        LsaConfig {
            dim,
            ..Default::default()
        }
    }
}

type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsaModel {
    vocabulary: BTreeMap<String, usize>,
    idf: Vec<f64>,
    /// `|V| × d`; column `j` is the j-th right singular vector.
    term_factors: Array2<f64>,
    singular_values: Vec<f64>,
    fingerprint: String,
}

impl LsaModel {
    pub fn dim(&self) -> usize {
        self.term_factors.ncols()
    }

    pub fn vocabulary(&self) -> &BTreeMap<String, usize> {
        &self.vocabulary
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// The `d × |V|` projection; rows are orthonormal.
    pub fn projection(&self) -> Array2<f64> {
        self.term_factors.t().to_owned()
    }

    /// L2-normalized TF-IDF weights of a sentence; out-of-vocabulary tokens
    /// are dropped.
    pub fn tfidf(&self, sentence: &str) -> Vec<(usize, f64)> {
        let tokens = tokenize_value(sentence);
        let ids = tokens.iter().filter_map(|t| self.vocabulary.get(t).copied());
        weigh(ids, &self.idf)
    }

    pub fn transform(&self, sentence: &str) -> IrVector {
        let mut out = Array1::zeros(self.dim());
        for (c, w) in self.tfidf(sentence) {
            out.scaled_add(w, &self.term_factors.row(c));
        }
        out
    }

    fn compute_fingerprint(&mut self) {
        let mut bytes = Vec::with_capacity(self.idf.len() * 8 + self.term_factors.len() * 8);
        bytes.extend_from_slice(b"lsa\0");
        bytes.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        for (tok, id) in &self.vocabulary {
            bytes.extend_from_slice(tok.as_bytes());
            bytes.extend_from_slice(&(*id as u64).to_le_bytes());
        }
        for v in self.idf.iter().chain(self.term_factors.iter()) {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        self.fingerprint = format!("lsa:{}:{}", self.dim(), &hex_digest(bytes)[..16]);
    }
}

impl IrProvider for LsaModel {
    fn dim(&self) -> usize {
        self.term_factors.ncols()
    }

    fn attribute_ir(&self, _table: &str, record: &Record, attr: usize) -> Result<IrVector> {
        let value = record.values.get(attr).ok_or(Error::Dimension {
            expected: attr + 1,
            actual: record.values.len(),
        })?;
        Ok(self.transform(value))
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }
}

fn weigh(ids: impl Iterator<Item = usize>, idf: &[f64]) -> SparseRow {
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for id in ids {
        *counts.entry(id).or_insert(0.0) += 1.0;
    }
    let mut row: SparseRow = counts.into_iter().map(|(c, tf)| (c, tf * idf[c])).collect();
    let norm = row.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        row.iter_mut().for_each(|(_, w)| *w /= norm);
    }
    row
}

/// Fits an LSA model on every non-empty sentence of `corpus`.
pub fn fit_lsa<'a, I>(corpus: I, config: &LsaConfig) -> Result<LsaModel>
where
    I: IntoIterator<Item = &'a str>,
{
    let docs: Vec<Vec<String>> = corpus
        .into_iter()
        .map(tokenize_value)
        .filter(|t| !t.is_empty())
        .collect();
    if docs.is_empty() {
        return Err(Error::InvalidArgument("LSA corpus has no non-empty sentence".into()));
    }
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in &docs {
        let mut seen: Vec<&str> = doc.iter().map(String::as_str).collect();
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let n = docs.len();
    let vocabulary: BTreeMap<String, usize> = df.keys().enumerate().map(|(i, t)| (t.to_string(), i)).collect();
    let idf: Vec<f64> = df
        .values()
        .map(|&f| ((1.0 + n as f64) / (1.0 + f as f64)).ln() + 1.0)
        .collect();
    let rows: Vec<SparseRow> = docs
        .iter()
        .map(|doc| weigh(doc.iter().map(|t| vocabulary[t]), &idf))
        .collect();

    let v = vocabulary.len();
    let max_dim = v.min(n);
    if config.dim == 0 || config.dim > max_dim {
        return Err(Error::DimensionTooLarge {
            requested: config.dim,
            max: max_dim,
        });
    }
    let (factors, singular_values) = if max_dim <= config.exact_limit {
        exact_factors(&rows, v, config.dim)
    } else {
        randomized_factors(&rows, v, config)
    };
    let mut model = LsaModel {
        vocabulary,
        idf,
        term_factors: to_ndarray(&factors),
        singular_values,
        fingerprint: String::new(),
    };
    model.compute_fingerprint();
    Ok(model)
}

fn to_ndarray(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Top-`d` right singular vectors from the eigendecomposition of the
/// smaller Gram matrix.
fn exact_factors(rows: &[SparseRow], v: usize, d: usize) -> (DMatrix<f64>, Vec<f64>) {
    let n = rows.len();
    if v <= n {
        let mut gram = DMatrix::<f64>::zeros(v, v);
        for row in rows {
            for &(a, wa) in row {
                for &(b, wb) in row {
                    gram[(a, b)] += wa * wb;
                }
            }
        }
        let (vecs, vals) = top_eigen(gram, d);
        let sv = vals.iter().map(|l| l.max(0.0).sqrt()).collect();
        (orthonormalize(vecs), sv)
    } else {
        let mut dense = DMatrix::<f64>::zeros(n, v);
        for (i, row) in rows.iter().enumerate() {
            for &(c, w) in row {
                dense[(i, c)] = w;
            }
        }
        let gram = &dense * dense.transpose();
        let (u, vals) = top_eigen(gram, d);
        let lmax = vals.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
        let mut factors = DMatrix::<f64>::zeros(v, d);
        let mut sv = Vec::with_capacity(d);
        for (j, &val) in vals.iter().enumerate().take(d) {
            let lambda = val.max(0.0);
            sv.push(lambda.sqrt());
            if lambda > lmax * 1e-12 {
                let col = dense.transpose() * u.column(j) / lambda.sqrt();
                factors.set_column(j, &col);
            }
        }
        (orthonormalize(factors), sv)
    }
}

fn top_eigen(gram: DMatrix<f64>, d: usize) -> (DMatrix<f64>, Vec<f64>) {
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut vecs = DMatrix::<f64>::zeros(eig.eigenvectors.nrows(), d);
    let mut vals = Vec::with_capacity(d);
    for (j, &src) in order.iter().take(d).enumerate() {
        vecs.set_column(j, &eig.eigenvectors.column(src));
        vals.push(eig.eigenvalues[src]);
    }
    (vecs, vals)
}

fn sparse_mul(rows: &[SparseRow], m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::<f64>::zeros(rows.len(), m.ncols());
    for (i, row) in rows.iter().enumerate() {
        for &(c, w) in row {
            for j in 0..m.ncols() {
                out[(i, j)] += w * m[(c, j)];
            }
        }
    }
    out
}

fn sparse_t_mul(rows: &[SparseRow], v: usize, m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::<f64>::zeros(v, m.ncols());
    for (i, row) in rows.iter().enumerate() {
        for &(c, w) in row {
            for j in 0..m.ncols() {
                out[(c, j)] += w * m[(i, j)];
            }
        }
    }
    out
}

fn randomized_factors(rows: &[SparseRow], v: usize, config: &LsaConfig) -> (DMatrix<f64>, Vec<f64>) {
    let n = rows.len();
    let d = config.dim;
    let l = (d + config.oversample).min(n).min(v);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let omega = DMatrix::<f64>::from_fn(v, l, |_, _| StandardNormal.sample(&mut rng));
    let mut q = sparse_mul(rows, &omega).qr().q();
    for _ in 0..config.power_iterations {
        let z = sparse_t_mul(rows, v, &q).qr().q();
        q = sparse_mul(rows, &z).qr().q();
    }
    // Bᵀ = Xᵀ Q; its left singular vectors are the right singular vectors of X.
    let bt = sparse_t_mul(rows, v, &q);
    let svd = bt.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut factors = DMatrix::<f64>::zeros(v, d);
    let mut sv = Vec::with_capacity(d);
    for (j, &src) in order.iter().take(d).enumerate() {
        factors.set_column(j, &u.column(src));
        sv.push(svd.singular_values[src]);
    }
    (orthonormalize(factors), sv)
}

/// Modified Gram-Schmidt (two passes) in column order. Degenerate columns
/// are replaced from the standard basis; each column's largest-magnitude
/// entry is made positive.
fn orthonormalize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    let mut probe = 0;
    for j in 0..cols {
        loop {
            for _ in 0..2 {
                for p in 0..j {
                    let prev = m.column(p).clone_owned();
                    let proj = prev.dot(&m.column(j));
                    m.column_mut(j).axpy(-proj, &prev, 1.0);
                }
            }
            let norm = m.column(j).norm();
            if norm > 1e-6 {
                m.column_mut(j).scale_mut(1.0 / norm);
                break;
            }
            let mut e = nalgebra::DVector::<f64>::zeros(rows);
            e[probe] = 1.0;
            probe += 1;
            m.set_column(j, &e);
        }
        let pivot = m
            .column(j)
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            m.column_mut(j).neg_mut();
        }
    }
    m
}
