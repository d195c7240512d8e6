//! Intermediate representations (IRs): dense vectors for single attribute
//! values that already carry similarity signal before any learning happens.

mod embedding;
mod lsa;
mod precomputed;

pub use embedding::{ir_embedding_average, load_embeddings, EmbeddingTable};
pub use lsa::{fit_lsa, LsaConfig, LsaModel};
pub use precomputed::{load_precomputed_irs, write_precomputed_irs, IrKey, PrecomputedIrs};

use ndarray::{Array1, Array2};

use crate::corpus::{Record, Table};
use crate::error::Result;

pub type IrVector = Array1<f64>;

/// `m × d` matrix whose row `i` is the IR of attribute `i`.
pub type IrMatrix = Array2<f64>;

/// Anything that can turn an attribute value into an IR vector.
pub trait IrProvider: Send + Sync {
    fn dim(&self) -> usize;

    /// IR of attribute `attr` of `record`, which lives in table `table`.
    fn attribute_ir(&self, table: &str, record: &Record, attr: usize) -> Result<IrVector>;

    /// Stable digest of the provider state, stored alongside trained models.
    fn fingerprint(&self) -> String;
}

pub fn encode_record_irs(table: &str, record: &Record, provider: &dyn IrProvider) -> Result<IrMatrix> {
    let d = provider.dim();
    let mut out = Array2::zeros((record.values.len(), d));
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        row.assign(&provider.attribute_ir(table, record, i)?);
    }
    Ok(out)
}

/// IR matrices for every record of `table`, in table order.
pub fn encode_table_irs(table: &Table, provider: &dyn IrProvider) -> Result<Vec<IrMatrix>> {
    table
        .records()
        .iter()
        .map(|r| encode_record_irs(&table.name, r, provider))
        .collect()
}

/// IR matrices of one table, addressable by record id.
#[derive(Debug, Clone)]
pub struct TableIrs {
    pub name: String,
    ids: Vec<String>,
    index: std::collections::HashMap<String, usize>,
    irs: Vec<IrMatrix>,
}

impl TableIrs {
    pub fn encode(table: &Table, provider: &dyn IrProvider) -> Result<Self> {
        let irs = encode_table_irs(table, provider)?;
        let ids: Vec<String> = table.records().iter().map(|r| r.id.clone()).collect();
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Ok(TableIrs {
            name: table.name.clone(),
            ids,
            index,
            irs,
        })
    }

    pub fn len(&self) -> usize {
        self.irs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.irs.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn irs(&self) -> &[IrMatrix] {
        &self.irs
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&IrMatrix> {
        self.position(id).map(|i| &self.irs[i])
    }
}

pub(crate) fn hex_digest(bytes: impl AsRef<[u8]>) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes.as_ref());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Record;

    fn cosine(a: &IrVector, b: &IrVector) -> f64 {
        a.dot(b) / (a.dot(a).sqrt() * b.dot(b).sqrt())
    }

    fn toy_corpus() -> Vec<&'static str> {
        vec![
            "coldplay mylo xyloto",
            "coldplay mylo",
            "coldplay viva la vida",
            "pink floyd the wall",
            "pink floyd animals",
            "the wall animals",
        ]
    }

    #[test]
    fn empty_record_gives_zero_matrix() {
        let lsa = fit_lsa(toy_corpus(), &LsaConfig::with_dim(3)).unwrap();
        let r = Record::new("x", vec![String::new(), String::new()]);
        let irs = encode_record_irs("t", &r, &lsa).unwrap();
        assert_eq!(irs.dim(), (2, 3));
        assert!(irs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicate_records_encode_identically() {
        let lsa = fit_lsa(toy_corpus(), &LsaConfig::with_dim(4)).unwrap();
        let a = Record::new("a", vec!["coldplay mylo".into(), "pink floyd".into()]);
        let b = Record::new("b", a.values.clone());
        assert_eq!(
            encode_record_irs("t", &a, &lsa).unwrap(),
            encode_record_irs("u", &b, &lsa).unwrap()
        );
    }

    #[test]
    fn lsa_similarity_ordering() {
        let lsa = fit_lsa(toy_corpus(), &LsaConfig::with_dim(3)).unwrap();
        let q = lsa.transform("coldplay mylo xyloto");
        let near = lsa.transform("coldplay mylo");
        let far = lsa.transform("pink floyd");
        assert!(cosine(&q, &near) > cosine(&q, &far));
    }
}
