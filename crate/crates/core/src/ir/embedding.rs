use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use ndarray::Array1;

use super::{hex_digest, IrProvider, IrVector};
use crate::corpus::{tokenize_value, Record};
use crate::error::{Error, Result};

/// Pre-trained word vectors, all of one dimension.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    fingerprint: String,
}

impl EmbeddingTable {
    pub fn new(dim: usize, vectors: HashMap<String, Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        for v in vectors.values() {
            if v.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    actual: v.len(),
                });
            }
        }
        let mut keys: Vec<&String> = vectors.keys().collect();
        keys.sort();
        let mut bytes = Vec::new();
        for k in keys {
            bytes.extend_from_slice(k.as_bytes());
            for x in &vectors[k] {
                bytes.extend_from_slice(&x.to_bits().to_le_bytes());
            }
        }
        let fingerprint = format!("embed:{dim}:{}", &hex_digest(bytes)[..16]);
        Ok(EmbeddingTable {
            dim,
            vectors,
            fingerprint,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Parses word2vec text format. An optional `count dim` header line is
    /// recognised and skipped.
    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut vectors = HashMap::new();
        let mut dim = None;
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line.map_err(|e| Error::io("embeddings", e))?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let rest: Vec<&str> = parts.collect();
            if i == 0 && rest.len() == 1 && token.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
                continue;
            }
            let values = rest
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    path: "embeddings".into(),
                    message: format!("line {}: {e}", i + 1),
                })?;
            let expected = *dim.get_or_insert(values.len());
            if values.len() != expected {
                return Err(Error::Dimension {
                    expected,
                    actual: values.len(),
                });
            }
            vectors.insert(token.to_lowercase(), values);
        }
        let dim = dim.ok_or_else(|| Error::InvalidArgument("embedding file is empty".into()))?;
        EmbeddingTable::new(dim, vectors)
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    EmbeddingTable::read(file)
}

/// Mean of the in-vocabulary token vectors; zero when no token is known.
pub fn ir_embedding_average(table: &EmbeddingTable, value: &str) -> IrVector {
    let mut sum = Array1::zeros(table.dim);
    let mut count = 0usize;
    for tok in tokenize_value(value) {
        if let Some(v) = table.vectors.get(&tok) {
            sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
            count += 1;
        }
    }
    if count > 0 {
        sum /= count as f64;
    }
    sum
}

impl IrProvider for EmbeddingTable {
    fn dim(&self) -> usize {
        self.dim
    }

    fn attribute_ir(&self, _table: &str, record: &Record, attr: usize) -> Result<IrVector> {
        let value = record.values.get(attr).ok_or(Error::Dimension {
            expected: attr + 1,
            actual: record.values.len(),
        })?;
        Ok(ir_embedding_average(self, value))
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }
}
