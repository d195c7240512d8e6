//! Import of IRs computed offline (contextual or relational embeddings).
//!
//! File layout: CSV header `table,record_id,attr_index,v0,...,v{d-1}`, one row
//! per attribute value.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use ndarray::Array1;

use super::{hex_digest, IrProvider, IrVector};
use crate::corpus::{Record, Table};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IrKey {
    pub table: String,
    pub record_id: String,
    pub attr: usize,
}

impl std::fmt::Display for IrKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.table, self.record_id, self.attr)
    }
}

#[derive(Debug, Clone)]
pub struct PrecomputedIrs {
    dim: usize,
    vectors: HashMap<IrKey, IrVector>,
    fingerprint: String,
}

impl PrecomputedIrs {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, key: &IrKey) -> Option<&IrVector> {
        self.vectors.get(key)
    }

    /// Fails unless every (record, attribute) of every table has a vector.
    pub fn check_covers(&self, tables: &[&Table]) -> Result<()> {
        let mut missing = Vec::new();
        for t in tables {
            for r in t.records() {
                for attr in 0..t.arity() {
                    let key = IrKey {
                        table: t.name.clone(),
                        record_id: r.id.clone(),
                        attr,
                    };
                    if !self.vectors.contains_key(&key) {
                        missing.push(key.to_string());
                    }
                }
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            let count = missing.len();
            missing.truncate(10);
            Err(Error::MissingIrs { count, first: missing })
        }
    }
}

pub fn load_precomputed_irs(path: impl AsRef<Path>) -> Result<PrecomputedIrs> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::Reader::from_reader(file);
    let header = rdr.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    if header.len() < 4 || &header[0] != "table" || &header[1] != "record_id" || &header[2] != "attr_index" {
        return Err(parse_err("expected header table,record_id,attr_index,v0,...".into()));
    }
    let dim = header.len() - 3;
    let mut vectors = HashMap::new();
    let mut bytes = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| parse_err(e.to_string()))?;
        if row.len() != header.len() {
            return Err(Error::Dimension {
                expected: dim,
                actual: row.len().saturating_sub(3),
            });
        }
        let attr = row[2]
            .parse::<usize>()
            .map_err(|e| parse_err(format!("attr_index `{}`: {e}", &row[2])))?;
        let values = row
            .iter()
            .skip(3)
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(e.to_string()))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(format!("non-finite value for {}/{}", &row[0], &row[1])));
        }
        for x in &values {
            bytes.extend_from_slice(&x.to_bits().to_le_bytes());
        }
        let key = IrKey {
            table: row[0].to_owned(),
            record_id: row[1].to_owned(),
            attr,
        };
        vectors.insert(key, Array1::from(values));
    }
    Ok(PrecomputedIrs {
        dim,
        vectors,
        fingerprint: format!("precomputed:{dim}:{}", &hex_digest(bytes)[..16]),
    })
}

/// Writes IRs in the import layout, sorted by key.
pub fn write_precomputed_irs<'a, W, I>(writer: W, dim: usize, entries: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (&'a IrKey, &'a IrVector)>,
{
    let mut entries: Vec<_> = entries.into_iter().collect();
    entries.sort_by(|a, b| a.0.cmp(b.0));
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Parse {
        path: "irs".into(),
        message: e.to_string(),
    };
    let mut header = vec!["table".to_string(), "record_id".into(), "attr_index".into()];
    header.extend((0..dim).map(|i| format!("v{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for (key, v) in entries {
        if v.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                actual: v.len(),
            });
        }
        let mut row = vec![key.table.clone(), key.record_id.clone(), key.attr.to_string()];
        // `{:?}` on f64 prints the shortest round-trip representation.
        row.extend(v.iter().map(|x| format!("{x:?}")));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("irs", e))?;
    Ok(())
}

impl IrProvider for PrecomputedIrs {
    fn dim(&self) -> usize {
        self.dim
    }

    fn attribute_ir(&self, table: &str, record: &Record, attr: usize) -> Result<IrVector> {
        let key = IrKey {
            table: table.to_owned(),
            record_id: record.id.clone(),
            attr,
        };
        self.vectors.get(&key).cloned().ok_or_else(|| Error::MissingIrs {
            count: 1,
            first: vec![key.to_string()],
        })
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }
}
