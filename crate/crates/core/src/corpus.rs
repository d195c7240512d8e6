//! Input tables, labeled pair sets and attribute-value tokenization.
//!
//! Tables are read from RFC-4180 CSV with a mandatory header row. Every cell
//! is kept as text; missing values are stored as empty strings so that every
//! record carries exactly `arity` values.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One tuple of a table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub values: Vec<String>,
}

impl Record {
    pub fn new(id: impl Into<String>, values: Vec<String>) -> Self {
        Record { id: id.into(), values }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub name: String,
    pub attributes: Vec<String>,
    records: Vec<Record>,
    index: HashMap<String, usize>,
}

impl Table {
    /// Builds a table, checking record widths and id uniqueness.
    pub fn new(name: impl Into<String>, attributes: Vec<String>, records: Vec<Record>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::InvalidArgument("table arity must be at least 1".into()));
        }
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.values.len() != attributes.len() {
                return Err(Error::RowWidth {
                    row: i + 2,
                    expected: attributes.len(),
                    found: r.values.len(),
                });
            }
            if index.insert(r.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(Table {
            name: name.into(),
            attributes,
            records,
            index,
        })
    }

    pub fn arity(&self) -> usize {
        self.attributes.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&Record> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Every attribute value of the table, row-major.
    pub fn sentences(&self) -> impl Iterator<Item = &str> {
        self.records.iter().flat_map(|r| r.values.iter().map(String::as_str))
    }

    /// Writes the table back as CSV. The id column is emitted first when
    /// `id_column` is given.
    pub fn write_csv<W: Write>(&self, writer: W, id_column: Option<&str>) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| Error::Parse {
            path: self.name.clone().into(),
            message: e.to_string(),
        };
        let mut header: Vec<&str> = Vec::with_capacity(self.arity() + 1);
        if let Some(id) = id_column {
            header.push(id);
        }
        header.extend(self.attributes.iter().map(String::as_str));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.records {
            let mut row: Vec<&str> = Vec::with_capacity(self.arity() + 1);
            if id_column.is_some() {
                row.push(&r.id);
            }
            row.extend(r.values.iter().map(String::as_str));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(&self.name, e))?;
        Ok(())
    }
}

/// Loads a delimited table whose ids are the zero-based row indices.
pub fn load_table(path: impl AsRef<Path>, delimiter: char) -> Result<Table> {
    load_table_with_id(path, delimiter, None)
}

/// Loads a delimited table. When `id_column` names a header field, that
/// column provides record ids and is not treated as an attribute.
pub fn load_table_with_id(path: impl AsRef<Path>, delimiter: char, id_column: Option<&str>) -> Result<Table> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_table(file, &name, delimiter, id_column).map_err(|e| match e {
        Error::Parse { message, .. } => Error::Parse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

pub fn read_table<R: Read>(reader: R, name: &str, delimiter: char, id_column: Option<&str>) -> Result<Table> {
    if !delimiter.is_ascii() {
        return Err(Error::InvalidArgument(format!(
            "delimiter {delimiter:?} must be a single ASCII character"
        )));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter as u8)
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let parse_err = |e: csv::Error| Error::Parse {
        path: name.into(),
        message: e.to_string(),
    };
    let header: Vec<String> = rdr.headers().map_err(parse_err)?.iter().map(str::to_owned).collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Parse {
            path: name.into(),
            message: "missing header row".into(),
        });
    }
    let id_pos = match id_column {
        Some(col) => Some(header.iter().position(|h| h == col).ok_or_else(|| Error::Parse {
            path: name.into(),
            message: format!("id column `{col}` not in header"),
        })?),
        None => None,
    };
    let attributes: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != id_pos)
        .map(|(_, h)| h.clone())
        .collect();

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(parse_err)?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(i + 2);
        if row.len() != header.len() {
            return Err(Error::RowWidth {
                row: line,
                expected: header.len(),
                found: row.len(),
            });
        }
        let id = match id_pos {
            Some(p) => row[p].to_owned(),
            None => i.to_string(),
        };
        let values = row
            .iter()
            .enumerate()
            .filter(|(j, _)| Some(*j) != id_pos)
            .map(|(_, v)| v.to_owned())
            .collect();
        records.push(Record { id, values });
    }
    Table::new(name, attributes, records)
}

/// Lowercases and splits on every character that is not alphanumeric.
pub fn tokenize_value(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Truncates or pads a table to `target_arity` columns so that it can be fed
/// to a representation model trained on a different arity.
pub fn align_arity(table: &Table, target_arity: usize) -> Result<Table> {
    if target_arity == 0 {
        return Err(Error::InvalidArgument("target arity must be at least 1".into()));
    }
    let m = table.arity();
    let mut attributes: Vec<String> = table.attributes.iter().take(target_arity).cloned().collect();
    for i in m..target_arity {
        attributes.push(format!("_pad{i}"));
    }
    let records = table
        .records
        .iter()
        .map(|r| {
            let mut values: Vec<String> = r.values.iter().take(target_arity).cloned().collect();
            values.resize(target_arity, String::new());
            Record::new(r.id.clone(), values)
        })
        .collect();
    Table::new(table.name.clone(), attributes, records)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledPairRow {
    #[serde(alias = "ltable_id")]
    pub left_id: String,
    #[serde(alias = "rtable_id")]
    pub right_id: String,
    pub label: u8,
}

/// Given duplicate / non-duplicate example pairs between two tables.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSet {
    pub pairs: Vec<LabeledPairRow>,
}

impl PairSet {
    pub fn new(pairs: Vec<LabeledPairRow>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        for p in &pairs {
            if p.label > 1 {
                return Err(Error::InvalidArgument(format!(
                    "label {} for ({}, {}) is not 0 or 1",
                    p.label, p.left_id, p.right_id
                )));
            }
            if !seen.insert((p.left_id.as_str(), p.right_id.as_str())) {
                return Err(Error::DuplicatePair(p.left_id.clone(), p.right_id.clone()));
            }
        }
        Ok(PairSet { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.label == 1).count()
    }

    /// Checks every id against its table.
    pub fn validate(&self, left: &Table, right: &Table) -> Result<()> {
        for p in &self.pairs {
            if left.get(&p.left_id).is_none() {
                return Err(Error::UnknownId {
                    table: left.name.clone(),
                    id: p.left_id.clone(),
                });
            }
            if right.get(&p.right_id).is_none() {
                return Err(Error::UnknownId {
                    table: right.name.clone(),
                    id: p.right_id.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for p in &self.pairs {
            w.serialize(p).map_err(|e| Error::Parse {
                path: "pairs".into(),
                message: e.to_string(),
            })?;
        }
        w.flush().map_err(|e| Error::io("pairs", e))?;
        Ok(())
    }
}

/// Reads a `left_id,right_id,label` CSV; `ltable_id,rtable_id,label` headers
/// are accepted too.
pub fn load_pairs(path: impl AsRef<Path>) -> Result<PairSet> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut pairs = Vec::new();
    for row in rdr.deserialize::<LabeledPairRow>() {
        pairs.push(row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?);
    }
    PairSet::new(pairs)
}
