//! Loading tables, IR providers and pair files from command-line arguments.

use std::collections::HashSet;
use std::path::Path;

use serde::Deserialize;
use vaer::corpus::{align_arity, load_table_with_id, PairSet, Table};
use vaer::ir::{fit_lsa, load_embeddings, load_precomputed_irs, IrProvider, LsaConfig, TableIrs};

use crate::args::{IrArgs, IrKind, TableArgs, SEED_ENV};
use crate::{CliResult, Failure, EXIT_BAD_PATH, EXIT_FAILURE};

/// `VAER_SEED` when set, the flag value otherwise.
pub fn effective_seed(flag: u64) -> CliResult<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::new(EXIT_FAILURE, format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

/// Both tables with their attribute IRs.
pub struct Inputs {
    pub left: Table,
    pub right: Table,
    pub left_irs: TableIrs,
    pub right_irs: TableIrs,
    pub ir_dim: usize,
    pub ir_fingerprint: String,
}

impl Inputs {
    pub fn all_irs(&self) -> Vec<vaer::ir::IrMatrix> {
        self.left_irs
            .irs()
            .iter()
            .chain(self.right_irs.irs())
            .cloned()
            .collect()
    }
}

pub fn load_tables(args: &TableArgs) -> CliResult<(Table, Table)> {
    let load = |p: &Path| -> CliResult<Table> {
        let t = load_table_with_id(p, args.delimiter, args.id_column.as_deref())?;
        Ok(match args.pad_to {
            Some(m) => align_arity(&t, m)?,
            None => t,
        })
    };
    let (left, right) = (load(&args.left)?, load(&args.right)?);
    if left.arity() != right.arity() {
        return Err(vaer::Error::Arity {
            expected: left.arity(),
            actual: right.arity(),
        }
        .into());
    }
    if left.name == right.name {
        return Err(Failure::new(
            EXIT_FAILURE,
            format!("both tables are named `{}`; use files with different names", left.name),
        ));
    }
    Ok((left, right))
}

pub fn provider(args: &IrArgs, left: &Table, right: &Table) -> CliResult<Box<dyn IrProvider>> {
    let required = |p: &Option<std::path::PathBuf>, flag: &str| {
        p.clone()
            .ok_or_else(|| Failure::new(EXIT_BAD_PATH, format!("--ir {flag} needs a file argument")))
    };
    Ok(match args.ir {
        IrKind::Lsa => {
            let corpus = left.sentences().chain(right.sentences());
            Box::new(fit_lsa(corpus, &LsaConfig::with_dim(args.ir_dim))?)
        }
        IrKind::Embed => Box::new(load_embeddings(required(&args.embeddings, "embed --embeddings")?)?),
        IrKind::Precomputed => {
            let irs = load_precomputed_irs(required(&args.irs, "precomputed --irs")?)?;
            irs.check_covers(&[left, right])?;
            Box::new(irs)
        }
    })
}

pub fn load_inputs(tables: &TableArgs, ir: &IrArgs) -> CliResult<Inputs> {
    let (left, right) = load_tables(tables)?;
    let provider = provider(ir, &left, &right)?;
    let left_irs = TableIrs::encode(&left, provider.as_ref())?;
    let right_irs = TableIrs::encode(&right, provider.as_ref())?;
    log::info!(
        "{} ({} records) and {} ({} records), {} attributes, IR dimension {}",
        left.name,
        left.len(),
        right.name,
        right.len(),
        left.arity(),
        provider.dim()
    );
    Ok(Inputs {
        ir_dim: provider.dim(),
        ir_fingerprint: provider.fingerprint(),
        left,
        right,
        left_irs,
        right_irs,
    })
}

#[derive(Debug, Deserialize)]
struct PairRow {
    #[serde(alias = "ltable_id")]
    left_id: String,
    #[serde(alias = "rtable_id")]
    right_id: String,
}

/// Reads `left_id,right_id` pairs, ignoring any further columns.
pub fn load_unlabeled_pairs(path: &Path) -> CliResult<Vec<(String, String)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_failure(path, e))?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in rdr.deserialize::<PairRow>() {
        let row = row.map_err(|e| csv_failure(path, e))?;
        if seen.insert((row.left_id.clone(), row.right_id.clone())) {
            out.push((row.left_id, row.right_id));
        }
    }
    Ok(out)
}

pub fn check_pairs_known(pairs: &PairSet, inputs: &Inputs) -> CliResult<()> {
    pairs.validate(&inputs.left, &inputs.right)?;
    Ok(())
}

pub fn csv_failure(path: &Path, e: csv::Error) -> Failure {
    match e.kind() {
        csv::ErrorKind::Io(io) => Failure::new(EXIT_BAD_PATH, format!("{}: {io}", path.display())),
        _ => Failure::new(EXIT_FAILURE, format!("{}: {e}", path.display())),
    }
}
