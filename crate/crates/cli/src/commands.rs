//! One function per subcommand.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vaer::corpus::load_pairs;
use vaer::matcher::{examples_from_pairs, load_matcher, save_matcher, train_matcher, MatcherConfig};
use vaer::metrics::{prf1, recall_at_k};
use vaer::neighbors::{build_index, candidate_pairs, neighbor_lists, write_candidates, LshConfig};
use vaer::repr::{load_model_for, represent_records, save_model, train_vae, VaeConfig};
use vaer::synth::{generate, Domain, SynthConfig};

use crate::args::{
    CandidatesArgs, DomainArg, EvaluateArgs, MatchArgs, PredictArgs, ServeArgs, SizeArg, SynthArgs, TrainReprArgs,
};
use crate::inputs::{csv_failure, effective_seed, load_inputs, load_unlabeled_pairs, Inputs};
use crate::server::{self, SessionOptions};
use crate::{CliResult, Failure, EXIT_BAD_PATH, EXIT_EMPTY_TRUTH, EXIT_FAILURE};

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::new(EXIT_BAD_PATH, format!("{}: {e}", path.display())))
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(EXIT_BAD_PATH, format!("{}: {e}", path.display()))
}

pub fn synth(a: &SynthArgs) -> CliResult<()> {
    let seed = effective_seed(a.seed)?;
    let domain = match a.domain {
        DomainArg::Restaurants => Domain::Restaurants,
        DomainArg::Products => Domain::Products,
    };
    let config = match a.size {
        SizeArg::Standard => SynthConfig::standard(domain, seed),
        SizeArg::Restaurants => SynthConfig {
            domain,
            ..SynthConfig::restaurants_scale(seed)
        },
    };
    let ds = generate(&config)?;
    ds.write_to(&a.out)?;
    println!(
        "wrote {}: {} + {} records, {} duplicates, {} training and {} test pairs",
        a.out.display(),
        ds.left.len(),
        ds.right.len(),
        ds.matches.len(),
        ds.train.len(),
        ds.test.len()
    );
    Ok(())
}

pub fn train_repr(a: &TrainReprArgs) -> CliResult<()> {
    let seed = effective_seed(a.seed)?;
    let inputs = load_inputs(&a.tables, &a.ir)?;
    let vae = match &a.transfer {
        Some(source) => {
            let vae = load_model_for(source, inputs.ir_dim)?;
            vae.check_arity(inputs.left.arity())?;
            log::info!(
                "reusing {} (trained on IRs {}), training skipped",
                source.display(),
                vae.ir_fingerprint
            );
            vae
        }
        None => {
            let config = VaeConfig {
                hidden_dim: a.hidden_dim,
                latent_dim: a.latent_dim,
                epochs: a.epochs,
                batch_size: a.batch_size,
                seed,
                ..Default::default()
            };
            let (mut vae, report) = train_vae(&inputs.all_irs(), &config)?;
            for (i, loss) in report.epoch_losses.iter().enumerate() {
                println!("epoch {:>3} loss {loss:.6}", i + 1);
            }
            if report.stopped_early {
                log::info!("stopped early after {} epochs", report.epoch_losses.len());
            }
            vae.ir_fingerprint = inputs.ir_fingerprint.clone();
            vae
        }
    };
    save_model(&vae, &a.model)?;
    println!("wrote {}", a.model.display());
    Ok(())
}

pub fn candidates(a: &CandidatesArgs) -> CliResult<()> {
    let seed = effective_seed(a.seed)?;
    let inputs = load_inputs(&a.tables, &a.ir)?;
    let vae = load_model_for(&a.vae, inputs.ir_dim)?;
    let left = represent_records(&vae, inputs.left_irs.irs())?;
    let right = represent_records(&vae, inputs.right_irs.irs())?;
    let config = LshConfig {
        seed,
        ..Default::default()
    };
    let right_index = build_index(inputs.right_irs.ids().to_vec(), &right, &config)?;
    let pairs = candidate_pairs(inputs.left_irs.ids(), &left, &right_index, a.k)?;
    write_candidates(&pairs, create(&a.out)?)?;
    println!("wrote {} candidate pairs to {}", pairs.len(), a.out.display());
    if let Some(path) = &a.truth {
        let truth = load_pairs(path)?;
        let duplicates: Vec<(String, String)> = truth
            .pairs
            .iter()
            .filter(|p| p.label == 1)
            .map(|p| (p.left_id.clone(), p.right_id.clone()))
            .collect();
        if duplicates.is_empty() {
            return Err(Failure::new(
                EXIT_EMPTY_TRUTH,
                format!("empty truth: {} has no duplicate pairs", path.display()),
            ));
        }
        let left_index = build_index(inputs.left_irs.ids().to_vec(), &left, &config)?;
        let lists = neighbor_lists(&left_index, &right_index, &left, &right, a.k)?;
        println!("k,recall");
        for k in 1..=a.k {
            println!("{k},{:.4}", recall_at_k(&lists, &duplicates, k));
        }
    }
    Ok(())
}

pub fn train_match(a: &MatchArgs) -> CliResult<()> {
    let seed = effective_seed(a.seed)?;
    let inputs = load_inputs(&a.tables, &a.ir)?;
    let vae = load_model_for(&a.vae, inputs.ir_dim)?;
    let train = load_pairs(&a.train)?;
    train.validate(&inputs.left, &inputs.right)?;
    let examples = examples_from_pairs(&train, &inputs.left_irs, &inputs.right_irs)?;
    let config = MatcherConfig {
        margin: a.margin,
        epochs: a.epochs,
        batch_size: a.batch_size,
        holdout_fraction: a.holdout,
        seed,
        ..Default::default()
    };
    let (matcher, report) = train_matcher(&examples, &vae, &config)?;
    for (i, loss) in report.epoch_losses.iter().enumerate() {
        println!("epoch {:>3} loss {loss:.6}", i + 1);
    }
    println!(
        "trained on {} pairs, {} held out",
        report.train_size, report.holdout_size
    );
    if let Some(h) = &report.holdout {
        println!("held-out metrics\n{h}");
    }
    save_matcher(&matcher, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    left_id: String,
    right_id: String,
    probability: f64,
    label: u8,
}

fn check_matcher_inputs(matcher: &vaer::matcher::MatcherModel, inputs: &Inputs) -> CliResult<()> {
    if matcher.input_dim() != inputs.ir_dim {
        return Err(vaer::Error::Dimension {
            expected: matcher.input_dim(),
            actual: inputs.ir_dim,
        }
        .into());
    }
    if matcher.arity != inputs.left.arity() {
        return Err(vaer::Error::Arity {
            expected: matcher.arity,
            actual: inputs.left.arity(),
        }
        .into());
    }
    Ok(())
}

pub fn predict(a: &PredictArgs) -> CliResult<()> {
    let seed = effective_seed(a.seed)?;
    let matcher = load_matcher(&a.matcher)?;
    let inputs = load_inputs(&a.tables, &a.ir)?;
    check_matcher_inputs(&matcher, &inputs)?;
    let left = matcher.represent_all(inputs.left_irs.irs())?;
    let right = matcher.represent_all(inputs.right_irs.irs())?;
    let pairs: Vec<(String, String)> = match &a.pairs {
        Some(path) => load_unlabeled_pairs(path)?,
        None => {
            let config = LshConfig {
                seed,
                ..Default::default()
            };
            let index = build_index(inputs.right_irs.ids().to_vec(), &right, &config)?;
            candidate_pairs(inputs.left_irs.ids(), &left, &index, a.k)?
                .into_iter()
                .map(|c| (c.left_id, c.right_id))
                .collect()
        }
    };
    let position = |irs: &vaer::ir::TableIrs, id: &str| {
        irs.position(id).ok_or_else(|| vaer::Error::UnknownId {
            table: irs.name.clone(),
            id: id.to_string(),
        })
    };
    let refs = pairs
        .iter()
        .map(|(l, r)| {
            Ok((
                &left[position(&inputs.left_irs, l)?],
                &right[position(&inputs.right_irs, r)?],
            ))
        })
        .collect::<vaer::Result<Vec<_>>>()?;
    let probabilities = matcher.probabilities_from_reprs(&refs)?;
    let threshold = a.threshold.unwrap_or(matcher.threshold);
    let mut w = csv::Writer::from_writer(create(&a.out)?);
    let mut positives = 0;
    for ((l, r), p) in pairs.iter().zip(&probabilities) {
        let label = u8::from(*p > threshold);
        positives += label as usize;
        w.serialize(PredictionRow {
            left_id: l.clone(),
            right_id: r.clone(),
            probability: *p,
            label,
        })
        .map_err(|e| csv_failure(&a.out, e))?;
    }
    w.flush().map_err(|e| io_failure(&a.out, e))?;
    println!(
        "scored {} pairs, {positives} predicted duplicates (threshold {threshold}); wrote {}",
        pairs.len(),
        a.out.display()
    );
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let truth = load_pairs(&a.truth)?;
    if truth.is_empty() {
        return Err(Failure::new(
            EXIT_EMPTY_TRUTH,
            format!("empty truth: {} has no pairs", a.truth.display()),
        ));
    }
    let mut rdr = csv::Reader::from_path(&a.predictions).map_err(|e| csv_failure(&a.predictions, e))?;
    let mut predictions = HashMap::new();
    for row in rdr.deserialize::<PredictionRow>() {
        let row = row.map_err(|e| csv_failure(&a.predictions, e))?;
        if row.label > 1 {
            return Err(Failure::new(
                EXIT_FAILURE,
                format!("{}: label must be 0 or 1, got {}", a.predictions.display(), row.label),
            ));
        }
        predictions.insert((row.left_id, row.right_id), row.label == 1);
    }
    let scores = prf1(&predictions, &truth)?;
    println!("{scores}\n");
    let mut out = std::io::stdout().lock();
    scores
        .write_csv(&mut out)
        .map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    if let Some(path) = &a.csv {
        let mut w = create(path)?;
        scores
            .write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| io_failure(path, e))?;
    }
    Ok(())
}

pub fn serve(a: &ServeArgs) -> CliResult<()> {
    let seed = effective_seed(a.seed)?;
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| Failure::new(EXIT_FAILURE, format!("bad address {}:{}: {e}", a.host, a.port)))?;
    let inputs = load_inputs(&a.tables, &a.ir)?;
    let vae = load_model_for(&a.vae, inputs.ir_dim)?;
    let test = a.test.as_ref().map(load_pairs).transpose()?;
    let options = SessionOptions {
        k: a.k,
        batch: a.batch,
        bootstrap: a.bootstrap,
        margin: a.margin,
        seed,
    };
    let setup = server::Setup::prepare(
        inputs,
        vae,
        test.as_ref(),
        &options,
        a.journal.clone(),
        a.matcher_out.clone(),
    )?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::new(EXIT_FAILURE, format!("cannot start runtime: {e}")))?;
    runtime.block_on(server::serve(setup, addr))
}
