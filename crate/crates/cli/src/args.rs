use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

pub const SEED_ENV: &str = "VAER_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "vaer",
    version,
    about = "Entity resolution with variational tuple representations"
)]
pub struct Cli {
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic two-table dataset with planted duplicates.
    Synth(SynthArgs),
    /// Train (or, with --transfer, reuse) the representation model.
    TrainRepr(TrainReprArgs),
    /// LSH blocking: top-K right records for every left record.
    Candidates(CandidatesArgs),
    /// Train the Siamese matcher on labeled pairs.
    Match(MatchArgs),
    /// Score pairs with a trained matcher.
    Predict(PredictArgs),
    /// Precision, recall and F1 of predictions against truth pairs.
    Evaluate(EvaluateArgs),
    /// Run an active-learning session behind a local HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IrKind {
    /// TF-IDF + truncated SVD fitted on both tables.
    Lsa,
    /// Average of pre-trained word vectors (--embeddings).
    Embed,
    /// Vectors computed offline (--irs).
    Precomputed,
}

#[derive(Debug, Clone, Args)]
pub struct TableArgs {
    /// Left table (CSV with a header row).
    #[arg(long)]
    pub left: PathBuf,
    /// Right table.
    #[arg(long)]
    pub right: PathBuf,
    /// Header of the record id column; row numbers are used when absent.
    #[arg(long)]
    pub id_column: Option<String>,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// Pad (or cut) both tables to this many attributes.
    #[arg(long)]
    pub pad_to: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct IrArgs {
    #[arg(long, value_enum, default_value_t = IrKind::Lsa)]
    pub ir: IrKind,
    /// LSA dimension.
    #[arg(long, default_value_t = 300)]
    pub ir_dim: usize,
    /// Word-vector file for --ir embed (word2vec text format).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// IR file for --ir precomputed.
    #[arg(long)]
    pub irs: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DomainArg {
    Restaurants,
    Products,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SizeArg {
    /// 250 + 250 records, 100 duplicates, 200 training pairs.
    Standard,
    /// 533 + 331 records, 112 duplicates, 567 training pairs.
    Restaurants,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = DomainArg::Restaurants)]
    pub domain: DomainArg,
    #[arg(long, value_enum, default_value_t = SizeArg::Standard)]
    pub size: SizeArg,
    /// Overridden by VAER_SEED.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainReprArgs {
    #[command(flatten)]
    pub tables: TableArgs,
    #[command(flatten)]
    pub ir: IrArgs,
    /// Where to write the model.
    #[arg(long)]
    pub model: PathBuf,
    /// Reuse this trained model instead of training.
    #[arg(long)]
    pub transfer: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 200)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 100)]
    pub latent_dim: usize,
    /// Overridden by VAER_SEED.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CandidatesArgs {
    #[command(flatten)]
    pub tables: TableArgs,
    #[command(flatten)]
    pub ir: IrArgs,
    #[arg(long)]
    pub vae: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Overridden by VAER_SEED.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Pairs file whose positives are reported as recall@1..K.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[command(flatten)]
    pub tables: TableArgs,
    #[command(flatten)]
    pub ir: IrArgs,
    #[arg(long)]
    pub vae: PathBuf,
    /// Labeled pairs: left_id,right_id,label.
    #[arg(long)]
    pub train: PathBuf,
    /// Where to write the matcher.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub margin: f64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Fraction of pairs held out for the reported F1.
    #[arg(long, default_value_t = 0.1)]
    pub holdout: f64,
    /// Overridden by VAER_SEED.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub tables: TableArgs,
    #[command(flatten)]
    pub ir: IrArgs,
    #[arg(long)]
    pub matcher: PathBuf,
    /// Pairs to score (left_id,right_id[,label]); LSH candidates otherwise.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Candidates per left record when --pairs is absent.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Overridden by VAER_SEED.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Decision threshold; the model's own when absent.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Output CSV: left_id,right_id,probability,label.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Output of `predict`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Labeled pairs.
    #[arg(long)]
    pub truth: PathBuf,
    /// Also write the metrics as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub tables: TableArgs,
    #[command(flatten)]
    pub ir: IrArgs,
    #[arg(long)]
    pub vae: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    /// Candidates per left record.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Pairs per labeling batch.
    #[arg(long, default_value_t = 10)]
    pub batch: usize,
    /// Automatic labels per class at start.
    #[arg(long, default_value_t = 15)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0.5)]
    pub margin: f64,
    /// Overridden by VAER_SEED.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Label journal; an existing journal resumes the session.
    #[arg(long)]
    pub journal: PathBuf,
    /// Test pairs: excluded from labeling and scored after every retrain.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Where `finish` writes the final matcher.
    #[arg(long)]
    pub matcher_out: Option<PathBuf>,
}
