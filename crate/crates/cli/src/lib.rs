//! Command-line front end and local HTTP session service.

pub mod args;
pub mod commands;
pub mod inputs;
pub mod server;

use std::fmt;

pub use args::Cli;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_BAD_PATH: i32 = 2;
pub const EXIT_INCOMPATIBLE: i32 = 3;
pub const EXIT_EMPTY_TRUTH: i32 = 4;
pub const EXIT_PORT_BUSY: i32 = 5;

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

impl From<vaer::Error> for Failure {
    fn from(e: vaer::Error) -> Self {
        use vaer::Error as E;
        let code = match &e {
            E::Io { .. } => EXIT_BAD_PATH,
            E::Dimension { .. } | E::Arity { .. } | E::DimensionTooLarge { .. } | E::ModelFormat(_) => {
                EXIT_INCOMPATIBLE
            }
            _ => EXIT_FAILURE,
        };
        Failure::new(code, e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

pub fn run(cli: Cli) -> CliResult<()> {
    use args::Command as C;
    match cli.command {
        C::Synth(a) => commands::synth(&a),
        C::TrainRepr(a) => commands::train_repr(&a),
        C::Candidates(a) => commands::candidates(&a),
        C::Match(a) => commands::train_match(&a),
        C::Predict(a) => commands::predict(&a),
        C::Evaluate(a) => commands::evaluate(&a),
        C::Serve(a) => commands::serve(&a),
    }
}
