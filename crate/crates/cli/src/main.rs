use clap::Parser;

fn main() {
    let cli = vaer_cli::Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Err(e) = vaer_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
