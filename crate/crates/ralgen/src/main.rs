use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ralgen::{exit_code, load_config, run, Stage, EXIT_CONFIG};

/// Runs one stage of the RAL latent-prior pipeline.
#[derive(Parser, Debug)]
#[command(name = "ralgen", version)]
struct Args {
    /// vqvae | prior | ral | sample | complete | eval | oracle | ablation
    stage: Stage,
    /// `section.key = value` file; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Ok(v) = std::env::var("RALGEN_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => ralgen_core::parallel::set_threads(n),
            _ => {
                eprintln!("error: RALGEN_THREADS must be a positive integer, got `{v}`");
                return ExitCode::from(EXIT_CONFIG as u8);
            }
        }
    }
    let result = load_config(args.config.as_deref()).and_then(|cfg| run(args.stage, &cfg, args.seed, &args.out));
    match result {
        Ok(summary) => {
            print!("{}", summary.text());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
