//! `nsh`: fit a neural distance field to a point cloud, then extract,
//! evaluate and analyze it.

mod commands;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use commands::{AnalyzeArgs, EvalArgs, ExtractArgs, FitArgs};

// The training loop allocates and frees large per-chunk buffers every
// iteration; the system allocator hands them back to the kernel each time.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "nsh", version, about = "Neural implicit surfaces from unoriented point clouds")]
struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "NSH_THREADS")]
    threads: Option<usize>,

    /// Repeat for more log output (-v progress, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network on a point cloud and write a checkpoint.
    Fit(FitArgs),
    /// Contour the zero level set of a trained network.
    Extract(ExtractArgs),
    /// Compare a predicted surface against a reference.
    Eval(EvalArgs),
    /// Critical points and Hessian statistics near the zero level set.
    Analyze(AnalyzeArgs),
}

fn main() -> ExitCode {
    let defaults = format!(
        "Config keys (TOML, passed with --config) and their defaults:\n\n{}",
        nsh_core::config::RunConfig::default().to_toml()
    );
    let mut cmd = Cli::command();
    for name in ["fit", "extract", "eval", "analyze"] {
        let text = defaults.clone();
        cmd = cmd.mut_subcommand(name, |s| s.after_long_help(text));
    }
    let cli = match Cli::from_arg_matches(&cmd.get_matches()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };

    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }

    let result = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Extract(a) => commands::extract(a),
        Command::Eval(a) => commands::eval(a),
        Command::Analyze(a) => commands::analyze(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
