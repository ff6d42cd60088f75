//! Command-line front end: `oracle`, `sample`, `fit`, `asymptotics` and
//! `simulate`.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::Parser;

pub mod args;
pub mod asymptotics;
pub mod error;
pub mod fit;
pub mod io;
pub mod oracle;
pub mod sample;
pub mod simulate;

pub use args::{Cli, Command, Format};
pub use error::{CliError, Result};

pub struct Context {
    pub seed: u64,
    /// The seed when given explicitly; configs keep their own otherwise.
    pub seed_override: Option<u64>,
    pub format: Format,
    pub out: Option<PathBuf>,
}

fn dispatch(ctx: &Context, command: &Command) -> Result<()> {
    match command {
        Command::Oracle(a) => oracle::run(ctx, a),
        Command::Sample(a) => sample::run(ctx, a).map(drop),
        Command::Fit(a) => fit::run(ctx, a).map(drop),
        Command::Asymptotics(a) => asymptotics::run(ctx, a).map(drop),
        Command::Simulate(a) => simulate::run(ctx, a),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let ctx = Context {
        seed: cli.seed.unwrap_or(args::DEFAULT_SEED),
        seed_override: cli.seed,
        format: cli.format,
        out: cli.out.clone(),
    };
    if !matches!(cli.command, Command::Simulate(_) | Command::Fit(_)) {
        eprintln!("seed = {}", ctx.seed);
    }
    match cli.threads {
        Some(0) => Err(CliError::Usage("--threads must be positive".into())),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            pool.install(|| dispatch(&ctx, &cli.command))
        }
        None => dispatch(&ctx, &cli.command),
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
