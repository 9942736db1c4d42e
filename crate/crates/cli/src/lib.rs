//! Command-line front end for driftline.
//!
//! Exit codes: 0 on success, 1 when a chain fails or a metric cannot be
//! computed, 2 on configuration errors and bad usage.

pub mod backends;
pub mod commands;
pub mod config;
pub mod report;
pub mod svg;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use driftline::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

const AFTER_HELP: &str = "Config keys are dotted paths given as trailing flags, e.g.
  driftline run --config run.json --chain.generations 10 --backends.model http://host:8000
The config file defaults to $DRIFTLINE_CONFIG.

Exit codes: 0 ok, 1 failed chain or metric error, 2 config error or bad usage.";

#[derive(Debug, Parser)]
#[command(name = "driftline", version, about = "Semantic drift harness for unified vision-language models", after_help = AFTER_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample 200+200 caption/image pairs and copy their images locally.
    Ingest {
        #[arg(long)]
        nocaps: PathBuf,
        #[arg(long)]
        docci: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "data/nd400")]
        out: PathBuf,
        #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..))]
        concurrency: u32,
    },
    /// Run (or resume) one chain per dataset item.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(value_name = "--KEY VALUE", trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Similarity series and MCD for every configured mapping.
    Series {
        #[arg(long)]
        run: PathBuf,
        #[arg(value_name = "--KEY VALUE", trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Power-law fits of the stored series.
    Fit {
        #[arg(long)]
        run: PathBuf,
        #[arg(value_name = "--KEY VALUE", trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Per-generation task scores and MGG.
    Mgg {
        #[arg(long)]
        run: PathBuf,
        #[arg(value_name = "--KEY VALUE", trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Charts and summary.json for one or more runs.
    Report {
        #[arg(long, required = true, value_delimiter = ',')]
        run: Vec<PathBuf>,
        /// Defaults to `<first run>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses trailing `--key value` / `--key=value` config overrides.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, Error> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(key) = arg.strip_prefix("--").filter(|k| !k.is_empty()) else {
            return Err(Error::Config(format!("unexpected argument `{arg}`; overrides are `--<key> <value>`")));
        };
        match key.split_once('=') {
            Some((k, v)) => out.push((k.to_owned(), v.to_owned())),
            None => {
                let v = it.next().ok_or_else(|| Error::Config(format!("flag `--{key}` needs a value")))?;
                out.push((key.to_owned(), v.clone()));
            }
        }
    }
    Ok(out)
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

fn execute(command: Command) -> driftline::Result<i32> {
    match command {
        Command::Ingest { nocaps, docci, seed, out, concurrency } => {
            commands::ingest(&nocaps, &docci, seed, &out, concurrency as usize)
        }
        Command::Run { config, overrides } => commands::run(config.as_deref(), &parse_overrides(&overrides)?),
        Command::Series { run, overrides } => commands::series(&run, &parse_overrides(&overrides)?),
        Command::Fit { run, overrides } => commands::fit(&run, &parse_overrides(&overrides)?),
        Command::Mgg { run, overrides } => commands::mgg(&run, &parse_overrides(&overrides)?),
        Command::Report { run, out } => commands::report(&run, out.as_deref()),
    }
}

/// Runs one command line (without the program name) and returns its exit
/// code. Diagnostics go to stderr.
pub fn dispatch(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(std::iter::once("driftline".to_owned()).chain(argv.iter().cloned())) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("driftline: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn overrides_accept_both_spellings() {
        let o = parse_overrides(&args("--tau=0.4 --chain.seed 3")).unwrap();
        assert_eq!(o, vec![("tau".into(), "0.4".into()), ("chain.seed".into(), "3".into())]);
        assert!(parse_overrides(&args("--tau")).is_err());
        assert!(parse_overrides(&args("stray")).is_err());
    }

    #[test]
    fn trailing_overrides_reach_the_command() {
        let cli = Cli::try_parse_from(args("driftline series --run r --tau 0.4 --mappings=text_to_text/clip")).unwrap();
        match cli.command {
            Command::Series { run, overrides } => {
                assert_eq!(run, PathBuf::from("r"));
                assert_eq!(overrides, args("--tau 0.4 --mappings=text_to_text/clip"));
            }
            other => panic!("{other:?}"),
        }
        let cli = Cli::try_parse_from(args("driftline report --run a,b")).unwrap();
        assert!(matches!(cli.command, Command::Report { run, .. } if run.len() == 2));
    }

    #[test]
    fn bad_usage_exits_two() {
        assert_eq!(dispatch(&args("frobnicate")), EXIT_CONFIG);
        assert_eq!(dispatch(&[]), EXIT_CONFIG);
        assert_eq!(dispatch(&args("fit")), EXIT_CONFIG);
        assert_eq!(dispatch(&args("ingest --nocaps a --docci b --concurrency 0")), EXIT_CONFIG);
        assert_eq!(dispatch(&args("help")), EXIT_OK);
        assert_eq!(dispatch(&args("--version")), EXIT_OK);
    }
}
