//! Command-line front end: `validate`, `run`, `neighbors` and `report`.
//!
//! Exit codes: 0 on success, 1 when the configuration does not validate,
//! 2 when work fails at runtime.

pub mod commands;
pub mod config;
pub mod run;
pub mod validate;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "hatebench", version, about = "Hate speech tweet classification experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a config, its dataset and embedding file without training.
    Validate {
        config: PathBuf,
        /// Override a config value, e.g. `--set run.seed=7`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Cross-validate every spec in a config.
    Run {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Specs run concurrently (overrides run.jobs).
        #[arg(long)]
        jobs: Option<usize>,
        /// Output root (overrides output.dir and $HATEBENCH_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Nearest neighbors of words in a pretrained table and/or a checkpoint.
    Neighbors {
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, default_value_t = hatebench::embeddings::DEFAULT_DIM)]
        dim: usize,
        /// Read only the first N lines of the table.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated probe words.
        #[arg(long, value_delimiter = ',', required = true)]
        words: Vec<String>,
        #[arg(short, default_value_t = 10)]
        n: usize,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
    },
    /// Re-render the comparison table from stored reports.
    Report {
        /// Run directories or report files.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Markdown,
    Csv,
    Json,
}

fn init_logging(level: &str) {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_secs()
        .try_init();
}

fn load(config: &std::path::Path, sets: &[String]) -> Option<config::RunConfig> {
    match config::load_config(config, sets) {
        Ok(c) => Some(c),
        Err(e) => {
            eprintln!("error: {e}");
            None
        }
    }
}

fn report_problems(problems: &[String]) {
    eprintln!("configuration is invalid:");
    for p in problems {
        eprintln!("  - {p}");
    }
}

/// Runs one command and returns the process exit code.
pub fn execute(cli: Cli) -> u8 {
    match cli.command {
        Command::Validate { config, sets } => {
            init_logging("warn");
            let Some(cfg) = load(&config, &sets) else {
                return EXIT_INVALID;
            };
            match validate::validate(&cfg) {
                Ok(v) => {
                    println!("OK: {} specs, {} tweets", v.specs.len(), v.dataset.len());
                    EXIT_OK
                }
                Err(problems) => {
                    report_problems(&problems);
                    EXIT_INVALID
                }
            }
        }
        Command::Run { config, mut sets, jobs, out } => {
            if let Some(j) = jobs {
                sets.push(format!("run.jobs={j}"));
            }
            if let Some(o) = out {
                sets.push(format!("output.dir={}", toml::Value::String(o.display().to_string())));
            }
            let Some(cfg) = load(&config, &sets) else {
                init_logging("info");
                return EXIT_INVALID;
            };
            init_logging(&cfg.run.verbosity);
            let validated = match validate::validate(&cfg) {
                Ok(v) => v,
                Err(problems) => {
                    report_problems(&problems);
                    return EXIT_INVALID;
                }
            };
            match run::cmd_run(&cfg, validated) {
                Ok(summary) => {
                    if let Some(md) = &summary.table_markdown {
                        println!("{md}");
                    }
                    println!(
                        "{} completed, {} skipped, {} failed; artifacts in {}",
                        summary.completed,
                        summary.skipped,
                        summary.failed,
                        summary.dir.display()
                    );
                    if summary.failed == 0 {
                        EXIT_OK
                    } else {
                        EXIT_RUNTIME
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_RUNTIME
                }
            }
        }
        Command::Neighbors { table, dim, limit, checkpoint, words, n, format } => {
            init_logging("warn");
            let args = commands::NeighborArgs {
                table: table.as_deref().map(|p| (p, dim, limit)),
                checkpoint: checkpoint.as_deref(),
                words: &words,
                n,
            };
            match commands::cmd_neighbors(&args) {
                Ok(report) => {
                    match format {
                        Format::Json => println!("{}", serde_json::to_string_pretty(&report).unwrap()),
                        _ => print!("{}", report.to_markdown()),
                    }
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_RUNTIME
                }
            }
        }
        Command::Report { paths, format } => {
            init_logging("warn");
            match commands::cmd_report(&paths) {
                Ok(table) => {
                    match format {
                        Format::Markdown => print!("{}", table.to_markdown()),
                        Format::Csv => match table.to_csv() {
                            Ok(s) => print!("{s}"),
                            Err(e) => {
                                eprintln!("error: {e}");
                                return EXIT_RUNTIME;
                            }
                        },
                        Format::Json => println!("{}", serde_json::to_string_pretty(&table).unwrap()),
                    }
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_RUNTIME
                }
            }
        }
    }
}
