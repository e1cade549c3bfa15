//! `causaldann` command-line runner.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 when a pipeline
//! stage fails.

use std::path::PathBuf;
use std::process::ExitCode;

use causaldann::experiment::{self, ExperimentConfig, Method, Recipe, CONFIG_FILE};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "causaldann", version, about = "Estimate causal effects of text interventions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the dataset: corpus, outcomes and ground truth.
    Generate(Opts),
    /// Fit cross-fitted outcome and propensity models per seed.
    Train(Opts),
    /// Turn stored predictions into per-seed effect estimates.
    Estimate(Opts),
    /// Aggregate estimates into report.json and report.txt.
    Report(Opts),
    /// Run all stages in order.
    Run(Opts),
    /// Parse and check a config, then print it with defaults filled in.
    ValidateConfig(Opts),
}

#[derive(Args)]
struct Opts {
    /// Experiment config (JSON). Stages after `generate` fall back to
    /// `<out>/config.json`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// LLM response cache directory.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Mock LLM fixture file.
    #[arg(long = "mock-llm")]
    mock_llm: Option<PathBuf>,
    /// Use the HTTP LLM adapter (reads CAUSALDANN_LLM_API_KEY).
    #[arg(long)]
    http: bool,
    /// Comma-separated seeds, e.g. `0,1,2`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated methods: baseline, baseline_ipw, dann, dann_ipw.
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<String>>,
    /// Built-in recipe: amazon_stars, aita_comments, aita_anger, synthetic.
    #[arg(long)]
    recipe: Option<String>,
    /// JSONL corpus.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Number of cross-fitting folds.
    #[arg(long)]
    folds: Option<usize>,
}

enum Failure {
    Config(String),
    Pipeline(String),
}

fn load_config(opts: &Opts, fallback_to_out: bool) -> Result<ExperimentConfig, Failure> {
    let config_err = |e: causaldann::Error| Failure::Config(e.to_string());
    let mut cfg = match &opts.config {
        Some(p) => {
            let s = std::fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            ExperimentConfig::parse(&s).map_err(config_err)?
        }
        None => {
            let stored = opts.out.as_ref().map(|o| o.join(CONFIG_FILE)).filter(|p| fallback_to_out && p.exists());
            match stored {
                Some(p) => {
                    let s = std::fs::read_to_string(&p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
                    ExperimentConfig::parse(&s).map_err(config_err)?
                }
                None => ExperimentConfig::default(),
            }
        }
    };
    if let Some(o) = &opts.out {
        cfg.output_dir = o.clone();
    }
    if let Some(c) = &opts.cache {
        cfg.cache_dir = Some(c.clone());
    }
    if let Some(m) = &opts.mock_llm {
        cfg.llm.mock_fixture = Some(m.clone());
    }
    if opts.http {
        cfg.llm.http = true;
    }
    if let Some(s) = &opts.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(ms) = &opts.method {
        cfg.method = ms
            .iter()
            .map(|m| Method::parse(m).ok_or_else(|| Failure::Config(format!("--method: unknown value {m:?}"))))
            .collect::<Result<_, _>>()?;
    }
    if let Some(r) = &opts.recipe {
        cfg.recipe = Some(Recipe::parse(r).ok_or_else(|| Failure::Config(format!("--recipe: unknown value {r:?}")))?);
    }
    if let Some(d) = &opts.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(k) = opts.folds {
        cfg.folds = k;
    }
    cfg.check().map_err(config_err)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let pipeline = |e: causaldann::Error| {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Pipeline(e.to_string())
        }
    };
    match cli.command {
        Command::ValidateConfig(o) => {
            let cfg = load_config(&o, false)?;
            print!("{}", cfg.to_json());
        }
        Command::Generate(o) => {
            let cfg = load_config(&o, false)?;
            let ds = experiment::generate(&cfg).map_err(pipeline)?;
            println!(
                "wrote {} units ({} pairs, {} dropped) to {}",
                ds.summary.n_units,
                ds.summary.n_pairs,
                ds.summary.dropped,
                cfg.output_dir.display()
            );
        }
        Command::Train(o) => {
            let cfg = load_config(&o, true)?;
            experiment::train(&cfg).map_err(pipeline)?;
        }
        Command::Estimate(o) => {
            let cfg = load_config(&o, true)?;
            experiment::estimate(&cfg).map_err(pipeline)?;
        }
        Command::Report(o) => {
            let cfg = load_config(&o, true)?;
            experiment::report(&cfg).map_err(pipeline)?;
            print_table(&cfg)?;
        }
        Command::Run(o) => {
            let cfg = load_config(&o, false)?;
            experiment::run_pipeline(&cfg).map_err(pipeline)?;
            print_table(&cfg)?;
        }
    }
    Ok(())
}

fn print_table(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let p = cfg.output_dir.join(experiment::TABLE_FILE);
    let table = std::fs::read_to_string(&p).map_err(|e| Failure::Pipeline(format!("{}: {e}", p.display())))?;
    print!("{table}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Pipeline(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
