use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use fwm::config::{PredictorId, RunConfig};
use fwm::{harness, report};
use fwm_core::envsim::EnvId;
use fwm_core::metrics::Norm;

#[derive(Parser)]
#[command(name = "fwm", version, about = "Object-centric world model evaluation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and write an episode corpus.
    Generate(RunArgs),
    /// Run closed-loop predictions over a corpus and write results.jsonl.
    Evaluate(RunArgs),
    /// Aggregate results into tables (text and CSV).
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_env)]
    env: Option<EnvId>,
    #[arg(long, value_enum)]
    predictor: Option<PredictorId>,
    /// Input length; repeatable.
    #[arg(long)]
    m: Vec<usize>,
    /// Prediction horizon; repeatable.
    #[arg(long)]
    k: Vec<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_norm)]
    norm: Option<Norm>,
    /// Corpus to evaluate (defaults to --out).
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Keep every predicted trajectory under <out>/predictions.
    #[arg(long)]
    save_predictions: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Results file; repeat to combine predictors into one table.
    #[arg(long, required = true)]
    results: Vec<PathBuf>,
    /// Directory for tables.txt and tables.csv; stdout only when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for true-vs-predicted frame strips.
    #[arg(long)]
    strips: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    strip_frames: usize,
}

fn parse_env(s: &str) -> Result<EnvId, String> {
    s.parse().map_err(|e: fwm_core::error::Error| e.to_string())
}

fn parse_norm(s: &str) -> Result<Norm, String> {
    s.parse().map_err(|e: fwm_core::error::Error| e.to_string())
}

impl RunArgs {
    fn resolve(self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(env) = self.env {
            cfg.env = env;
        }
        if let Some(p) = self.predictor {
            cfg.predictor.id = p;
        }
        if !self.m.is_empty() {
            cfg.m = self.m;
        }
        if !self.k.is_empty() {
            cfg.k = self.k;
        }
        if let Some(n) = self.episodes {
            cfg.episodes = n;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = self.out {
            cfg.out = o;
        }
        if let Some(n) = self.norm {
            cfg.norm = n;
        }
        if let Some(c) = self.corpus {
            cfg.corpus = Some(c);
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        cfg.save_predictions |= self.save_predictions;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Generate(args) => {
            let cfg = args.resolve()?;
            let corpus = harness::cmd_generate(&cfg)?;
            println!("{} {} episodes written to {}", corpus.episodes.len(), cfg.env.name(), cfg.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate(args) => {
            let cfg = args.resolve()?;
            let s = harness::cmd_evaluate(&cfg)?;
            println!(
                "{} records ({} windows) -> {}; {} errors -> {}",
                s.records,
                s.windows,
                s.results_path.display(),
                s.errors,
                s.errors_path.display()
            );
            Ok(if s.errors == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Report(args) => {
            let mut records = Vec::new();
            let mut files = Vec::new();
            for path in &args.results {
                let file = report::load_results(path)?;
                records.extend(file.records.iter().cloned());
                files.push((path, file));
            }
            let tables = report::build_tables(&records)?;
            let text = report::render_text(&tables);
            print!("{text}");
            if let Some(out) = &args.out {
                std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
                std::fs::write(out.join("tables.txt"), &text)?;
                std::fs::write(out.join("tables.csv"), report::render_csv(&tables)?)?;
            }
            if let Some(dir) = &args.strips {
                let mut n = 0;
                for (path, file) in &files {
                    let base = path.parent().unwrap_or_else(|| std::path::Path::new("."));
                    n += report::write_strips(file, base, dir, args.strip_frames)?.len();
                }
                eprintln!("{n} frame strips written to {}", dir.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
