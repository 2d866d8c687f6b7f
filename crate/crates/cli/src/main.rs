//! `qsynth`: run one synthesis strategy from a config file.
//!
//! Exit status is 0 on success, 1 when the run fails and 2 when the
//! configuration is invalid.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qsynth_core::config::{ProviderKind, RunConfig, Strategy};
use qsynth_core::pipeline::{materialize_databases, run_pipeline, PipelineError};

#[derive(Parser)]
#[command(
    name = "qsynth",
    version,
    about = "Synthesize (question, SQL) training pairs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Retrieve similar training pairs, fill their question templates, and
    /// keep cycle-consistent questions.
    Reformer(RunArgs),
    /// Rewrite training questions with schema context.
    Paraphrase(RunArgs),
    /// Fill SQL templates for each database, then describe and reword them.
    Craft(RunArgs),
    /// Replace query constants with other values from the same columns.
    Perturb(RunArgs),
    /// Score a generated dataset with BLEU and self-BLEU.
    Evaluate(RunArgs),
    /// Print the default configuration as TOML.
    DefaultConfig,
    /// Build SQLite databases from `<db_id>.sql` scripts.
    Materialize {
        #[arg(long)]
        scripts: PathBuf,
        #[arg(long)]
        db_root: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Stub,
    Http,
}

/// Flags override the config file.
#[derive(Args)]
struct RunArgs {
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    provider: Option<ProviderArg>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    schemas: Option<PathBuf>,
    #[arg(long)]
    db_root: Option<PathBuf>,
    #[arg(long)]
    new_queries: Option<PathBuf>,
    #[arg(long)]
    categories: Option<PathBuf>,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long)]
    ted: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    paraphrase_lambda: Option<f64>,
    #[arg(long)]
    keep: Option<f64>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    paraphrases: Option<usize>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    validate_crafted: bool,
    #[arg(long)]
    per_category: bool,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: Option<PathBuf>) {
    if value.is_some() {
        *slot = value;
    }
}

impl RunArgs {
    fn into_config(self, strategy: Strategy) -> Result<RunConfig, PipelineError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        c.strategy = strategy;
        if self.seed.is_some() {
            c.seed = self.seed;
        }
        let p = &mut c.paths;
        set_path(&mut p.output_dir, self.output);
        set_path(&mut p.cache_dir, self.cache_dir);
        set_path(&mut p.train, self.train);
        set_path(&mut p.schemas, self.schemas);
        set_path(&mut p.db_root, self.db_root);
        set_path(&mut p.new_queries, self.new_queries);
        set_path(&mut p.categories, self.categories);
        set_path(&mut p.templates, self.templates);
        set_path(&mut p.dataset, self.dataset);
        set_path(&mut p.gold, self.gold);
        let t = &mut c.thresholds;
        set(&mut t.ted, self.ted);
        set(&mut t.lambda, self.lambda);
        set(&mut t.paraphrase_lambda, self.paraphrase_lambda);
        set(&mut t.keep, self.keep);
        set(&mut t.fraction, self.fraction);
        set(&mut t.top_k, self.top_k);
        set(&mut c.options.paraphrases, self.paraphrases);
        if self.limit.is_some() {
            c.options.limit = self.limit;
        }
        c.options.validate_crafted |= self.validate_crafted;
        c.options.per_category |= self.per_category;
        if let Some(p) = self.provider {
            c.provider.kind = match p {
                ProviderArg::Stub => ProviderKind::Stub,
                ProviderArg::Http => ProviderKind::Http,
            };
        }
        Ok(c)
    }
}

fn run(command: Command) -> Result<(), PipelineError> {
    let (args, strategy) = match command {
        Command::DefaultConfig => {
            print!("{}", RunConfig::default().to_toml());
            return Ok(());
        }
        Command::Materialize { scripts, db_root } => {
            for db_id in materialize_databases(&scripts, &db_root)? {
                println!("{db_id}");
            }
            return Ok(());
        }
        Command::Reformer(a) => (a, Strategy::Reformer),
        Command::Paraphrase(a) => (a, Strategy::Paraphrase),
        Command::Craft(a) => (a, Strategy::Craft),
        Command::Perturb(a) => (a, Strategy::Perturb),
        Command::Evaluate(a) => (a, Strategy::Evaluate),
    };
    let config = args.into_config(strategy)?;
    let outcome = run_pipeline(&config)?;
    print!("{}", outcome.summary.to_text());
    println!("output     {}", outcome.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                PipelineError::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
