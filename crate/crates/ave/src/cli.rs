use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::commands;
use crate::config::Overrides;

#[derive(Debug, Parser)]
#[command(name = "ave", version, about = "Optimize, evaluate and transfer video-generation judge prompts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a dataset file. Exits 1 when records are invalid.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        taxonomy: PathBuf,
    },
    /// Print the stratified train/val/test assignment.
    Split {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        taxonomy: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimize the judge prompt, then score it once on the test split.
    Optimize(RunArgs),
    /// Score a frozen prompt (default: the run's p*) on the test split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        prompt: Option<PathBuf>,
    },
    /// Score a transferred prompt with the target judge against its baseline.
    Adapt {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        prompt: Option<PathBuf>,
    },
    /// Restate every instruction with the understanding model.
    Rewrite(RunArgs),
    /// Pass rates per model and category from recorded verdicts.
    Report {
        #[arg(long)]
        verdicts: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        taxonomy: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run multi-turn interaction episodes.
    Interact {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        stub: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub budget_usd: Option<f64>,
    /// f1, mcc or rec-fpr.
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub votes: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// pareto or best.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Stub backend file replacing every configured provider of the same name.
    #[arg(long)]
    pub stub: Option<PathBuf>,
    /// Record timestamps as 0 so that repeated runs are byte-identical.
    #[arg(long)]
    pub fixed_clock: bool,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            budget_usd: self.budget_usd,
            metric: self.metric.clone(),
            votes: self.votes,
            batch_size: self.batch_size,
            strategy: self.strategy.clone(),
            stub: self.stub.clone(),
        }
    }
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> anyhow::Result<()> {
    writeln!(out, "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Runs one command, writing its report to `out`. Returns the process exit
/// status for successful runs; errors map to 2 in `main`.
pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<u8> {
    match cli.command {
        Command::Validate { dataset, taxonomy } => {
            let summary = commands::validate(&dataset, &taxonomy)?;
            for issue in &summary.issues {
                writeln!(out, "{issue}")?;
            }
            writeln!(out, "{} records decoded, {} issues", summary.records, summary.issues.len())?;
            return Ok(u8::from(!summary.issues.is_empty()));
        }
        Command::Split { dataset, taxonomy, seed, out: file } => {
            let splits = commands::split(&dataset, &taxonomy, seed)?;
            match file {
                Some(path) => std::fs::write(&path, serde_json::to_string_pretty(&splits)? + "\n")?,
                None => print_json(out, &splits)?,
            }
        }
        Command::Optimize(args) => {
            let (dir, summary) = commands::optimize(&args.config, &args.overrides(), args.fixed_clock)?;
            print_json(out, &summary)?;
            writeln!(out, "run directory: {}", dir.display())?;
        }
        Command::Eval { run, prompt } => {
            let (dir, rows) = commands::eval(&run.config, &run.overrides(), prompt.as_deref(), run.fixed_clock)?;
            write!(out, "{}", crate::reports::metric_csv(&rows)?)?;
            writeln!(out, "written to {}", dir.display())?;
        }
        Command::Adapt { run, prompt } => {
            let (dir, summary) = commands::adapt(&run.config, &run.overrides(), prompt.as_deref(), run.fixed_clock)?;
            print_json(out, &summary)?;
            writeln!(out, "written to {}", dir.display())?;
        }
        Command::Rewrite(args) => {
            let (dir, n) = commands::rewrite(&args.config, &args.overrides(), args.fixed_clock)?;
            writeln!(out, "rewrote {n} instructions into {}", dir.join("rewrites.jsonl").display())?;
        }
        Command::Report { verdicts, profiles, dataset, taxonomy, out: dir } => {
            let report = commands::report(&verdicts, &profiles, &dataset, &taxonomy, &dir)?;
            write!(out, "{}", crate::reports::pass_rate_csv(&report)?)?;
            for (model, n) in &report.excluded {
                writeln!(out, "{model}: {n} cases excluded by capability")?;
            }
        }
        Command::Interact { config, seed, stub } => {
            let (dir, summary) = commands::interact(&config, seed, stub.as_deref())?;
            print_json(out, &summary)?;
            writeln!(out, "written to {}", dir.display())?;
        }
    }
    Ok(0)
}
