use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ric_core::runner::{
    emit_report, load_tasks, read_records, read_tasks, run_experiment, stats, BackendMode, ExperimentConfig,
    ReportOptions,
};

/// Runs and scores prompting-strategy experiments against a chat model.
#[derive(Debug, Parser)]
#[command(name = "ric", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment and write records plus a report.
    Run(RunArgs),
    /// Render a report from an existing records file.
    Report(ReportArgs),
    /// Check a config and its datasets without calling a model.
    Validate(ConfigArg),
    /// Per-cell response statistics for a records file.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// Experiment config (TOML or JSON).
    #[arg(value_name = "CONFIG", required_unless_present = "config_flag", conflicts_with = "config_flag")]
    config: Option<PathBuf>,
    #[arg(long = "config", value_name = "CONFIG")]
    config_flag: Option<PathBuf>,
}

impl ConfigArg {
    fn path(&self) -> &Path {
        self.config
            .as_deref()
            .or(self.config_flag.as_deref())
            .expect("clap requires one of the two")
    }

    fn load(&self) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig::load(self.path())?)
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Override the backend: live, replay, mock or mock:<script>.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    max_concurrency: Option<usize>,
    /// Output directory for records and report files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Add Random and Majority rows to the report.
    #[arg(long)]
    baselines: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    records: PathBuf,
    /// Task definitions; defaults to tasks.json next to the records file.
    #[arg(long)]
    tasks: Option<PathBuf>,
    #[arg(long)]
    baselines: bool,
    /// Also write report.md, scores.csv and analysis.csv here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    records: PathBuf,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Report(args) => report(args),
        Command::Validate(args) => validate(args),
        Command::Stats(args) => print_stats(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::FAILURE
        }
    }
}

/// Joins the error chain, skipping causes already spelled out by their parent.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn run(args: RunArgs) -> Result<()> {
    let mut config = args.config.load()?;
    if let Some(backend) = &args.backend {
        config.backend = BackendMode::parse_override(backend, &config.backend)?;
    }
    if let Some(n) = args.max_concurrency {
        config.max_concurrency = n;
    }
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    let summary = run_experiment(&config)?;
    let report = emit_report(&summary.records, &summary.tasks, ReportOptions { baselines: args.baselines })?;
    report.write_to(&config.output_dir)?;
    print!("{}", report.markdown);
    println!();
    println!("backend: {}", config.backend.name());
    println!("records: {}", summary.records_path.display());
    println!(
        "executed {}, resumed {}, errors {}",
        summary.executed, summary.resumed, summary.errors
    );
    println!(
        "backend calls {}, cache hits {}, network requests {}",
        summary.backend_calls, summary.cache_hits, summary.network_requests
    );
    if summary.errors > 0 {
        eprintln!("warning: {} questions failed; rerun to retry them", summary.errors);
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let records = read_records(&args.records)?;
    let tasks_path = match args.tasks {
        Some(path) => path,
        None => args.records.with_file_name("tasks.json"),
    };
    let tasks = read_tasks(&tasks_path).with_context(|| format!("loading tasks from {}", tasks_path.display()))?;
    let report = emit_report(&records, &tasks, ReportOptions { baselines: args.baselines })?;
    if let Some(out) = &args.out {
        report.write_to(out)?;
    }
    print!("{}", report.markdown);
    Ok(())
}

fn validate(args: ConfigArg) -> Result<()> {
    let config = args.load()?;
    config.validate()?;
    let tasks = load_tasks(&config)?;
    for prepared in &tasks {
        let excluded = prepared.loaded.report.excluded.len();
        println!(
            "{}: {} questions, {} excluded, {} labels, metric {:?}",
            prepared.task().id,
            prepared.loaded.instances.len(),
            excluded,
            prepared.task().labels.len(),
            prepared.task().metric,
        );
    }
    let questions: usize = tasks.iter().map(|t| t.loaded.instances.len()).sum();
    println!(
        "{} tasks x {} strategies, {} questions per strategy, backend {}",
        tasks.len(),
        config.strategies.len(),
        questions,
        config.backend.name()
    );
    Ok(())
}

fn print_stats(args: StatsArgs) -> Result<()> {
    let records = read_records(&args.records)?;
    if records.is_empty() {
        bail!("{}: no records", args.records.display());
    }
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
    println!("cell\ttask\tresponses\tkeywords\tturns\tabstain %\tcompletion tokens\terrors");
    for s in stats(&records) {
        let tokens = format!(
            "{}{:.2}",
            if s.usage.is_approximate() { "~" } else { "" },
            s.usage.mean_completion_tokens
        );
        println!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.cell,
            s.task_id,
            s.corpus.responses,
            fmt(s.corpus.mean_keyword_count),
            fmt(s.corpus.mean_turn_count),
            fmt(s.corpus.abstain_rate.map(|r| r * 100.0)),
            tokens,
            s.errors
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn render_skips_repeated_causes() {
        let inner = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        let e = anyhow::Error::new(inner).context("a.toml: gone");
        assert_eq!(render(&e), "a.toml: gone");
        let e = anyhow::anyhow!("root").context("outer");
        assert_eq!(render(&e), "outer: root");
    }

    #[test]
    fn config_flag_and_positional_are_exclusive() {
        assert!(Cli::try_parse_from(["ric", "validate", "a.toml", "--config", "b.toml"]).is_err());
        let cli = Cli::try_parse_from(["ric", "validate", "--config", "b.toml"]).unwrap();
        let Command::Validate(arg) = cli.command else { panic!() };
        assert_eq!(arg.path(), Path::new("b.toml"));
    }
}
