use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use hafix_core::cost::OrderPolicy;
use hafix_core::forge::{GithubForge, IssueForge};
use hafix_core::method::{Method, PromptStyle};
use hafix_core::mine::{MineOutcome, MineRequest};
use hafix_core::report;
use hafix_cli::commands::{self, RunFilters};
use hafix_cli::config::RunConfig;

#[derive(Parser)]
#[command(name = "hafix", version, about = "Mine, run and report history-augmented bug-fix experiments")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true, default_value = "hafix.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    FromStats,
    Pinned,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a fix commit into a candidate dataset record.
    Mine {
        /// Project directory name under repos_root.
        #[arg(long)]
        project: String,
        /// The fix commit (V4); any revision git accepts.
        #[arg(long)]
        fix_commit: String,
        /// Key of the record in the dataset.
        #[arg(long)]
        bug_id: String,
        /// Project URL; a GitHub URL names the repository for issue lookups.
        #[arg(long, default_value = "")]
        url: String,
        #[arg(long, default_value = "")]
        bugsinpy_id: String,
        /// Look up referenced issues on GitHub ($GITHUB_TOKEN is used when set).
        #[arg(long)]
        fetch_issues: bool,
        /// Directory for cached issue responses.
        #[arg(long)]
        issue_cache: Option<PathBuf>,
        /// Add the candidate to the configured dataset.
        #[arg(long)]
        write: bool,
    },
    /// Generate and evaluate samples for every pending unit.
    Run {
        /// Comma-separated methods, e.g. Baseline,FN-pair.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Method>,
        /// Comma-separated prompt styles, e.g. Instruction,InstructionMask.
        #[arg(long, value_delimiter = ',')]
        styles: Vec<PromptStyle>,
    },
    /// Write report.json and report.txt from the ledger.
    Report {
        /// Comma-separated k values; defaults to the configured ones.
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
    },
    /// Price the four early-stop scenarios.
    SimulateCost {
        /// Prompt style to price; defaults to the configured cost style.
        #[arg(long)]
        style: Option<PromptStyle>,
        /// How sorted scenarios are ordered.
        #[arg(long, value_enum)]
        policy: Option<Policy>,
        /// Decimal places in the printed table.
        #[arg(long, default_value_t = 2)]
        dp: u32,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = RunConfig::load(&cli.config)?;
    match cli.command {
        Command::Mine { project, fix_commit, bug_id, url, bugsinpy_id, fetch_issues, issue_cache, write } => {
            let req = MineRequest { bug_id, project_name: project, project_url: url, bugsinpy_id, fix_commit };
            let forge = fetch_issues.then(|| {
                let f = GithubForge::from_env();
                match issue_cache {
                    Some(dir) => f.with_cache(dir),
                    None => f,
                }
            });
            let outcome = commands::cmd_mine(&cfg, &req, forge.as_ref().map(|f| f as &dyn IssueForge))?;
            println!("{}", serde_json::to_string_pretty(&outcome)?);
            match outcome {
                MineOutcome::Candidate { record, warning, .. } => {
                    if let Some(w) = warning {
                        log::warn!("{w}");
                    }
                    if write {
                        commands::merge_into_dataset(&cfg.dataset_path, *record)
                            .with_context(|| format!("updating {}", cfg.dataset_path.display()))?;
                    }
                    Ok(ExitCode::SUCCESS)
                }
                MineOutcome::Rejected { reason, .. } => {
                    log::info!("rejected: {reason}");
                    Ok(ExitCode::from(2))
                }
            }
        }
        Command::Run { methods, styles } => {
            let mut filters = RunFilters::default();
            if !methods.is_empty() {
                filters.methods = methods;
            }
            if !styles.is_empty() {
                filters.styles = styles;
            }
            let s = commands::cmd_run(&cfg, &filters)?;
            println!(
                "{} unit(s) completed, {} skipped, {} failed; {} ledger entries written",
                s.completed, s.skipped, s.failed, s.entries_written
            );
            Ok(if s.failed > 0 { ExitCode::from(1) } else { ExitCode::SUCCESS })
        }
        Command::Report { ks } => {
            let r = commands::cmd_report(&cfg, ks)?;
            print!("{}", report::render_text(&r));
            Ok(ExitCode::SUCCESS)
        }
        Command::SimulateCost { style, policy, dp } => {
            let policy = policy.map(|p| match p {
                Policy::FromStats => OrderPolicy::FromStats,
                Policy::Pinned => OrderPolicy::Pinned,
            });
            let c = commands::cmd_simulate_cost(&cfg, style, policy)?;
            print!("{}", c.table.render(dp));
            for o in &c.scenarios {
                let order: Vec<&str> = o.order.iter().map(|m| m.tag()).collect();
                println!("{:<14} time {:>10.1} s  order: {}", o.kind.tag(), o.total_time, order.join(", "));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
