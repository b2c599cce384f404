use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use xfernas::archspace::{genome_to_json, sample_genome};
use xfernas::experiments::{
    comparison_train_config, run_ablation_with, run_search_comparison_with, AblationConfig,
    CompareConfig,
};
use xfernas::search::{xfernas_search, SearchConfig};
use xfernas::taskbench::{ObservationHistory, SuiteDescriptor, TaskSuite};
use xfernas::xfernet::{train, TrainConfig, XferNet};
use xfernas::{Error, Result};

#[derive(Parser)]
#[command(
    name = "xfernas",
    version,
    about = "Transfer-aware architecture search"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emit a random genome as JSON.
    Sample {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "b", default_value_t = 5)]
        blocks: usize,
        /// Output file; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthetic task suite descriptors.
    Suite {
        #[command(subcommand)]
        command: SuiteCommand,
    },
    /// Source knowledge construction.
    Knowledge {
        #[command(subcommand)]
        command: KnowledgeCommand,
    },
    /// Train a surrogate on an observation history.
    Train {
        #[arg(long)]
        history: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the two-phase search on a suite's target task.
    Search {
        #[arg(long)]
        suite: PathBuf,
        /// Source knowledge (JSONL). Required unless --no-transfer.
        #[arg(long, required_unless_present = "no_transfer")]
        source: Option<PathBuf>,
        /// Ignore source knowledge; round 1 evaluates random genomes.
        #[arg(long)]
        no_transfer: bool,
        #[arg(long, default_value_t = 33)]
        budget: usize,
        #[arg(long, default_value_t = 10.0)]
        eta: f64,
        #[arg(long, default_value_t = 10)]
        ascent_steps: usize,
        #[arg(long, default_value_t = 11)]
        starts: usize,
        #[arg(long, default_value_t = 3)]
        rounds: usize,
        /// Initial surrogate checkpoint.
        #[arg(long)]
        base: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write a flat CSV of evaluations.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the knowledge-size ablation grid.
    Ablation {
        /// JSON config; defaults for missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Raw cell CSV; summary and metadata are written next to it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Compare transfer, no-transfer and random search over seeds.
    Compare {
        #[arg(long)]
        suite: Option<PathBuf>,
        /// `A..B` (inclusive) or a comma-separated list.
        #[arg(long, default_value = "0..9", value_parser = parse_seeds)]
        seeds: Seeds,
        #[arg(long, default_value_t = 200)]
        source_per_task: usize,
        #[arg(long, default_value_t = 0)]
        source_seed: u64,
        #[arg(long, default_value_t = 33)]
        budget: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
}

#[derive(Subcommand)]
enum SuiteCommand {
    /// Write a suite descriptor; the last task is the target.
    Init {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        tasks: usize,
        #[arg(long, default_value_t = 0.3)]
        tau: f64,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, default_value_t = 5)]
        blocks: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum KnowledgeCommand {
    /// Evaluate random genomes on every source task.
    Build {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long, default_value_t = 200)]
        per_task: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 0.8)]
    alpha: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    wd: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cap on joint optimizer steps.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Head-only epochs after the joint phase.
    #[arg(long, default_value_t = 0)]
    head_epochs: usize,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            alpha: self.alpha,
            lr: self.lr,
            weight_decay: self.wd,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            max_steps: self.max_steps,
            head_epochs: self.head_epochs,
            ..TrainConfig::default()
        }
    }
}

#[derive(Clone)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> std::result::Result<Seeds, String> {
    let bad = |_| format!("invalid seed list `{s}`");
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (
            a.trim().parse().map_err(bad)?,
            b.trim().parse().map_err(bad)?,
        );
        if a > b {
            return Err(format!("empty seed range `{s}`"));
        }
        return Ok(Seeds((a..=b).collect()));
    }
    s.split(',')
        .map(|x| x.trim().parse().map_err(bad))
        .collect::<std::result::Result<_, _>>()
        .map(Seeds)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_suite(path: &Path) -> Result<TaskSuite> {
    TaskSuite::new(SuiteDescriptor::load(path)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample { seed, blocks, out } => {
            let json = genome_to_json(&sample_genome(seed, blocks)?);
            match out {
                Some(p) => write(&p, &(json + "\n"))?,
                None => {
                    let mut stdout = std::io::stdout().lock();
                    match writeln!(stdout, "{json}") {
                        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                            return Err(Error::io("<stdout>", e))
                        }
                        _ => {}
                    }
                }
            }
        }
        Command::Suite {
            command:
                SuiteCommand::Init {
                    seed,
                    tasks,
                    tau,
                    noise,
                    blocks,
                    out,
                },
        } => {
            let d = SuiteDescriptor {
                seed,
                n_tasks: tasks,
                tau,
                noise_sigma: noise,
                blocks,
            };
            TaskSuite::new(d)?;
            d.save(out)?;
        }
        Command::Knowledge {
            command:
                KnowledgeCommand::Build {
                    suite,
                    per_task,
                    seed,
                    out,
                },
        } => {
            load_suite(&suite)?
                .build_source_knowledge(per_task, seed)?
                .save(out)?;
        }
        Command::Train {
            history,
            train: args,
            out,
        } => {
            let h = ObservationHistory::load(&history)?;
            let (model, log) = train(&h, &args.config())?;
            model.save(&out)?;
            eprintln!(
                "trained {} steps, final loss {}",
                log.steps,
                log.epoch_losses
                    .last()
                    .map_or("n/a".to_string(), |l| format!("{l:.6}"))
            );
        }
        Command::Search {
            suite,
            source,
            no_transfer,
            budget,
            eta,
            ascent_steps,
            starts,
            rounds,
            base,
            train: args,
            out,
            csv,
        } => {
            let suite = load_suite(&suite)?;
            let history = match (&source, no_transfer) {
                (Some(p), false) => ObservationHistory::load(p)?,
                _ => ObservationHistory::new(suite.registry()),
            };
            let base = base.map(XferNet::load).transpose()?;
            let cfg = SearchConfig {
                budget,
                eta,
                max_ascent_steps: ascent_steps,
                starts_per_round: starts,
                rounds,
                seed: args.seed,
                blocks: suite.descriptor().blocks,
                train: args.config(),
            };
            let report = xfernas_search(&suite, suite.target(), &history, base.as_ref(), &cfg)?;
            write(&out, &(report.to_json()? + "\n"))?;
            if let Some(p) = csv {
                write(&p, &report.to_csv()?)?;
            }
            if let Some(b) = report.best() {
                eprintln!(
                    "best score {:.6} after {} oracle calls",
                    b.score, report.oracle_calls
                );
            }
        }
        Command::Ablation { config, out, quiet } => {
            let cfg = match config {
                Some(p) => AblationConfig::load(p)?,
                None => AblationConfig::default(),
            };
            let result = run_ablation_with(&cfg, |c| {
                if !quiet {
                    eprintln!(
                        "source {} target {} split {}: r = {:.4}",
                        c.source_size, c.target_size, c.split, c.pearson_r
                    );
                }
            })?;
            result.write(&out)?;
        }
        Command::Compare {
            suite,
            seeds,
            source_per_task,
            source_seed,
            budget,
            out,
            quiet,
        } => {
            let descriptor = match suite {
                Some(p) => SuiteDescriptor::load(p)?,
                None => SuiteDescriptor::default(),
            };
            let mut cfg = CompareConfig {
                suite: descriptor,
                seeds: seeds.0,
                source_per_task,
                source_seed,
                ..CompareConfig::default()
            };
            cfg.search.budget = budget;
            cfg.search.blocks = descriptor.blocks;
            cfg.search.train = comparison_train_config();
            let summary = run_search_comparison_with(&cfg, |r| {
                if !quiet {
                    eprintln!(
                        "seed {} {}: best {:.6} ({} calls)",
                        r.seed,
                        r.arm.as_str(),
                        r.best_score,
                        r.oracle_calls
                    );
                }
            })?;
            summary.write(&out)?;
            eprintln!(
                "medians: transfer {:.4}, no-transfer {:.4}, random {:.4}; transfer wins {}/{} vs random, {}/{} vs no-transfer",
                summary.median_transfer,
                summary.median_no_transfer,
                summary.median_random,
                summary.transfer_vs_random_wins,
                summary.seeds,
                summary.transfer_vs_no_transfer_wins,
                summary.seeds
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.split("\n\n").next().unwrap_or_default();
            let line = first
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect::<Vec<_>>()
                .join(" ");
            let line = line.strip_prefix("error: ").unwrap_or(&line);
            eprintln!("error: {line}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
