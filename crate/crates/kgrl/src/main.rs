use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kgrl::config::{EnvSpec, ExperimentConfig};
use kgrl::experiment;
use kgrl::record::RunRecord;
use kgrl::Result;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Debug, Parser)]
#[command(name = "kgrl", version, about = "Knowledge-grounded RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Train only this seed instead of the config's list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep keys loaded from packs fixed.
    #[arg(long)]
    freeze_keys: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train per config; writes run.json, curves, logs, checkpoint and packs.
    Train(RunArgs),
    /// Evaluate a run checkpoint directory or a single pack.
    Eval {
        source: PathBuf,
        /// Environment name; defaults to the one the run trained on.
        #[arg(long)]
        env: Option<String>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        /// Components to remove from the mixture (`inner` or knowledge names).
        #[arg(long, num_args = 1..)]
        drop: Vec<String>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Gridworld actions by argmax instead of sampling.
        #[arg(long)]
        greedy: bool,
    },
    /// Zero-shot evaluation of a trained run in another environment.
    Transfer {
        source: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        greedy: bool,
    },
    /// Train with a knowledge list of packs and scripted ids, in the given order.
    Compose {
        #[command(flatten)]
        run: RunArgs,
        /// `path/to/x.pack.json` or a scripted rule id; repeatable.
        #[arg(long = "knowledge", num_args = 1.., required = true)]
        knowledge: Vec<String>,
    },
    /// Record one greedy gridworld episode's attention weights.
    Trace {
        source: PathBuf,
        #[arg(long)]
        env: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "trace")]
        out: PathBuf,
    },
    /// Success rate across goal-range scales.
    Sweep {
        source: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.4,0.6,0.8,1.0")]
        scales: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
}

fn load_config(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut c = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        c.seeds = vec![s];
    }
    if let Some(o) = &args.out {
        c.out_dir = o.clone();
    }
    c.freeze_keys |= args.freeze_keys;
    let base = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((c, base))
}

fn print_records(records: &[RunRecord]) {
    for r in records {
        let last = r.final_eval();
        println!(
            "seed {}: {} env steps, final mean return {:.3}, success {:.2}, threshold step {}, checkpoint {}",
            r.seed,
            r.env_steps,
            last.map_or(f64::NAN, |e| e.mean_return),
            last.map_or(f64::NAN, |e| e.success_rate),
            r.threshold_step.map_or_else(|| "-".into(), |s| s.to_string()),
            r.checkpoint.display()
        );
    }
}

fn env_arg(env: Option<&str>) -> Result<Option<EnvSpec>> {
    env.map(EnvSpec::parse).transpose()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let (c, base) = load_config(&args)?;
            print_records(&experiment::train(&c, &base)?);
        }
        Command::Compose { run, knowledge } => {
            let (c, base) = load_config(&run)?;
            let ks = knowledge.iter().map(|k| experiment::knowledge_item(k)).collect();
            print_records(&experiment::compose(&c, ks, &base)?);
        }
        Command::Eval {
            source,
            env,
            episodes,
            drop,
            seed,
            greedy,
        } => {
            let env = env_arg(env.as_deref())?;
            let r = experiment::evaluate(&source, env.as_ref(), episodes, &drop, seed, greedy)?;
            println!("{}", serde_json::to_string(&r)?);
        }
        Command::Transfer {
            source,
            env,
            episodes,
            seed,
            greedy,
        } => {
            let r = experiment::transfer(&source, &EnvSpec::parse(&env)?, episodes, seed, greedy)?;
            println!("{}", serde_json::to_string(&r)?);
        }
        Command::Trace { source, env, seed, out } => {
            let env = env_arg(env.as_deref())?;
            let t = experiment::trace(&source, env.as_ref(), seed, &out)?;
            println!(
                "{} steps, dominant-component switches at {:?}; wrote {}",
                t.steps.len(),
                t.switches(),
                out.join("trace.csv").display()
            );
        }
        Command::Sweep {
            source,
            scales,
            episodes,
            seed,
            out,
        } => {
            for r in experiment::sweep(&source, &scales, episodes, seed, &out)? {
                println!("{}", serde_json::to_string(&r)?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
