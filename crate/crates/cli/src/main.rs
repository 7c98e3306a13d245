//! `bcs-ddq`: train, sweep, evaluate and aggregate budget-conscious Deep
//! Dyna-Q experiments, and serve human-in-the-loop sessions.

use anyhow::{bail, Context, Result};
use bcs_core::agent::DqnAgent;
use bcs_core::artifacts::{run_dir, save_run, write_plotdata};
use bcs_core::domain::UserGoal;
use bcs_core::env::{DialogueEnv, DqnPolicy};
use bcs_core::expert::{train_expert, ExpertConfig};
use bcs_core::harness::{evaluate, run, AgentKind, Experiment, RunConfig, STANDARD_GOAL_COUNT, STANDARD_GOAL_SEED};
use bcs_core::kb::{default_kb, enumerate_goals, load_goals, KnowledgeBase};
use bcs_hitl::{router, AppState, Mode, ServiceConfig, TrainingLink};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::time::Duration;

#[derive(Parser)]
#[command(name = "bcs-ddq", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Knowledge-base JSON file (default: built-in synthetic KB).
    #[arg(long)]
    kb: Option<PathBuf>,
    /// Goal JSON file (default: goals enumerated from the KB).
    #[arg(long)]
    goals: Option<PathBuf>,
    /// Expert checkpoint used as demonstrator (default: bundled).
    #[arg(long)]
    expert: Option<PathBuf>,
    #[arg(long, default_value_t = 40)]
    max_turns: u32,
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[arg(long, default_value_t = 100)]
    epochs: u64,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, default_value_t = 5)]
    planning_steps: usize,
    #[arg(long, default_value_t = 50)]
    eval_dialogues: usize,
    #[arg(long, default_value_t = 30)]
    goal_cap: usize,
    /// Budget-free warm-start dialogues.
    #[arg(long)]
    warm_start: Option<usize>,
    /// JSON file with a full run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write its artifacts.
    Train {
        #[arg(long)]
        agent: AgentKind,
        #[arg(long)]
        budget: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train every agent × budget × seed combination.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "50,100,150,200,250,300")]
        budgets: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "sl,dqn,ddq,bcs-ddq")]
        agents: Vec<AgentKind>,
        #[arg(long, default_value_t = 5)]
        runs: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Greedy evaluation of a saved agent.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 50)]
        dialogues: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Aggregate a sweep into plot-ready CSV (mean ± std across runs).
    Plotdata {
        #[arg(long)]
        sweep: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the expert demonstrator.
    TrainExpert {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.9)]
        target: f64,
        /// Discount factor for the expert's own training.
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Serve the human-in-the-loop session API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Agent that human users talk to (default: the bundled expert).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Charge sessions against this real-interaction budget. Without it
        /// the service runs standalone and charges nothing.
        #[arg(long)]
        budget: Option<u64>,
        /// Budget opened for the first epoch (default: all of it).
        #[arg(long)]
        epoch_budget: Option<u64>,
        /// Directory for per-session transcripts.
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[arg(long, default_value_t = 600)]
        timeout_secs: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        data: DataArgs,
    },
}

fn load_kb(data: &DataArgs) -> Result<KnowledgeBase> {
    Ok(match &data.kb {
        Some(path) => KnowledgeBase::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => default_kb(),
    })
}

fn experiment(data: &DataArgs) -> Result<Experiment> {
    let kb = load_kb(data)?;
    let goals = match &data.goals {
        Some(path) => load_goals(path)?,
        None => enumerate_goals(&kb, STANDARD_GOAL_SEED, STANDARD_GOAL_COUNT),
    };
    let expert = match &data.expert {
        Some(path) => DqnAgent::load(path)?,
        None => bcs_core::expert::bundled_expert()?,
    };
    Ok(Experiment::new(kb, goals, 128, expert, data.max_turns)?)
}

fn run_config(agent: AgentKind, budget: u64, seed: u64, data: &DataArgs, train: &TrainArgs) -> Result<RunConfig> {
    let mut config = match &train.config {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    config.agent_kind = agent;
    config.budget = budget;
    config.seed = seed;
    config.epochs = train.epochs;
    config.max_turns = data.max_turns;
    config.planning_steps = train.planning_steps;
    config.eval_dialogues = train.eval_dialogues;
    config.goal_cap_per_epoch = train.goal_cap;
    if let Some(n) = train.warm_start {
        config.warm_start_dialogues = n;
    }
    if let Some(e) = train.epsilon {
        config.agent.epsilon = e;
    }
    if let Some(g) = train.gamma {
        config.agent.gamma = g;
    }
    if let Some(h) = train.hidden {
        config.agent.hidden_size = h;
    }
    config.validate()?;
    Ok(config)
}

fn train_one(exp: &Experiment, config: &RunConfig, out: &std::path::Path) -> Result<()> {
    let artifacts = run(exp, config)?;
    save_run(out, &artifacts)?;
    let m = artifacts.final_metrics();
    println!(
        "{} b={} seed={}: success {:.4} reward {:.4} turns {:.4} spent {}",
        config.agent_kind, config.budget, config.seed, m.success_rate, m.avg_reward, m.avg_turns, artifacts.ledger.spent_total
    );
    Ok(())
}

async fn serve(
    addr: String,
    env: DialogueEnv,
    goals: Vec<UserGoal>,
    agent: DqnAgent,
    budget: Option<u64>,
    epoch_budget: Option<u64>,
    config: ServiceConfig,
) -> Result<()> {
    let timeout = config.timeout;
    let mode = match budget {
        Some(total) => {
            let link = TrainingLink::spawn(total);
            link.open_epoch(epoch_budget.unwrap_or(total)).await?;
            Mode::Training(link)
        }
        None => Mode::Standalone,
    };
    let state = AppState::new(env, goals, agent, mode, config);
    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(timeout.min(Duration::from_secs(30)));
        loop {
            tick.tick().await;
            sweeper.sweep();
        }
    });
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    println!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train {
            agent,
            budget,
            seed,
            out,
            data,
            train,
        } => {
            let exp = experiment(&data)?;
            train_one(&exp, &run_config(agent, budget, seed, &data, &train)?, &out)?;
        }
        Command::Sweep {
            budgets,
            agents,
            runs,
            out,
            data,
            train,
        } => {
            let exp = experiment(&data)?;
            for &agent in &agents {
                for &budget in &budgets {
                    for seed in 0..runs {
                        let config = run_config(agent, budget, seed, &data, &train)?;
                        train_one(&exp, &config, &run_dir(&out, agent, budget, seed))?;
                    }
                }
            }
        }
        Command::Eval {
            checkpoint,
            dialogues,
            seed,
            data,
        } => {
            let exp = experiment(&data)?;
            let agent = DqnAgent::load(&checkpoint)?;
            let mut policy = DqnPolicy { agent: &agent, epsilon: 0.0 };
            let (success, reward, turns) = evaluate(&exp.env, &mut policy, &exp.goals, dialogues, seed, 0)?;
            println!("success {success:.4} reward {reward:.4} turns {turns:.4}");
        }
        Command::Plotdata { sweep, out } => {
            let (points, groups) = write_plotdata(&sweep, &out)?;
            if groups == 0 {
                bail!("no runs found under {}", sweep.display());
            }
            println!("{points} curve points from {groups} groups written to {}", out.display());
        }
        Command::TrainExpert {
            out,
            seed,
            target,
            gamma,
            max_epochs,
            data,
        } => {
            let kb = load_kb(&data)?;
            let goals = match &data.goals {
                Some(path) => load_goals(path)?,
                None => enumerate_goals(&kb, STANDARD_GOAL_SEED, STANDARD_GOAL_COUNT),
            };
            let env = bcs_core::env::DialogueEnv::new(
                kb,
                bcs_core::simulator::UserSimConfig {
                    max_turns: data.max_turns,
                    ..Default::default()
                },
            );
            let mut config = ExpertConfig {
                seed,
                target_success: target,
                ..ExpertConfig::default()
            };
            if let Some(gamma) = gamma {
                config.agent.gamma = gamma;
            }
            if let Some(max_epochs) = max_epochs {
                config.max_epochs = max_epochs;
            }
            let trained = train_expert(&env, &goals, &config)?;
            trained.agent.save(&out)?;
            println!(
                "expert success {:.4} after {} epochs, saved to {}",
                trained.success_rate,
                trained.epochs,
                out.display()
            );
        }
        Command::Serve {
            addr,
            checkpoint,
            budget,
            epoch_budget,
            transcripts,
            timeout_secs,
            seed,
            data,
        } => {
            let exp = experiment(&data)?;
            let agent = match &checkpoint {
                Some(path) => DqnAgent::load(path)?,
                None => exp.expert,
            };
            let config = ServiceConfig {
                timeout: Duration::from_secs(timeout_secs),
                transcript_dir: transcripts,
                seed,
            };
            tokio::runtime::Runtime::new()?.block_on(serve(addr, exp.env, exp.goals, agent, budget, epoch_budget, config))?;
        }
    }
    Ok(())
}
