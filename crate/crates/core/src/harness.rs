//! Training runs: budget-conscious Deep Dyna-Q, its ablations, and the SL,
//! DQN and DDQ baselines, with per-epoch greedy evaluation.

use crate::agent::{AgentConfig, BufferKind, DqnAgent, ReplayBuffer};
use crate::bcs::{
    controller_route, sample_goal, schedule_budget, BudgetLedger, CategoryStats, ControllerThresholds, GoalSampling,
    Route, ScheduleKind,
};
use crate::domain::{DialogueOutcome, Experience, ExperienceSource, UserGoal, DEFAULT_MAX_TURNS};
use crate::env::{run_dialogue, DialogueEnv, DqnPolicy, Episode, Policy};
use crate::kb::{categorize_goals, default_kb, enumerate_goals, GoalCategory, KnowledgeBase};
use crate::simulator::UserSimConfig;
use crate::world_model::{UserActVocab, WorldModel, WorldModelConfig};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Sl,
    Dqn,
    Ddq,
    BcsDdq,
    BcsVar1,
    BcsVar2,
}

impl AgentKind {
    pub const ALL: [AgentKind; 6] = [
        AgentKind::Sl,
        AgentKind::Dqn,
        AgentKind::Ddq,
        AgentKind::BcsDdq,
        AgentKind::BcsVar1,
        AgentKind::BcsVar2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Sl => "sl",
            AgentKind::Dqn => "dqn",
            AgentKind::Ddq => "ddq",
            AgentKind::BcsDdq => "bcs_ddq",
            AgentKind::BcsVar1 => "bcs_var1",
            AgentKind::BcsVar2 => "bcs_var2",
        }
    }

    /// Runs Algorithm-style budget-conscious scheduling.
    pub fn is_bcs(self) -> bool {
        matches!(self, AgentKind::BcsDdq | AgentKind::BcsVar1 | AgentKind::BcsVar2)
    }

    /// Learns a world model and plans with it.
    pub fn plans(self) -> bool {
        self == AgentKind::Ddq || self.is_bcs()
    }

    fn schedule(self) -> ScheduleKind {
        match self {
            AgentKind::BcsVar1 | AgentKind::BcsVar2 => ScheduleKind::Constant,
            _ => ScheduleKind::Decayed,
        }
    }

    fn sampling(self) -> GoalSampling {
        match self {
            AgentKind::BcsVar2 => GoalSampling::Uniform,
            _ => GoalSampling::Active,
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        match norm.as_str() {
            "sl" => Ok(AgentKind::Sl),
            "dqn" => Ok(AgentKind::Dqn),
            "ddq" => Ok(AgentKind::Ddq),
            "bcs_ddq" | "bcs" => Ok(AgentKind::BcsDdq),
            "bcs_var1" | "var1" => Ok(AgentKind::BcsVar1),
            "bcs_var2" | "var2" => Ok(AgentKind::BcsVar2),
            _ => Err(Error::InvalidArgument(format!("unknown agent kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub agent_kind: AgentKind,
    pub budget: u64,
    pub epochs: u64,
    /// Planning rollouts per real dialogue.
    pub planning_steps: usize,
    pub eval_dialogues: usize,
    pub seed: u64,
    pub max_turns: u32,
    pub goal_cap_per_epoch: usize,
    /// World-model rollouts behind each success-rate estimate.
    pub rollouts_per_estimate: usize,
    /// Budget-free expert dialogues used to initialise the agent and, for
    /// planning agents, the world model.
    pub warm_start_dialogues: usize,
    /// Budget-free dialogues of the freshly initialised agent, added to the
    /// real buffer so the world model sees the initial policy's mistakes.
    pub warm_start_agent_dialogues: usize,
    /// Give the SL/DQN/DDQ baselines the same warm start as BCS-DDQ.
    pub pretrain_baselines: bool,
    pub rbs_steps: usize,
    pub wm_pretrain_steps: usize,
    pub max_updates_per_epoch: usize,
    pub max_wm_updates_per_epoch: usize,
    /// Hands whatever budget is left to the last epoch.
    pub flush_final_epoch: bool,
    pub l_max: usize,
    pub thresholds: ControllerThresholds,
    pub agent: AgentConfig,
    pub world_model: WorldModelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            agent_kind: AgentKind::BcsDdq,
            budget: 300,
            epochs: 100,
            planning_steps: 5,
            eval_dialogues: 50,
            seed: 0,
            max_turns: DEFAULT_MAX_TURNS,
            goal_cap_per_epoch: 30,
            rollouts_per_estimate: 10,
            warm_start_dialogues: 40,
            warm_start_agent_dialogues: 10,
            pretrain_baselines: false,
            rbs_steps: 1000,
            wm_pretrain_steps: 500,
            max_updates_per_epoch: 120,
            max_wm_updates_per_epoch: 60,
            flush_final_epoch: true,
            l_max: 128,
            thresholds: ControllerThresholds::default(),
            agent: AgentConfig::default(),
            world_model: WorldModelConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn new(agent_kind: AgentKind, budget: u64, epochs: u64, seed: u64) -> Self {
        Self {
            agent_kind,
            budget,
            epochs,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("at least one epoch is required".into()));
        }
        if self.max_turns == 0 || self.eval_dialogues == 0 {
            return Err(Error::InvalidArgument("turn limit and evaluation size must be positive".into()));
        }
        if self.rollouts_per_estimate == 0 || self.goal_cap_per_epoch == 0 {
            return Err(Error::InvalidArgument("rollout count and goal cap must be positive".into()));
        }
        self.agent.validate()
    }
}

/// Greedy evaluation summary for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u64,
    pub success_rate: f64,
    pub avg_reward: f64,
    pub avg_turns: f64,
    pub budget_spent_cumulative: u64,
    pub hh_dialogues: u64,
    pub ha_dialogues: u64,
    pub sim_dialogues: u64,
}

/// One row of the scheduling log: a routed goal, or an epoch with no goals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteLogRow {
    pub epoch: u64,
    pub lambda_k: f64,
    pub b_k_drawn: u64,
    pub b_k_clamped: u64,
    pub goals_sampled: usize,
    pub route: Route,
    pub cost: u64,
    #[serde(rename = "S_gu")]
    pub s_gu: Option<f64>,
    pub category_id: Option<usize>,
}

/// Shared, immutable experiment context.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub env: DialogueEnv,
    pub goals: Vec<UserGoal>,
    pub categories: Vec<GoalCategory>,
    pub vocab: UserActVocab,
    pub expert: DqnAgent,
}

impl Experiment {
    pub fn new(kb: KnowledgeBase, goals: Vec<UserGoal>, l_max: usize, expert: DqnAgent, max_turns: u32) -> Result<Self> {
        if goals.is_empty() {
            return Err(Error::InvalidArgument("empty goal set".into()));
        }
        let env = DialogueEnv::new(
            kb,
            UserSimConfig {
                max_turns,
                ..UserSimConfig::default()
            },
        );
        if expert.q_net().input_dim() != env.state_dim() || expert.actions() != &env.actions {
            return Err(Error::InvalidArgument("expert does not match the environment".into()));
        }
        let categories = categorize_goals(&goals, l_max);
        let vocab = UserActVocab::from_goals(&goals);
        Ok(Self {
            env,
            goals,
            categories,
            vocab,
            expert,
        })
    }

    /// Default knowledge base, goal space and bundled expert.
    pub fn standard() -> Result<Self> {
        let kb = default_kb();
        let goals = enumerate_goals(&kb, STANDARD_GOAL_SEED, STANDARD_GOAL_COUNT);
        Self::new(kb, goals, 128, crate::expert::bundled_expert()?, DEFAULT_MAX_TURNS)
    }
}

pub const STANDARD_GOAL_SEED: u64 = 7;
pub const STANDARD_GOAL_COUNT: usize = 1000;

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub config: RunConfig,
    pub curve: Vec<EpochMetrics>,
    pub routes: Vec<RouteLogRow>,
    pub ledger: BudgetLedger,
    pub agent: DqnAgent,
    pub world_model: Option<WorldModel>,
    /// Simulated-buffer reads that happened during world-model training.
    pub wm_simulated_reads: u64,
    pub real_buffer_sources: (usize, usize),
}

impl RunArtifacts {
    pub fn final_metrics(&self) -> &EpochMetrics {
        self.curve.last().expect("curve has at least the initial evaluation")
    }

    pub fn success_at(&self, epoch: u64) -> Option<f64> {
        self.curve.iter().find(|m| m.epoch == epoch).map(|m| m.success_rate)
    }
}

/// Greedy evaluation on `n` goals drawn for `(seed, epoch)` so every agent
/// of a seed faces the same dialogues.
pub fn evaluate(
    env: &DialogueEnv,
    policy: &mut dyn Policy,
    goals: &[UserGoal],
    n: usize,
    seed: u64,
    epoch: u64,
) -> Result<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e7a1 ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut outcomes = Vec::with_capacity(n);
    for _ in 0..n {
        let goal = &goals[rng.random_range(0..goals.len())];
        outcomes.push(run_dialogue(env, policy, goal, ExperienceSource::HumanAgent, &mut rng)?.outcome);
    }
    Ok(summarize(&outcomes))
}

fn summarize(outcomes: &[DialogueOutcome]) -> (f64, f64, f64) {
    let n = outcomes.len().max(1) as f64;
    let success = outcomes.iter().filter(|o| o.success).count() as f64 / n;
    let reward = outcomes.iter().map(|o| o.cumulative_reward).sum::<f64>() / n;
    let turns = outcomes.iter().map(|o| f64::from(o.turns)).sum::<f64>() / n;
    (success, reward, turns)
}

struct Trainer<'a> {
    exp: &'a Experiment,
    config: &'a RunConfig,
    rng: ChaCha8Rng,
    agent: DqnAgent,
    world_model: Option<WorldModel>,
    real: ReplayBuffer,
    simulated: ReplayBuffer,
    ledger: BudgetLedger,
    curve: Vec<EpochMetrics>,
    routes: Vec<RouteLogRow>,
    wm_simulated_reads: u64,
}

impl<'a> Trainer<'a> {
    fn new(exp: &'a Experiment, config: &'a RunConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let agent = DqnAgent::new(config.agent, exp.env.state_dim(), exp.env.actions.clone(), rng.random())?;
        // Without planning steps DDQ has no use for a world model and runs
        // exactly as DQN; BCS still needs one for its success estimates.
        let needs_model = config.agent_kind.is_bcs() || (config.agent_kind.plans() && config.planning_steps > 0);
        let world_model = if needs_model {
            Some(WorldModel::new(
                config.world_model,
                exp.env.state_dim(),
                exp.env.actions.len(),
                exp.vocab.clone(),
                rng.random(),
            )?)
        } else {
            None
        };
        Ok(Self {
            exp,
            config,
            rng,
            agent,
            world_model,
            real: ReplayBuffer::new(BufferKind::Real, config.agent.buffer_capacity),
            simulated: ReplayBuffer::new(BufferKind::Simulated, config.agent.buffer_capacity),
            ledger: BudgetLedger::new(config.budget),
            curve: Vec::new(),
            routes: Vec::new(),
            wm_simulated_reads: 0,
        })
    }

    fn random_goal(&mut self) -> UserGoal {
        self.exp.goals[self.rng.random_range(0..self.exp.goals.len())].clone()
    }

    fn expert_dialogue(&mut self, goal: &UserGoal) -> Result<Episode> {
        let mut expert = DqnPolicy {
            agent: &self.exp.expert,
            epsilon: 0.0,
        };
        run_dialogue(&self.exp.env, &mut expert, goal, ExperienceSource::HumanHuman, &mut self.rng)
    }

    fn agent_dialogue(&mut self, goal: &UserGoal) -> Result<Episode> {
        let mut policy = DqnPolicy {
            agent: &self.agent,
            epsilon: self.config.agent.epsilon,
        };
        run_dialogue(&self.exp.env, &mut policy, goal, ExperienceSource::HumanAgent, &mut self.rng)
    }

    fn demonstrations(&mut self, n: usize) -> Result<Vec<Experience>> {
        let mut out = Vec::new();
        for _ in 0..n {
            let goal = self.random_goal();
            out.extend(self.expert_dialogue(&goal)?.experiences);
        }
        Ok(out)
    }

    fn rollout(&mut self, goal: &UserGoal) -> Result<crate::world_model::Rollout> {
        let wm = self.world_model.as_ref().expect("planning agents own a world model");
        wm.rollout(
            &self.exp.env,
            &self.agent,
            goal,
            self.config.agent.epsilon,
            self.config.max_turns,
            &mut self.rng,
        )
    }

    fn warm_start(&mut self) -> Result<()> {
        let n = self.config.warm_start_dialogues;
        if n == 0 {
            return Ok(());
        }
        let demos = self.demonstrations(n)?;
        self.agent
            .rbs_pretrain(&mut self.real, demos, self.config.rbs_steps, &mut self.rng)?;
        for _ in 0..self.config.warm_start_agent_dialogues {
            let goal = self.random_goal();
            let episode = self.agent_dialogue(&goal)?;
            self.push_real(episode)?;
        }
        if let Some(wm) = self.world_model.as_mut() {
            wm.train(&self.real, self.config.wm_pretrain_steps, &mut self.rng)?;
        }
        self.agent.sync_target();
        Ok(())
    }

    fn record(&mut self, epoch: u64) -> Result<()> {
        let mut policy = DqnPolicy {
            agent: &self.agent,
            epsilon: 0.0,
        };
        let (success_rate, avg_reward, avg_turns) = evaluate(
            &self.exp.env,
            &mut policy,
            &self.exp.goals,
            self.config.eval_dialogues,
            self.config.seed,
            epoch,
        )?;
        debug_assert!(self.ledger.is_consistent());
        self.curve.push(EpochMetrics {
            epoch,
            success_rate,
            avg_reward,
            avg_turns,
            budget_spent_cumulative: self.ledger.spent_total,
            hh_dialogues: self.ledger.hh,
            ha_dialogues: self.ledger.ha,
            sim_dialogues: self.ledger.sim,
        });
        Ok(())
    }

    fn push_real(&mut self, episode: Episode) -> Result<()> {
        self.real.extend(episode.experiences)
    }

    /// Planning rollouts on fresh goals, then agent and world-model updates.
    fn train_epoch(&mut self, real_dialogues: usize) -> Result<()> {
        if self.world_model.is_some() {
            for _ in 0..self.config.planning_steps * real_dialogues {
                let goal = self.random_goal();
                let rollout = self.rollout(&goal)?;
                self.simulated.extend(rollout.experiences)?;
            }
        }
        let pool = self.real.len() + self.simulated.len();
        if pool > 0 {
            let updates = pool
                .div_ceil(self.config.agent.batch_size)
                .min(self.config.max_updates_per_epoch);
            for _ in 0..updates {
                self.agent.train_batch(&self.real, &self.simulated, &mut self.rng)?;
            }
        }
        if let Some(wm) = self.world_model.as_mut() {
            if !self.real.is_empty() {
                let steps = self
                    .real
                    .len()
                    .div_ceil(wm.config.batch_size)
                    .min(self.config.max_wm_updates_per_epoch);
                let before = self.simulated.reads();
                wm.train(&self.real, steps, &mut self.rng)?;
                self.wm_simulated_reads += self.simulated.reads() - before;
            }
        }
        self.agent.sync_target();
        Ok(())
    }

    fn charge(&mut self, route: Route) -> Result<()> {
        self.ledger.charge(route)
    }

    fn run_supervised(&mut self) -> Result<()> {
        let mut demos = Vec::new();
        for _ in 0..(self.config.budget / Route::Hh.cost()) {
            let goal = self.random_goal();
            demos.extend(self.expert_dialogue(&goal)?.experiences);
            self.charge(Route::Hh)?;
        }
        if self.config.pretrain_baselines {
            for _ in 0..self.config.warm_start_dialogues {
                let goal = self.random_goal();
                demos.extend(self.expert_dialogue(&goal)?.experiences);
            }
        }
        if !demos.is_empty() {
            self.agent
                .rbs_pretrain(&mut self.real, demos, self.config.rbs_steps, &mut self.rng)?;
        }
        self.agent.sync_target();
        for epoch in 0..=self.config.epochs {
            self.record(epoch)?;
        }
        Ok(())
    }

    fn run_fixed_spend(&mut self) -> Result<()> {
        if self.config.pretrain_baselines {
            self.warm_start()?;
        }
        self.record(0)?;
        let (b, m) = (self.config.budget, self.config.epochs);
        for k in 1..=m {
            let spend = b / m + u64::from(k <= b % m);
            for _ in 0..spend {
                let goal = self.random_goal();
                let episode = self.agent_dialogue(&goal)?;
                self.push_real(episode)?;
                self.charge(Route::Ha)?;
            }
            self.train_epoch(spend as usize)?;
            self.record(k)?;
        }
        Ok(())
    }

    fn estimate_success(&mut self, goal: &UserGoal) -> Result<(f64, Vec<DialogueOutcome>)> {
        let d = self.config.rollouts_per_estimate;
        let mut outcomes = Vec::with_capacity(d);
        for _ in 0..d {
            outcomes.push(self.rollout(goal)?.outcome);
        }
        let s = outcomes.iter().filter(|o| o.success).count() as f64 / d as f64;
        Ok((s, outcomes))
    }

    fn run_scheduled(&mut self) -> Result<()> {
        self.warm_start()?;
        self.record(0)?;
        let kind = self.config.agent_kind;
        let (b, m) = (self.config.budget, self.config.epochs);
        let l = self.exp.categories.len();
        let mut stats = CategoryStats::new(l);
        for k in 1..=m {
            let mut alloc = schedule_budget(kind.schedule(), b, m, k, self.ledger.remaining(), &mut self.rng)?;
            if k == m && self.config.flush_final_epoch {
                alloc.clamped = self.ledger.remaining();
            }
            let mut b_k = alloc.clamped;
            let mut goals_sampled = 0;
            let mut real_dialogues = 0;
            loop {
                let (goal, category) = sample_goal(&self.exp.categories, &stats, l, kind.sampling(), &mut self.rng)?;
                let goal = goal.clone();
                goals_sampled += 1;
                let (s_gu, outcomes) = self.estimate_success(&goal)?;
                stats.update(category, &outcomes)?;
                let (route, cost) = controller_route(s_gu, b_k, self.config.thresholds);
                match route {
                    Route::Sim => {
                        let rollout = self.rollout(&goal)?;
                        self.simulated.extend(rollout.experiences)?;
                    }
                    Route::Hh => {
                        let episode = self.expert_dialogue(&goal)?;
                        self.push_real(episode)?;
                        real_dialogues += 1;
                    }
                    Route::Ha => {
                        let episode = self.agent_dialogue(&goal)?;
                        self.push_real(episode)?;
                        real_dialogues += 1;
                    }
                }
                self.charge(route)?;
                b_k -= cost;
                self.routes.push(RouteLogRow {
                    epoch: k,
                    lambda_k: alloc.lambda_k,
                    b_k_drawn: alloc.drawn,
                    b_k_clamped: alloc.clamped,
                    goals_sampled,
                    route,
                    cost,
                    s_gu: Some(s_gu),
                    category_id: Some(category),
                });
                if b_k == 0 || goals_sampled >= self.config.goal_cap_per_epoch {
                    break;
                }
            }
            self.train_epoch(real_dialogues)?;
            self.record(k)?;
        }
        Ok(())
    }

    fn finish(self) -> RunArtifacts {
        RunArtifacts {
            config: self.config.clone(),
            curve: self.curve,
            routes: self.routes,
            ledger: self.ledger,
            real_buffer_sources: (
                self.real.count_source(ExperienceSource::HumanHuman),
                self.real.count_source(ExperienceSource::HumanAgent),
            ),
            agent: self.agent,
            world_model: self.world_model,
            wm_simulated_reads: self.wm_simulated_reads,
        }
    }
}

/// Trains one agent of `config.agent_kind` and evaluates it every epoch
/// (epoch 0 is the evaluation before any budgeted training).
pub fn run(exp: &Experiment, config: &RunConfig) -> Result<RunArtifacts> {
    let mut trainer = Trainer::new(exp, config)?;
    match config.agent_kind {
        AgentKind::Sl => trainer.run_supervised()?,
        AgentKind::Dqn | AgentKind::Ddq => trainer.run_fixed_spend()?,
        AgentKind::BcsDdq | AgentKind::BcsVar1 | AgentKind::BcsVar2 => trainer.run_scheduled()?,
    }
    Ok(trainer.finish())
}

/// Budget-conscious Deep Dyna-Q.
pub fn run_bcs_ddq(exp: &Experiment, config: &RunConfig) -> Result<RunArtifacts> {
    expect_kind(config, &[AgentKind::BcsDdq])?;
    run(exp, config)
}

/// SL, DQN or DDQ.
pub fn run_baseline(exp: &Experiment, config: &RunConfig) -> Result<RunArtifacts> {
    expect_kind(config, &[AgentKind::Sl, AgentKind::Dqn, AgentKind::Ddq])?;
    run(exp, config)
}

/// Constant-rate schedule, optionally with uniform goal sampling.
pub fn run_ablation(exp: &Experiment, config: &RunConfig) -> Result<RunArtifacts> {
    expect_kind(config, &[AgentKind::BcsVar1, AgentKind::BcsVar2])?;
    run(exp, config)
}

fn expect_kind(config: &RunConfig, kinds: &[AgentKind]) -> Result<()> {
    if kinds.contains(&config.agent_kind) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "agent kind {} not handled here",
            config.agent_kind
        )))
    }
}
