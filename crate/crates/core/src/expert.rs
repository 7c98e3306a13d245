//! The expert agent standing in for human demonstrators: a DQN trained
//! without a budget until it reliably completes bookings.

use crate::agent::{AgentConfig, BufferKind, DqnAgent, ReplayBuffer};
use crate::domain::{ExperienceSource, UserGoal};
use crate::env::{run_dialogue, DialogueEnv, DqnPolicy, RulePolicy};
use crate::harness::evaluate;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const BUNDLED: &[u8] = include_bytes!("../assets/expert.ckpt");

/// The expert checkpoint shipped with the crate.
pub fn bundled_expert() -> Result<DqnAgent> {
    DqnAgent::read(BUNDLED)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertConfig {
    pub seed: u64,
    /// Scripted dialogues used for replay-buffer spiking.
    pub demo_dialogues: usize,
    pub rbs_steps: usize,
    pub max_epochs: usize,
    pub dialogues_per_epoch: usize,
    pub updates_per_epoch: usize,
    pub eval_dialogues: usize,
    pub target_success: f64,
    pub agent: AgentConfig,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            demo_dialogues: 100,
            rbs_steps: 2000,
            max_epochs: 300,
            dialogues_per_epoch: 10,
            updates_per_epoch: 100,
            eval_dialogues: 200,
            target_success: 0.9,
            agent: AgentConfig::default(),
        }
    }
}

/// Outcome of expert training.
#[derive(Debug, Clone)]
pub struct TrainedExpert {
    pub agent: DqnAgent,
    pub success_rate: f64,
    pub epochs: usize,
}

/// Replay-buffer spiking on scripted dialogues, then DQN against the
/// simulated user until greedy success reaches the target.
pub fn train_expert(env: &DialogueEnv, goals: &[UserGoal], config: &ExpertConfig) -> Result<TrainedExpert> {
    if goals.is_empty() {
        return Err(Error::InvalidArgument("empty goal set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut agent = DqnAgent::new(config.agent, env.state_dim(), env.actions.clone(), rng.random())?;
    let mut real = ReplayBuffer::new(BufferKind::Real, config.agent.buffer_capacity);
    let empty = ReplayBuffer::new(BufferKind::Simulated, 0);

    let mut rule = RulePolicy::new(env.actions.clone());
    let mut demos = Vec::new();
    for _ in 0..config.demo_dialogues {
        let goal = &goals[rng.random_range(0..goals.len())];
        demos.extend(run_dialogue(env, &mut rule, goal, ExperienceSource::HumanHuman, &mut rng)?.experiences);
    }
    agent.rbs_pretrain(&mut real, demos, config.rbs_steps, &mut rng)?;
    agent.sync_target();

    let mut best: Option<(f64, DqnAgent)> = None;
    for epoch in 1..=config.max_epochs {
        for _ in 0..config.dialogues_per_epoch {
            let goal = &goals[rng.random_range(0..goals.len())];
            let mut policy = DqnPolicy {
                agent: &agent,
                epsilon: config.agent.epsilon,
            };
            let episode = run_dialogue(env, &mut policy, goal, ExperienceSource::HumanAgent, &mut rng)?;
            real.extend(episode.experiences)?;
        }
        for _ in 0..config.updates_per_epoch {
            agent.train_batch(&real, &empty, &mut rng)?;
        }
        agent.sync_target();
        let mut greedy = DqnPolicy {
            agent: &agent,
            epsilon: 0.0,
        };
        let (success, _, _) = evaluate(env, &mut greedy, goals, config.eval_dialogues, config.seed, epoch as u64)?;
        if best.as_ref().is_none_or(|(s, _)| success > *s) {
            best = Some((success, agent.clone()));
        }
        if success >= config.target_success {
            return Ok(TrainedExpert {
                agent,
                success_rate: success,
                epochs: epoch,
            });
        }
    }
    let (success_rate, agent) = best.expect("at least one epoch");
    Ok(TrainedExpert {
        agent,
        success_rate,
        epochs: config.max_epochs,
    })
}
