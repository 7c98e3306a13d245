//! Running dialogues between a policy and the simulated user, with state
//! tracking and experience recording.

use crate::agent::{encode_state, state_dim, ActionSpace, AgentAction, DqnAgent};
use crate::domain::{judge_outcome, step_reward, DialogueAct, DialogueOutcome, DialogueState, Experience, ExperienceSource, UserGoal};
use crate::kb::{KnowledgeBase, GOAL_CONSTRAINT_SLOTS};
use crate::schema::{Slot, SlotSchema};
use crate::simulator::{UserSimConfig, UserSimulator};
use crate::Result;
use rand::Rng;

/// Everything needed to hold a dialogue: knowledge base, schema, action
/// space, and user settings.
#[derive(Debug, Clone)]
pub struct DialogueEnv {
    pub kb: KnowledgeBase,
    pub schema: SlotSchema,
    pub actions: ActionSpace,
    pub user: UserSimConfig,
}

impl DialogueEnv {
    pub fn new(kb: KnowledgeBase, user: UserSimConfig) -> Self {
        Self {
            kb,
            schema: SlotSchema::movie_booking(),
            actions: ActionSpace::movie_booking(),
            user,
        }
    }

    pub fn max_turns(&self) -> u32 {
        self.user.max_turns
    }

    pub fn state_dim(&self) -> usize {
        state_dim(&self.schema, &self.actions)
    }

    pub fn encode(&self, state: &DialogueState) -> Vec<f64> {
        encode_state(state, &self.schema, &self.actions, self.user.max_turns)
    }

    /// Fresh state with the knowledge-base count for no constraints.
    pub fn initial_state(&self) -> DialogueState {
        DialogueState::new(self.kb.len())
    }

    /// Records an act and refreshes the knowledge-base match count.
    pub fn observe(&self, state: &mut DialogueState, act: &DialogueAct) {
        state.observe(act);
        state.kb_match_count = self.kb.count_lenient(&state.constraints());
    }

    /// Records the agent's chosen action in the state.
    pub fn observe_agent(&self, state: &mut DialogueState, action_id: usize, act: &DialogueAct) {
        self.observe(state, act);
        state.last_agent_action = Some(action_id);
    }
}

/// Anything that picks an agent action for a tracked state.
pub trait Policy {
    fn choose(&mut self, state: &DialogueState, state_vec: &[f64], rng: &mut dyn rand::RngCore) -> Result<usize>;
}

/// Epsilon-greedy wrapper around a DQN agent.
pub struct DqnPolicy<'a> {
    pub agent: &'a DqnAgent,
    pub epsilon: f64,
}

impl Policy for DqnPolicy<'_> {
    fn choose(&mut self, _state: &DialogueState, state_vec: &[f64], rng: &mut dyn rand::RngCore) -> Result<usize> {
        self.agent.act(state_vec, self.epsilon, rng)
    }
}

/// Uniformly random actions.
pub struct RandomPolicy {
    pub n_actions: usize,
}

impl Policy for RandomPolicy {
    fn choose(&mut self, _state: &DialogueState, _state_vec: &[f64], rng: &mut dyn rand::RngCore) -> Result<usize> {
        Ok(rng.random_range(0..self.n_actions))
    }
}

/// Scripted agent: answers outstanding user requests, asks every goal slot
/// the user has not mentioned, then books.
#[derive(Debug, Clone)]
pub struct RulePolicy {
    actions: ActionSpace,
}

impl RulePolicy {
    pub fn new(actions: ActionSpace) -> Self {
        Self { actions }
    }

    fn pick(&self, state: &DialogueState) -> AgentAction {
        if let Some(slot) = state
            .user_requested
            .iter()
            .find(|s| **s != Slot::Ticket && !state.agent_informed.contains_key(s))
        {
            return AgentAction::Inform(*slot);
        }
        if let Some(slot) = GOAL_CONSTRAINT_SLOTS
            .iter()
            .find(|s| !state.user_informed.contains_key(s))
        {
            return AgentAction::Request(*slot);
        }
        AgentAction::Book
    }
}

impl Policy for RulePolicy {
    fn choose(&mut self, state: &DialogueState, _state_vec: &[f64], _rng: &mut dyn rand::RngCore) -> Result<usize> {
        let action = self.pick(state);
        Ok(self
            .actions
            .id_of(action)
            .or_else(|| self.actions.id_of(AgentAction::Book))
            .unwrap_or(0))
    }
}

/// One finished dialogue.
#[derive(Debug, Clone)]
pub struct Episode {
    pub experiences: Vec<Experience>,
    pub outcome: DialogueOutcome,
    pub final_state: DialogueState,
    pub sim_success: bool,
}

/// Runs a complete dialogue between `policy` and a simulated user pursuing
/// `goal`. Experiences carry `source`.
pub fn run_dialogue<R: Rng>(
    env: &DialogueEnv,
    policy: &mut dyn Policy,
    goal: &UserGoal,
    source: ExperienceSource,
    rng: &mut R,
) -> Result<Episode> {
    let (mut user, opening) = UserSimulator::start(goal, rng.random(), env.user)?;
    let mut state = env.initial_state();
    env.observe(&mut state, &opening);
    let mut experiences = Vec::new();
    let sim_success;
    loop {
        let s = env.encode(&state);
        let action_id = policy.choose(&state, &s, &mut *rng)?;
        let act = env.actions.instantiate(action_id, &state, &env.kb)?;
        env.observe_agent(&mut state, action_id, &act);
        let turn = user.step(&act)?;
        env.observe(&mut state, &turn.act);
        let reward = step_reward(turn.terminal, turn.success, env.max_turns());
        experiences.push(Experience {
            state_vec: s,
            action_id,
            reward,
            user_act: turn.act,
            next_state_vec: env.encode(&state),
            terminal: turn.terminal,
            source,
        });
        if turn.terminal {
            sim_success = turn.success;
            break;
        }
    }
    let outcome = judge_outcome(goal, &state, env.max_turns());
    Ok(Episode {
        experiences,
        outcome,
        final_state: state,
        sim_success,
    })
}
