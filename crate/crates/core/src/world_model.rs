//! Multi-task world model predicting the user's reply, the reward, and
//! termination from a state and an agent action, and the planning rollouts
//! it drives.

use crate::agent::{select_action, DqnAgent, ReplayBuffer};
use crate::domain::{
    step_reward, DialogueAct, DialogueOutcome, Experience, ExperienceSource, Speaker, UserGoal, DONT_CARE,
};
use crate::env::DialogueEnv;
use crate::kb::GOAL_CONSTRAINT_SLOTS;
use crate::nn::{self, Activation, DenseNet, Gradients, InitScheme, RmsProp, RmsPropConfig};
use crate::schema::{Intent, Slot};
use crate::simulator::UserSimulator;
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

/// User act shape: intent plus the slots it informs and requests, without
/// values.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UserActTemplate {
    pub intent: Intent,
    pub inform_slots: Vec<Slot>,
    pub request_slots: Vec<Slot>,
}

impl UserActTemplate {
    pub fn new(intent: Intent, inform_slots: &[Slot], request_slots: &[Slot]) -> Self {
        let mut inform_slots = inform_slots.to_vec();
        inform_slots.sort();
        inform_slots.dedup();
        let mut request_slots = request_slots.to_vec();
        request_slots.sort();
        request_slots.dedup();
        Self {
            intent,
            inform_slots,
            request_slots,
        }
    }

    pub fn of(act: &DialogueAct) -> Self {
        Self {
            intent: act.intent,
            inform_slots: act.inform_slots.keys().copied().collect(),
            request_slots: act.request_slots.iter().copied().collect(),
        }
    }

    /// Instantiates the template for `goal`. Informs and denials take the
    /// goal's values; slots the goal does not constrain become `not_sure`.
    pub fn fill(&self, goal: &UserGoal) -> DialogueAct {
        let mut act = DialogueAct::new(Speaker::User, self.intent);
        act.request_slots.extend(self.request_slots.iter().copied());
        match self.intent {
            Intent::Inform | Intent::Deny => {
                let missing: Vec<Slot> = self
                    .inform_slots
                    .iter()
                    .copied()
                    .filter(|s| !goal.constraints.contains_key(s))
                    .collect();
                if missing.is_empty() {
                    for slot in &self.inform_slots {
                        act.inform_slots.insert(*slot, goal.constraints[slot].clone());
                    }
                } else {
                    act = DialogueAct::new(Speaker::User, Intent::NotSure);
                    for slot in missing {
                        act.inform_slots.insert(slot, DONT_CARE.to_string());
                    }
                }
            }
            _ => {
                for slot in &self.inform_slots {
                    act.inform_slots.insert(*slot, DONT_CARE.to_string());
                }
            }
        }
        act
    }
}

/// Ordered user-act templates; the softmax head predicts an index into it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserActVocab {
    templates: Vec<UserActTemplate>,
}

impl UserActVocab {
    pub fn from_templates(templates: impl IntoIterator<Item = UserActTemplate>) -> Self {
        let set: BTreeSet<UserActTemplate> = templates.into_iter().collect();
        Self {
            templates: set.into_iter().collect(),
        }
    }

    /// Every act shape the simulated user can produce for the given goals.
    pub fn from_goals(goals: &[UserGoal]) -> Self {
        let mut set = BTreeSet::new();
        set.insert(UserActTemplate::new(Intent::Thanks, &[], &[]));
        set.insert(UserActTemplate::new(Intent::Closing, &[], &[]));
        for slot in GOAL_CONSTRAINT_SLOTS {
            set.insert(UserActTemplate::new(Intent::NotSure, &[*slot], &[]));
        }
        for goal in goals {
            let slots: Vec<Slot> = goal.constraints.keys().copied().collect();
            for &s in &slots {
                set.insert(UserActTemplate::new(Intent::Inform, &[s], &[]));
                set.insert(UserActTemplate::new(Intent::Deny, &[s], &[]));
            }
            // Openings: moviename plus up to two more constraints.
            let others: Vec<Slot> = slots.iter().copied().filter(|s| *s != Slot::MovieName).collect();
            if goal.constraints.contains_key(&Slot::MovieName) {
                for (i, &a) in others.iter().enumerate() {
                    set.insert(UserActTemplate::new(Intent::Inform, &[Slot::MovieName, a], &[]));
                    for &b in &others[i + 1..] {
                        set.insert(UserActTemplate::new(Intent::Inform, &[Slot::MovieName, a, b], &[]));
                    }
                }
            }
            for &r in &goal.requests {
                set.insert(UserActTemplate::new(Intent::Request, &[], &[r]));
            }
        }
        Self {
            templates: set.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&UserActTemplate> {
        self.templates.get(index)
    }

    pub fn index_of(&self, act: &DialogueAct) -> Option<usize> {
        self.templates.binary_search(&UserActTemplate::of(act)).ok()
    }
}

/// One forward pass of the world model.
#[derive(Debug, Clone, PartialEq)]
pub struct WmPrediction {
    pub user_act: Vec<f64>,
    pub reward: f64,
    pub term_prob: f64,
}

/// Mean per-transition loss terms of one training step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WmLosses {
    pub user_act: f64,
    pub reward: f64,
    pub term: f64,
}

impl WmLosses {
    pub fn total(&self) -> f64 {
        self.user_act + self.reward + self.term
    }
}

/// How a simulated dialogue that terminated is judged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessRule {
    /// Success iff the predicted terminal reward is positive.
    PositiveReward,
    /// The reward head regresses the expected terminal reward, which is an
    /// affine function of the success probability; success is drawn from the
    /// probability that reward implies.
    #[default]
    Calibrated,
}

impl SuccessRule {
    /// Success probability for a predicted terminal reward.
    pub fn probability(self, reward: f64, max_turns: u32) -> f64 {
        match self {
            SuccessRule::PositiveReward => f64::from(u8::from(reward > 0.0)),
            SuccessRule::Calibrated => {
                let win = step_reward(true, true, max_turns);
                let loss = step_reward(true, false, max_turns);
                ((reward - loss) / (win - loss)).clamp(0.0, 1.0)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldModelConfig {
    pub hidden_size: usize,
    /// The reward head is fit to `reward / reward_scale`; predictions are
    /// scaled back.
    pub reward_scale: f64,
    pub batch_size: usize,
    pub optimizer: RmsPropConfig,
    pub init: InitScheme,
    pub success_rule: SuccessRule,
    /// Credit non-terminal simulated turns with the known per-turn penalty
    /// instead of the reward head, which extrapolates badly on states the
    /// real buffer never visited.
    pub known_turn_penalty: bool,
}

impl Default for WorldModelConfig {
    fn default() -> Self {
        Self {
            hidden_size: 80,
            reward_scale: 40.0,
            batch_size: 16,
            optimizer: RmsPropConfig::default(),
            init: InitScheme::Glorot,
            success_rule: SuccessRule::default(),
            known_turn_penalty: true,
        }
    }
}

/// Held-out quality of the world model on a set of transitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WmEvaluation {
    pub user_act_accuracy: f64,
    pub reward_mse: f64,
    pub zero_reward_mse: f64,
    pub term_accuracy: f64,
}

/// Shared tanh trunk over `[state, one-hot action]` feeding a reward head,
/// a user-act softmax head, and a termination sigmoid head, each with its
/// own tanh hidden layer.
#[derive(Debug, Clone)]
pub struct WorldModel {
    pub config: WorldModelConfig,
    trunk: DenseNet,
    reward_head: DenseNet,
    act_head: DenseNet,
    term_head: DenseNet,
    optimizers: [RmsProp; 4],
    vocab: UserActVocab,
    state_dim: usize,
    n_actions: usize,
}

impl WorldModel {
    pub fn new(
        config: WorldModelConfig,
        state_dim: usize,
        n_actions: usize,
        vocab: UserActVocab,
        seed: u64,
    ) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::InvalidArgument("empty user-act vocabulary".into()));
        }
        if !(config.reward_scale > 0.0) || config.batch_size == 0 {
            return Err(Error::InvalidArgument("reward scale and batch size must be positive".into()));
        }
        let h = config.hidden_size;
        let trunk = DenseNet::new(&[state_dim + n_actions, h], &[Activation::Tanh], seed, config.init)?;
        let head = |out: usize, act: Activation, offset: u64| {
            DenseNet::new(&[h, h, out], &[Activation::Tanh, act], seed.wrapping_add(offset), config.init)
        };
        let reward_head = head(1, Activation::Linear, 1)?;
        let act_head = head(vocab.len(), Activation::Softmax, 2)?;
        let term_head = head(1, Activation::Sigmoid, 3)?;
        Ok(Self::assemble(config, trunk, reward_head, act_head, term_head, vocab, state_dim, n_actions))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        config: WorldModelConfig,
        trunk: DenseNet,
        reward_head: DenseNet,
        act_head: DenseNet,
        term_head: DenseNet,
        vocab: UserActVocab,
        state_dim: usize,
        n_actions: usize,
    ) -> Self {
        let opt = |net: &DenseNet| RmsProp::new(net, config.optimizer);
        Self {
            optimizers: [opt(&trunk), opt(&reward_head), opt(&act_head), opt(&term_head)],
            config,
            trunk,
            reward_head,
            act_head,
            term_head,
            vocab,
            state_dim,
            n_actions,
        }
    }

    pub fn vocab(&self) -> &UserActVocab {
        &self.vocab
    }

    pub fn nets(&self) -> [&DenseNet; 4] {
        [&self.trunk, &self.reward_head, &self.act_head, &self.term_head]
    }

    pub fn nets_mut(&mut self) -> [&mut DenseNet; 4] {
        [&mut self.trunk, &mut self.reward_head, &mut self.act_head, &mut self.term_head]
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.nets().iter().flat_map(|n| n.flat_params()).collect()
    }

    fn input(&self, state_vec: &[f64], action_id: usize) -> Result<Vec<f64>> {
        if state_vec.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim,
                got: state_vec.len(),
            });
        }
        if action_id >= self.n_actions {
            return Err(Error::InvalidArgument(format!("action id {action_id} out of range")));
        }
        let mut x = Vec::with_capacity(self.state_dim + self.n_actions);
        x.extend_from_slice(state_vec);
        x.resize(self.state_dim + self.n_actions, 0.0);
        x[self.state_dim + action_id] = 1.0;
        Ok(x)
    }

    pub fn forward(&self, state_vec: &[f64], action_id: usize) -> Result<WmPrediction> {
        let h = self.trunk.predict(&self.input(state_vec, action_id)?)?;
        Ok(WmPrediction {
            reward: self.reward_head.predict(&h)?[0] * self.config.reward_scale,
            user_act: self.act_head.predict(&h)?,
            term_prob: self.term_head.predict(&h)?[0],
        })
    }

    /// Mean loss terms on a fixed batch and their gradients for the trunk
    /// and the reward, user-act and termination heads, in that order.
    pub fn gradients(&self, batch: &[&Experience]) -> Result<(WmLosses, [Gradients; 4])> {
        if batch.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let n = batch.len() as f64;
        let mut grads: [Gradients; 4] = [
            Gradients::zeros_like(&self.trunk),
            Gradients::zeros_like(&self.reward_head),
            Gradients::zeros_like(&self.act_head),
            Gradients::zeros_like(&self.term_head),
        ];
        let mut losses = WmLosses::default();
        let mut trunk_grad = vec![0.0; self.config.hidden_size];
        for exp in batch {
            let trunk_cache = self.trunk.forward(&self.input(&exp.state_vec, exp.action_id)?)?;
            let h = trunk_cache.output();
            trunk_grad.iter_mut().for_each(|g| *g = 0.0);

            let rc = self.reward_head.forward(h)?;
            let (l, g) = nn::mse(rc.output(), &[exp.reward / self.config.reward_scale]);
            losses.reward += l / n;
            self.reward_head.backward_into(&rc, &g, 1.0 / n, &mut grads[1])?;
            add(&mut trunk_grad, &grads[1].input);

            if let Some(class) = self.vocab.index_of(&exp.user_act) {
                let ac = self.act_head.forward(h)?;
                let (l, g) = nn::softmax_cross_entropy(ac.output(), class);
                losses.user_act += l / n;
                self.act_head.backward_into(&ac, &g, 1.0 / n, &mut grads[2])?;
                add(&mut trunk_grad, &grads[2].input);
            }

            let tc = self.term_head.forward(h)?;
            let target = if exp.terminal { 1.0 } else { 0.0 };
            let (l, g) = nn::binary_cross_entropy(tc.output()[0], target);
            losses.term += l / n;
            self.term_head.backward_into(&tc, &[g], 1.0 / n, &mut grads[3])?;
            add(&mut trunk_grad, &grads[3].input);

            self.trunk.backward_into(&trunk_cache, &trunk_grad, 1.0, &mut grads[0])?;
        }
        Ok((losses, grads))
    }

    /// One joint step (cross-entropy + squared error + binary cross-entropy)
    /// on a fixed batch. User acts outside the vocabulary contribute no
    /// act loss. Returns the mean loss terms before the step.
    pub fn train_on(&mut self, batch: &[&Experience]) -> Result<WmLosses> {
        let (losses, grads) = self.gradients(batch)?;
        let [trunk, reward, act, term] = &mut self.optimizers;
        trunk.step(&mut self.trunk, &grads[0])?;
        reward.step(&mut self.reward_head, &grads[1])?;
        act.step(&mut self.act_head, &grads[2])?;
        term.step(&mut self.term_head, &grads[3])?;
        Ok(losses)
    }

    /// `steps` minibatch updates on uniformly sampled real experience.
    pub fn train<R: Rng + ?Sized>(&mut self, real: &ReplayBuffer, steps: usize, rng: &mut R) -> Result<Vec<WmLosses>> {
        if real.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let batch: Vec<&Experience> = (0..self.config.batch_size)
                .map(|_| real.get(rng.random_range(0..real.len())).expect("index within buffer"))
                .collect();
            out.push(self.train_on(&batch)?);
        }
        Ok(out)
    }

    /// Mean loss terms over `exps` without updating, in training units.
    pub fn losses(&self, exps: &[Experience]) -> Result<WmLosses> {
        let n = exps.len().max(1) as f64;
        let mut losses = WmLosses::default();
        for exp in exps {
            let p = self.forward(&exp.state_vec, exp.action_id)?;
            losses.reward += ((p.reward - exp.reward) / self.config.reward_scale).powi(2) / n;
            if let Some(class) = self.vocab.index_of(&exp.user_act) {
                losses.user_act += nn::softmax_cross_entropy(&p.user_act, class).0 / n;
            }
            losses.term += nn::binary_cross_entropy(p.term_prob, if exp.terminal { 1.0 } else { 0.0 }).0 / n;
        }
        Ok(losses)
    }

    pub fn evaluate(&self, exps: &[Experience]) -> Result<WmEvaluation> {
        if exps.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let n = exps.len() as f64;
        let mut eval = WmEvaluation {
            user_act_accuracy: 0.0,
            reward_mse: 0.0,
            zero_reward_mse: 0.0,
            term_accuracy: 0.0,
        };
        for exp in exps {
            let p = self.forward(&exp.state_vec, exp.action_id)?;
            if self.vocab.index_of(&exp.user_act) == Some(crate::agent::argmax(&p.user_act)) {
                eval.user_act_accuracy += 1.0 / n;
            }
            eval.reward_mse += (p.reward - exp.reward).powi(2) / n;
            eval.zero_reward_mse += exp.reward.powi(2) / n;
            if (p.term_prob > 0.5) == exp.terminal {
                eval.term_accuracy += 1.0 / n;
            }
        }
        Ok(eval)
    }

    /// Simulated dialogue for `goal`: the user opens as the agenda-based user
    /// would, then the world model answers every ε-greedy agent act until
    /// sampled termination or `max_turns`. Whether a terminated rollout
    /// succeeds is decided by the configured [`SuccessRule`].
    pub fn rollout<R: Rng + ?Sized>(
        &self,
        env: &DialogueEnv,
        agent: &DqnAgent,
        goal: &UserGoal,
        epsilon: f64,
        max_turns: u32,
        rng: &mut R,
    ) -> Result<Rollout> {
        let (_, opening) = UserSimulator::start(goal, rng.random(), env.user)?;
        let mut state = env.initial_state();
        env.observe(&mut state, &opening);
        let mut experiences = Vec::new();
        let mut success = false;
        let mut total = 0.0;
        while state.turn < max_turns {
            let s = env.encode(&state);
            let action_id = select_action(agent.q_net(), &s, epsilon, rng)?;
            let act = env.actions.instantiate(action_id, &state, &env.kb)?;
            env.observe_agent(&mut state, action_id, &act);
            let p = self.forward(&s, action_id)?;
            let template = sample_index(&p.user_act, rng);
            let user_act = self.vocab.templates[template].fill(goal);
            env.observe(&mut state, &user_act);
            let terminal = rng.random::<f64>() < p.term_prob;
            let reward = if terminal || !self.config.known_turn_penalty {
                p.reward
            } else {
                step_reward(false, false, env.max_turns())
            };
            total += reward;
            experiences.push(Experience {
                state_vec: s,
                action_id,
                reward,
                user_act,
                next_state_vec: env.encode(&state),
                terminal,
                source: ExperienceSource::Simulated,
            });
            if terminal {
                success = match self.config.success_rule {
                    SuccessRule::PositiveReward => p.reward > 0.0,
                    rule => rng.random::<f64>() < rule.probability(p.reward, env.max_turns()),
                };
                break;
            }
        }
        Ok(Rollout {
            outcome: DialogueOutcome {
                success,
                turns: experiences.len() as u32,
                cumulative_reward: total,
            },
            experiences,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        let manifest = serde_json::json!({
            "vocab": self.vocab,
            "config": self.config,
            "state_dim": self.state_dim,
            "n_actions": self.n_actions,
        });
        nn::write_checkpoint(
            file,
            &[
                ("trunk", &self.trunk),
                ("reward", &self.reward_head),
                ("user_act", &self.act_head),
                ("term", &self.term_head),
            ],
            manifest,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let (nets, manifest) = nn::read_checkpoint(file)?;
        let names: Vec<&str> = nets.iter().map(|(n, _)| n.as_str()).collect();
        if names != ["trunk", "reward", "user_act", "term"] {
            return Err(Error::Checkpoint(format!("unexpected networks {names:?}")));
        }
        let vocab: UserActVocab = serde_json::from_value(manifest["vocab"].clone())?;
        let config: WorldModelConfig = serde_json::from_value(manifest["config"].clone())?;
        let dim = |key: &str| {
            manifest[key]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::Checkpoint(format!("missing {key}")))
        };
        let (state_dim, n_actions) = (dim("state_dim")?, dim("n_actions")?);
        let mut it = nets.into_iter().map(|(_, n)| n);
        let mut next = || it.next().expect("four networks");
        let (trunk, reward, act, term) = (next(), next(), next(), next());
        if act.output_dim() != vocab.len() || trunk.input_dim() != state_dim + n_actions {
            return Err(Error::Checkpoint("manifest does not match networks".into()));
        }
        Ok(Self::assemble(config, trunk, reward, act, term, vocab, state_dim, n_actions))
    }
}

/// Experiences and outcome of one world-model rollout.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub experiences: Vec<Experience>,
    pub outcome: DialogueOutcome,
}

fn add(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Builds the world model for an environment and goal space.
pub fn world_model_for(env: &DialogueEnv, goals: &[UserGoal], config: WorldModelConfig, seed: u64) -> Result<WorldModel> {
    WorldModel::new(config, env.state_dim(), env.actions.len(), UserActVocab::from_goals(goals), seed)
}
