//! The DQN dialogue policy: action space, state encoding, epsilon-greedy
//! selection, TD targets, minibatch training, and replay buffers.

use crate::domain::{DialogueAct, DialogueState, Experience, ExperienceSource, Speaker, BOOKED, NO_MATCH};
use crate::kb::{KnowledgeBase, GOAL_CONSTRAINT_SLOTS, GOAL_REQUEST_SLOTS};
use crate::nn::{self, DenseNet, Gradients, InitScheme, RmsProp, RmsPropConfig};
use crate::schema::{Intent, Slot, SlotSchema};
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::cell::Cell;
use std::collections::VecDeque;
use std::path::Path;

/// One agent act template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "slot")]
pub enum AgentAction {
    Request(Slot),
    Inform(Slot),
    Say(Intent),
    Book,
}

const SMALL_TALK: &[Intent] = &[
    Intent::Greeting,
    Intent::ConfirmQuestion,
    Intent::ConfirmAnswer,
    Intent::MultipleChoice,
    Intent::NotSure,
    Intent::Deny,
    Intent::Thanks,
    Intent::Closing,
];

/// Ordered agent act templates; the position is the action id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpace {
    actions: Vec<AgentAction>,
}

impl ActionSpace {
    pub fn movie_booking() -> Self {
        let mut actions: Vec<AgentAction> = GOAL_CONSTRAINT_SLOTS.iter().map(|s| AgentAction::Request(*s)).collect();
        actions.extend(GOAL_REQUEST_SLOTS.iter().map(|s| AgentAction::Inform(*s)));
        actions.extend(SMALL_TALK.iter().map(|i| AgentAction::Say(*i)));
        actions.push(AgentAction::Book);
        Self { actions }
    }

    pub fn from_actions(actions: Vec<AgentAction>) -> Self {
        Self { actions }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<AgentAction> {
        self.actions.get(id).copied()
    }

    pub fn actions(&self) -> &[AgentAction] {
        &self.actions
    }

    pub fn id_of(&self, action: AgentAction) -> Option<usize> {
        self.actions.iter().position(|a| *a == action)
    }

    /// Maps a concrete agent act back onto its template, if it has one.
    pub fn classify(&self, act: &DialogueAct) -> Option<usize> {
        let action = if act.is_booking() {
            AgentAction::Book
        } else {
            match act.intent {
                Intent::Request if act.request_slots.len() == 1 => {
                    AgentAction::Request(*act.request_slots.iter().next()?)
                }
                Intent::Inform if act.inform_slots.len() == 1 => {
                    AgentAction::Inform(*act.inform_slots.keys().next()?)
                }
                Intent::Request | Intent::Inform => return None,
                other => AgentAction::Say(other),
            }
        };
        self.id_of(action)
    }

    /// Fills an action template from the current state. Informs and bookings
    /// read the first knowledge-base row matching the user's constraints.
    pub fn instantiate(&self, id: usize, state: &DialogueState, kb: &KnowledgeBase) -> Result<DialogueAct> {
        let action = self
            .get(id)
            .ok_or_else(|| Error::InvalidArgument(format!("action id {id} out of range")))?;
        Ok(match action {
            AgentAction::Request(slot) => DialogueAct::request(Speaker::Agent, slot),
            AgentAction::Say(intent) => DialogueAct::new(Speaker::Agent, intent),
            AgentAction::Inform(slot) => {
                let constraints = state.constraints();
                let value = kb
                    .top_match(&constraints)
                    .and_then(|row| row.get(slot))
                    .unwrap_or(NO_MATCH);
                DialogueAct::inform(Speaker::Agent, [(slot, value.to_string())])
            }
            AgentAction::Book => {
                let constraints = state.constraints();
                match kb.top_match(&constraints) {
                    Some(row) => {
                        let mut act = DialogueAct::inform(
                            Speaker::Agent,
                            row.attributes().map(|(s, v)| (s, v.to_string())),
                        );
                        act.inform_slots.insert(Slot::Ticket, row.numberofpeople.clone());
                        act.inform_slots.insert(Slot::TaskComplete, BOOKED.to_string());
                        act
                    }
                    None => DialogueAct::inform(Speaker::Agent, [(Slot::TaskComplete, NO_MATCH.to_string())]),
                }
            }
        })
    }
}

impl Default for ActionSpace {
    fn default() -> Self {
        Self::movie_booking()
    }
}

/// Length of [`encode_state`] output.
pub fn state_dim(schema: &SlotSchema, actions: &ActionSpace) -> usize {
    schema.intents.len() + 3 * schema.slots.len() + actions.len() + KB_BUCKETS + 1
}

const KB_BUCKETS: usize = 4;

fn kb_bucket(count: usize) -> usize {
    match count {
        0 => 0,
        1 => 1,
        2..=4 => 2,
        _ => 3,
    }
}

/// Fixed-length features: last user intent, bags of user-informed,
/// user-requested and agent-informed slots, last agent action, bucketed
/// knowledge-base match count, and `turn / max_turns`.
pub fn encode_state(state: &DialogueState, schema: &SlotSchema, actions: &ActionSpace, max_turns: u32) -> Vec<f64> {
    let n_slots = schema.slots.len();
    let mut v = vec![0.0; state_dim(schema, actions)];
    let mut at = 0;
    if let Some(act) = state.last_user_act() {
        v[at + schema.intent_index(act.intent)] = 1.0;
    }
    at += schema.intents.len();
    for slot in state.user_informed.keys() {
        v[at + schema.slot_index(*slot)] = 1.0;
    }
    at += n_slots;
    for slot in &state.user_requested {
        v[at + schema.slot_index(*slot)] = 1.0;
    }
    at += n_slots;
    for slot in state.agent_informed.keys() {
        v[at + schema.slot_index(*slot)] = 1.0;
    }
    at += n_slots;
    if let Some(id) = state.last_agent_action {
        v[at + id] = 1.0;
    }
    at += actions.len();
    v[at + kb_bucket(state.kb_match_count)] = 1.0;
    at += KB_BUCKETS;
    v[at] = f64::from(state.turn) / f64::from(max_turns);
    v
}

/// Greedy action with lowest-index tie breaking.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Uniform random action with probability `epsilon`, otherwise the greedy
/// action under `q_net`.
pub fn select_action<R: Rng + ?Sized>(q_net: &DenseNet, state_vec: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..q_net.output_dim()));
    }
    Ok(argmax(&q_net.predict(state_vec)?))
}

/// `y = r` for terminal transitions, else `r + γ max_a' Q'(s', a')`.
pub fn td_targets(batch: &[&Experience], target_net: &DenseNet, gamma: f64) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    batch
        .iter()
        .map(|e| {
            if e.terminal {
                Ok(e.reward)
            } else {
                let q = target_net.predict(&e.next_state_vec)?;
                let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Ok(e.reward + gamma * best)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferKind {
    Real,
    Simulated,
}

/// Fixed-capacity FIFO of experiences. The real buffer holds both
/// human-human and human-agent transitions, tagged by source.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    kind: BufferKind,
    capacity: usize,
    items: VecDeque<Experience>,
    reads: Cell<u64>,
}

impl ReplayBuffer {
    pub fn new(kind: BufferKind, capacity: usize) -> Self {
        Self {
            kind,
            capacity,
            items: VecDeque::with_capacity(capacity),
            reads: Cell::new(0),
        }
    }

    pub fn kind(&self) -> BufferKind {
        self.kind
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, evicting the oldest item when full. Sources must match the
    /// buffer kind.
    pub fn push(&mut self, exp: Experience) -> Result<()> {
        let fits = match self.kind {
            BufferKind::Real => exp.source.is_real(),
            BufferKind::Simulated => !exp.source.is_real(),
        };
        if !fits {
            return Err(Error::InvalidArgument(format!(
                "{:?} experience cannot enter the {:?} buffer",
                exp.source, self.kind
            )));
        }
        if self.capacity == 0 {
            return Ok(());
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(exp);
        Ok(())
    }

    pub fn extend(&mut self, exps: impl IntoIterator<Item = Experience>) -> Result<()> {
        for e in exps {
            self.push(e)?;
        }
        Ok(())
    }

    /// Item access for training; every call is counted.
    pub fn get(&self, index: usize) -> Option<&Experience> {
        self.reads.set(self.reads.get() + 1);
        self.items.get(index)
    }

    /// Number of item reads served so far.
    pub fn reads(&self) -> u64 {
        self.reads.get()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.reads.set(self.reads.get() + self.items.len() as u64);
        self.items.iter()
    }

    pub fn count_source(&self, source: ExperienceSource) -> usize {
        self.items.iter().filter(|e| e.source == source).count()
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub hidden_size: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub optimizer: RmsPropConfig,
    pub init: InitScheme,
    /// Large-margin imitation term on human-human transitions: the
    /// demonstrated action is pushed at least `demo_margin` above every other
    /// action. A zero weight gives plain TD learning.
    pub demo_margin: f64,
    pub demo_weight: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden_size: 80,
            gamma: 0.9,
            epsilon: 0.1,
            batch_size: 16,
            buffer_capacity: 3000,
            optimizer: RmsPropConfig::default(),
            init: InitScheme::default(),
            demo_margin: 5.0,
            demo_weight: 20.0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidArgument("gamma and epsilon must lie in [0, 1]".into()));
        }
        if self.hidden_size == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("hidden size and batch size must be positive".into()));
        }
        if !(self.demo_margin >= 0.0 && self.demo_weight >= 0.0) {
            return Err(Error::InvalidArgument("demonstration margin and weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// Q-network, frozen target copy, and optimizer state.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub config: AgentConfig,
    q_net: DenseNet,
    target_net: DenseNet,
    optimizer: RmsProp,
    actions: ActionSpace,
    grads: Gradients,
}

impl DqnAgent {
    pub fn new(config: AgentConfig, state_dim: usize, actions: ActionSpace, seed: u64) -> Result<Self> {
        config.validate()?;
        let q_net = nn::init_params_with(&[state_dim, config.hidden_size, actions.len()], seed, config.init)?;
        Ok(Self::from_net(config, q_net, actions))
    }

    fn from_net(config: AgentConfig, q_net: DenseNet, actions: ActionSpace) -> Self {
        let optimizer = RmsProp::new(&q_net, config.optimizer);
        let grads = Gradients::zeros_like(&q_net);
        Self {
            config,
            target_net: q_net.clone(),
            q_net,
            optimizer,
            actions,
            grads,
        }
    }

    pub fn q_net(&self) -> &DenseNet {
        &self.q_net
    }

    pub fn target_net(&self) -> &DenseNet {
        &self.target_net
    }

    pub fn actions(&self) -> &ActionSpace {
        &self.actions
    }

    pub fn q_values(&self, state_vec: &[f64]) -> Result<Vec<f64>> {
        self.q_net.predict(state_vec)
    }

    pub fn act<R: Rng + ?Sized>(&self, state_vec: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
        select_action(&self.q_net, state_vec, epsilon, rng)
    }

    /// Copies the Q-network into the target network.
    pub fn sync_target(&mut self) {
        self.target_net = self.q_net.clone();
    }

    /// One RMSProp step on a minibatch drawn uniformly from the union of
    /// both buffers. Returns the loss before the step.
    pub fn train_batch<R: Rng + ?Sized>(&mut self, real: &ReplayBuffer, simulated: &ReplayBuffer, rng: &mut R) -> Result<f64> {
        let total = real.len() + simulated.len();
        if total == 0 {
            return Err(Error::EmptyBuffer);
        }
        let batch: Vec<&Experience> = (0..self.config.batch_size)
            .map(|_| {
                let i = rng.random_range(0..total);
                if i < real.len() {
                    real.get(i)
                } else {
                    simulated.get(i - real.len())
                }
                .expect("index within buffer")
            })
            .collect();
        self.train_on(&batch)
    }

    /// Mean-squared TD loss and one optimizer step on a fixed batch.
    pub fn train_on(&mut self, batch: &[&Experience]) -> Result<f64> {
        let targets = td_targets(batch, &self.target_net, self.config.gamma)?;
        let n = batch.len() as f64;
        self.grads.clear();
        let mut loss = 0.0;
        let mut out_grad = vec![0.0; self.actions.len()];
        for (exp, y) in batch.iter().zip(&targets) {
            let cache = self.q_net.forward(&exp.state_vec)?;
            let q = cache.output()[exp.action_id];
            loss += (y - q).powi(2) / n;
            out_grad.iter_mut().for_each(|g| *g = 0.0);
            out_grad[exp.action_id] = 2.0 * (q - y) / n;
            if exp.source == ExperienceSource::HumanHuman && self.config.demo_weight > 0.0 {
                let w = self.config.demo_weight;
                let margin = self.config.demo_margin;
                let (best, best_q) = cache
                    .output()
                    .iter()
                    .enumerate()
                    .map(|(a, &qa)| (a, if a == exp.action_id { qa } else { qa + margin }))
                    .fold((exp.action_id, f64::NEG_INFINITY), |acc, (a, v)| if v > acc.1 { (a, v) } else { acc });
                if best != exp.action_id {
                    loss += w * (best_q - q) / n;
                    out_grad[best] += w / n;
                    out_grad[exp.action_id] -= w / n;
                }
            }
            self.q_net.backward_into(&cache, &out_grad, 1.0, &mut self.grads)?;
        }
        self.optimizer.step(&mut self.q_net, &self.grads)?;
        Ok(loss)
    }

    /// Replay buffer spiking: seeds the real buffer with demonstrations and
    /// runs `steps` updates on it.
    pub fn rbs_pretrain<R: Rng + ?Sized>(
        &mut self,
        real: &mut ReplayBuffer,
        demonstrations: Vec<Experience>,
        steps: usize,
        rng: &mut R,
    ) -> Result<()> {
        if demonstrations.is_empty() {
            return Err(Error::InvalidArgument("no demonstrations".into()));
        }
        real.extend(demonstrations)?;
        let empty = ReplayBuffer::new(BufferKind::Simulated, 0);
        for _ in 0..steps {
            self.train_batch(real, &empty, rng)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        let manifest = serde_json::json!({
            "actions": self.actions,
            "config": self.config,
        });
        nn::write_checkpoint(file, &[("q", &self.q_net)], manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read(file)
    }

    pub fn read<R: std::io::Read>(input: R) -> Result<Self> {
        let (mut nets, manifest) = nn::read_checkpoint(input)?;
        let (name, q_net) = nets.pop().ok_or_else(|| Error::Checkpoint("no networks".into()))?;
        if name != "q" || !nets.is_empty() {
            return Err(Error::Checkpoint("expected a single `q` network".into()));
        }
        let actions: ActionSpace = serde_json::from_value(manifest["actions"].clone())?;
        let config: AgentConfig = serde_json::from_value(manifest["config"].clone())?;
        if actions.len() != q_net.output_dim() {
            return Err(Error::Checkpoint("action manifest does not match network".into()));
        }
        Ok(Self::from_net(config, q_net, actions))
    }
}
