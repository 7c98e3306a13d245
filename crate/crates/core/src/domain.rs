//! Shared dialogue vocabulary: acts, goals, tracked state, experiences, and
//! reward and outcome rules.

use crate::schema::{Intent, Slot};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Value a user gives for a slot it has no constraint on.
pub const DONT_CARE: &str = "dontcare";
/// Value an agent informs when the knowledge base has no matching row.
pub const NO_MATCH: &str = "no match available";
/// `taskcomplete` value carried by a successful booking act.
pub const BOOKED: &str = "booked";
/// Default maximum number of agent turns per dialogue.
pub const DEFAULT_MAX_TURNS: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Agent,
    User,
}

/// One dialogue act: an intent plus slot/value pairs and requested slots.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DialogueAct {
    pub speaker: Speaker,
    pub intent: Intent,
    #[serde(default)]
    pub inform_slots: BTreeMap<Slot, String>,
    #[serde(default)]
    pub request_slots: BTreeSet<Slot>,
}

impl DialogueAct {
    pub fn new(speaker: Speaker, intent: Intent) -> Self {
        Self {
            speaker,
            intent,
            inform_slots: BTreeMap::new(),
            request_slots: BTreeSet::new(),
        }
    }

    pub fn inform(speaker: Speaker, slots: impl IntoIterator<Item = (Slot, String)>) -> Self {
        let mut act = Self::new(speaker, Intent::Inform);
        act.inform_slots.extend(slots);
        act
    }

    pub fn request(speaker: Speaker, slot: Slot) -> Self {
        let mut act = Self::new(speaker, Intent::Request);
        act.request_slots.insert(slot);
        act
    }

    pub fn with_inform(mut self, slot: Slot, value: impl Into<String>) -> Self {
        self.inform_slots.insert(slot, value.into());
        self
    }

    pub fn with_request(mut self, slot: Slot) -> Self {
        self.request_slots.insert(slot);
        self
    }

    /// True for the agent's booking act (`inform(taskcomplete)`).
    pub fn is_booking(&self) -> bool {
        self.intent == Intent::Inform && self.inform_slots.contains_key(&Slot::TaskComplete)
    }

    /// Structural checks beyond what the type system enforces.
    pub fn validate(&self) -> Result<()> {
        match self.intent {
            Intent::Request if self.request_slots.is_empty() => {
                return Err(Error::InvalidAct("request act without request slots".into()))
            }
            Intent::Inform if self.inform_slots.is_empty() => {
                return Err(Error::InvalidAct("inform act without slot values".into()))
            }
            _ => {}
        }
        if let Some((slot, _)) = self.inform_slots.iter().find(|(_, v)| v.trim().is_empty()) {
            return Err(Error::InvalidAct(format!("empty value for slot `{slot}`")));
        }
        Ok(())
    }
}

/// A task instance: constraints the booking must satisfy and information the
/// user wants back.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UserGoal {
    pub constraints: BTreeMap<Slot, String>,
    pub requests: BTreeSet<Slot>,
}

impl UserGoal {
    pub fn new(
        constraints: impl IntoIterator<Item = (Slot, String)>,
        requests: impl IntoIterator<Item = Slot>,
    ) -> Result<Self> {
        let goal = Self {
            constraints: constraints.into_iter().collect(),
            requests: requests.into_iter().collect(),
        };
        goal.validate()?;
        Ok(goal)
    }

    pub fn validate(&self) -> Result<()> {
        if self.constraints.is_empty() {
            return Err(Error::InvalidGoal("no constraint slots".into()));
        }
        if !self.requests.contains(&Slot::Ticket) {
            return Err(Error::InvalidGoal("requests must include ticket".into()));
        }
        if let Some(slot) = self.constraints.keys().find(|s| !s.is_informable()) {
            return Err(Error::InvalidGoal(format!("`{slot}` cannot be a constraint")));
        }
        if let Some(slot) = self.requests.iter().find(|s| !s.is_requestable()) {
            return Err(Error::InvalidGoal(format!("`{slot}` cannot be requested")));
        }
        if let Some(slot) = self.requests.iter().find(|s| self.constraints.contains_key(s)) {
            return Err(Error::InvalidGoal(format!("`{slot}` is both constraint and request")));
        }
        Ok(())
    }

    /// Slot signature used to group goals into categories.
    pub fn signature(&self) -> (Vec<Slot>, Vec<Slot>) {
        (
            self.constraints.keys().copied().collect(),
            self.requests.iter().copied().collect(),
        )
    }
}

impl Slot {
    pub fn is_informable(self) -> bool {
        crate::schema::INFORMABLE_SLOTS.contains(&self)
    }

    pub fn is_requestable(self) -> bool {
        crate::schema::REQUESTABLE_SLOTS.contains(&self)
    }
}

/// Tracked dialogue state, updated act by act.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueState {
    /// Agent turns taken so far.
    pub turn: u32,
    pub history: Vec<DialogueAct>,
    pub user_informed: BTreeMap<Slot, String>,
    pub user_requested: BTreeSet<Slot>,
    pub agent_informed: BTreeMap<Slot, String>,
    pub kb_match_count: usize,
    /// Action-space index of the agent's most recent act, if it had one.
    pub last_agent_action: Option<usize>,
}

impl DialogueState {
    pub fn new(kb_match_count: usize) -> Self {
        Self {
            turn: 0,
            history: Vec::new(),
            user_informed: BTreeMap::new(),
            user_requested: BTreeSet::new(),
            agent_informed: BTreeMap::new(),
            kb_match_count,
            last_agent_action: None,
        }
    }

    /// Records an act. Agent acts advance the turn counter. The caller is
    /// responsible for refreshing `kb_match_count` afterwards.
    pub fn observe(&mut self, act: &DialogueAct) {
        match act.speaker {
            Speaker::User => {
                for (slot, value) in &act.inform_slots {
                    self.user_informed.insert(*slot, value.clone());
                }
                self.user_requested.extend(act.request_slots.iter().copied());
            }
            Speaker::Agent => {
                self.turn += 1;
                for (slot, value) in &act.inform_slots {
                    self.agent_informed.insert(*slot, value.clone());
                }
            }
        }
        self.history.push(act.clone());
    }

    /// User-stated constraints usable as a knowledge-base query.
    pub fn constraints(&self) -> BTreeMap<Slot, String> {
        self.user_informed
            .iter()
            .filter(|(_, v)| v.as_str() != DONT_CARE)
            .map(|(s, v)| (*s, v.clone()))
            .collect()
    }

    pub fn last_user_act(&self) -> Option<&DialogueAct> {
        self.history.iter().rev().find(|a| a.speaker == Speaker::User)
    }

    pub fn last_agent_act(&self) -> Option<&DialogueAct> {
        self.history.iter().rev().find(|a| a.speaker == Speaker::Agent)
    }

    /// True once the agent has issued a booking backed by a knowledge-base row.
    pub fn booked(&self) -> bool {
        self.agent_informed
            .get(&Slot::TaskComplete)
            .is_some_and(|v| v == BOOKED)
    }
}

/// Origin of an experience; decides which replay buffer it lands in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperienceSource {
    HumanHuman,
    HumanAgent,
    Simulated,
}

impl ExperienceSource {
    pub fn is_real(self) -> bool {
        !matches!(self, ExperienceSource::Simulated)
    }
}

/// One agent-turn transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub state_vec: Vec<f64>,
    pub action_id: usize,
    pub reward: f64,
    pub user_act: DialogueAct,
    pub next_state_vec: Vec<f64>,
    pub terminal: bool,
    pub source: ExperienceSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DialogueOutcome {
    pub success: bool,
    pub turns: u32,
    pub cumulative_reward: f64,
}

/// Reward for one agent turn: `-1` on non-terminal turns, `2L` on a
/// successful terminal turn, and `-L` on a failed one.
pub fn turn_reward(is_terminal: bool, success: bool, max_turns: u32) -> f64 {
    debug_assert!(max_turns > 0);
    let l = f64::from(max_turns);
    match (is_terminal, success) {
        (false, _) => -1.0,
        (true, true) => 2.0 * l,
        (true, false) => -l,
    }
}

/// Full reward credited for an agent turn. The terminal turn carries the
/// per-turn penalty plus the terminal bonus or penalty.
pub fn step_reward(is_terminal: bool, success: bool, max_turns: u32) -> f64 {
    let step = turn_reward(false, success, max_turns);
    if is_terminal {
        step + turn_reward(true, success, max_turns)
    } else {
        step
    }
}

/// `-turns + 2L` for successes, `-turns - L` for failures.
pub fn dialogue_return(turns: u32, success: bool, max_turns: u32) -> f64 {
    -f64::from(turns) + turn_reward(true, success, max_turns)
}

/// Judges a finished dialogue: the agent must have booked, the booking must
/// carry every constraint value, every request slot must have been answered,
/// and the dialogue must fit within `max_turns`.
pub fn judge_outcome(goal: &UserGoal, final_state: &DialogueState, max_turns: u32) -> DialogueOutcome {
    let informed = &final_state.agent_informed;
    let success = final_state.booked()
        && final_state.turn <= max_turns
        && goal
            .constraints
            .iter()
            .all(|(slot, value)| informed.get(slot).is_some_and(|v| v.eq_ignore_ascii_case(value)))
        && goal.requests.iter().all(|slot| {
            informed
                .get(slot)
                .is_some_and(|v| v != NO_MATCH && v != DONT_CARE)
        });
    DialogueOutcome {
        success,
        turns: final_state.turn,
        cumulative_reward: dialogue_return(final_state.turn, success, max_turns),
    }
}
