//! One human-in-the-loop dialogue. The human owns every turn on their side;
//! the machine counterpart (the dialogue agent for a human user, the
//! simulated user for a human agent) answers immediately.

use bcs_core::agent::DqnAgent;
use bcs_core::bcs::Route;
use bcs_core::domain::{
    judge_outcome, step_reward, DialogueAct, DialogueState, Experience, ExperienceSource, Speaker, UserGoal,
};
use bcs_core::env::DialogueEnv;
use bcs_core::schema::Intent;
use bcs_core::simulator::UserSimulator;
use bcs_core::transcript::{track, TranscriptLine};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;

/// Which side of the dialogue the human plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    HumanUser,
    HumanAgent,
}

impl Role {
    /// Budget route charged for a session in this role.
    pub fn route(self) -> Route {
        match self {
            Role::HumanUser => Route::Ha,
            Role::HumanAgent => Route::Hh,
        }
    }

    /// Tag carried by the session's experiences.
    pub fn source(self) -> ExperienceSource {
        match self {
            Role::HumanUser => ExperienceSource::HumanAgent,
            Role::HumanAgent => ExperienceSource::HumanHuman,
        }
    }

    pub fn speaker(self) -> Speaker {
        match self {
            Role::HumanUser => Speaker::User,
            Role::HumanAgent => Speaker::Agent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Open,
    Success,
    Failure,
}

impl Status {
    fn closed(success: bool) -> Self {
        if success {
            Status::Success
        } else {
            Status::Failure
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SessionError {
    #[error("session is closed")]
    Closed,
    #[error("session is still open")]
    StillOpen,
    #[error("it is not the {0:?} side's turn")]
    OutOfTurn(Speaker),
    #[error("malformed act: {0}")]
    Malformed(String),
}

enum Counterpart {
    Agent(Arc<DqnAgent>),
    User(Box<UserSimulator>),
}

/// What a posted act produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reply {
    pub act: Option<DialogueAct>,
    pub status: Status,
}

pub struct Session {
    pub id: String,
    pub role: Role,
    pub goal: UserGoal,
    pub charged: bool,
    status: Status,
    state: DialogueState,
    transcript: Vec<TranscriptLine>,
    experiences: Vec<Experience>,
    /// Agent turn waiting for the human user's answer.
    pending: Option<(Vec<f64>, usize)>,
    counterpart: Counterpart,
    feedback: Option<bool>,
    last_activity: Instant,
}

impl Session {
    /// A human user talks to `agent` while pursuing `goal`; the user opens.
    pub fn human_user(id: String, env: &DialogueEnv, goal: UserGoal, agent: Arc<DqnAgent>, charged: bool) -> Self {
        Self::new(id, Role::HumanUser, env, goal, Counterpart::Agent(agent), charged)
    }

    /// A human agent serves the simulated user; the simulator's opening act
    /// is already in the transcript.
    pub fn human_agent(
        id: String,
        env: &DialogueEnv,
        goal: UserGoal,
        seed: u64,
        charged: bool,
    ) -> bcs_core::Result<Self> {
        let (user, opening) = UserSimulator::start(&goal, seed, env.user)?;
        let mut session = Self::new(id, Role::HumanAgent, env, goal, Counterpart::User(Box::new(user)), charged);
        session.record(env, opening);
        Ok(session)
    }

    fn new(id: String, role: Role, env: &DialogueEnv, goal: UserGoal, counterpart: Counterpart, charged: bool) -> Self {
        Self {
            id,
            role,
            goal,
            charged,
            status: Status::Open,
            state: env.initial_state(),
            transcript: Vec::new(),
            experiences: Vec::new(),
            pending: None,
            counterpart,
            feedback: None,
            last_activity: Instant::now(),
        }
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn state(&self) -> &DialogueState {
        &self.state
    }

    pub fn transcript(&self) -> &[TranscriptLine] {
        &self.transcript
    }

    pub fn experiences(&self) -> &[Experience] {
        &self.experiences
    }

    pub fn feedback(&self) -> Option<bool> {
        self.feedback
    }

    pub fn last_activity(&self) -> Instant {
        self.last_activity
    }

    /// The side expected to act next, `None` once closed.
    pub fn turn_owner(&self) -> Option<Speaker> {
        (self.status == Status::Open).then(|| self.role.speaker())
    }

    fn record(&mut self, env: &DialogueEnv, act: DialogueAct) {
        track(env, &mut self.state, &act);
        self.transcript.push(TranscriptLine {
            turn: self.state.turn,
            act,
        });
    }

    /// Applies the human's act and the counterpart's answer. Returns `true`
    /// in the second slot when this act closed the session.
    pub fn post(&mut self, env: &DialogueEnv, act: DialogueAct) -> Result<(Reply, bool), SessionError> {
        if self.status != Status::Open {
            return Err(SessionError::Closed);
        }
        if act.speaker != self.role.speaker() {
            return Err(SessionError::OutOfTurn(act.speaker));
        }
        act.validate().map_err(|e| SessionError::Malformed(e.to_string()))?;
        self.last_activity = Instant::now();
        let reply = match self.role {
            Role::HumanUser => self.user_turn(env, act)?,
            Role::HumanAgent => self.agent_turn(env, act)?,
        };
        Ok((reply, self.status != Status::Open))
    }

    fn user_turn(&mut self, env: &DialogueEnv, act: DialogueAct) -> Result<Reply, SessionError> {
        let closing = act.intent == Intent::Closing;
        self.record(env, act.clone());
        if let Some((s, a)) = self.pending.take() {
            let terminal = closing;
            self.push(env, s, a, act, terminal, false);
        }
        if closing {
            // The user walked away before a booking.
            self.status = Status::Failure;
            return Ok(Reply {
                act: None,
                status: self.status,
            });
        }
        let Counterpart::Agent(agent) = &self.counterpart else {
            unreachable!("human users talk to the agent")
        };
        let s = env.encode(&self.state);
        let q = agent.q_values(&s).map_err(|e| SessionError::Malformed(e.to_string()))?;
        let action_id = bcs_core::agent::argmax(&q);
        let reply = env
            .actions
            .instantiate(action_id, &self.state, &env.kb)
            .map_err(|e| SessionError::Malformed(e.to_string()))?;
        self.record(env, reply.clone());
        if reply.is_booking() || self.state.turn >= env.max_turns() {
            let success = judge_outcome(&self.goal, &self.state, env.max_turns()).success;
            let closing = DialogueAct::new(Speaker::User, Intent::Closing);
            self.push(env, s, action_id, closing, true, success);
            self.status = Status::closed(success);
        } else {
            self.pending = Some((s, action_id));
        }
        Ok(Reply {
            act: Some(reply),
            status: self.status,
        })
    }

    fn agent_turn(&mut self, env: &DialogueEnv, act: DialogueAct) -> Result<Reply, SessionError> {
        let action_id = env
            .actions
            .classify(&act)
            .ok_or_else(|| SessionError::Malformed("act is outside the agent action space".into()))?;
        let Counterpart::User(user) = &mut self.counterpart else {
            unreachable!("human agents talk to the simulated user")
        };
        let turn = user.step(&act).map_err(|e| SessionError::Malformed(e.to_string()))?;
        let s = env.encode(&self.state);
        self.record(env, act);
        self.record(env, turn.act.clone());
        self.push(env, s, action_id, turn.act.clone(), turn.terminal, turn.success);
        if turn.terminal {
            self.status = Status::closed(turn.success);
        }
        Ok(Reply {
            act: Some(turn.act),
            status: self.status,
        })
    }

    fn push(&mut self, env: &DialogueEnv, s: Vec<f64>, a: usize, user_act: DialogueAct, terminal: bool, success: bool) {
        self.experiences.push(Experience {
            state_vec: s,
            action_id: a,
            reward: step_reward(terminal, success, env.max_turns()),
            user_act,
            next_state_vec: env.encode(&self.state),
            terminal,
            source: self.role.source(),
        });
    }

    /// Closes an idle session as a failure. Returns `true` if it was open.
    pub fn expire(&mut self, env: &DialogueEnv) -> bool {
        if self.status != Status::Open {
            return false;
        }
        if let Some((s, a)) = self.pending.take() {
            let closing = DialogueAct::new(Speaker::User, Intent::Closing);
            self.push(env, s, a, closing, true, false);
        } else if let Some(last) = self.experiences.last_mut() {
            last.terminal = true;
            last.reward = step_reward(true, false, env.max_turns());
        }
        self.status = Status::Failure;
        true
    }

    /// Explicit success judgement from the human. The first judgement wins;
    /// repeating it is a no-op.
    pub fn set_feedback(&mut self, env: &DialogueEnv, success: bool) -> Result<bool, SessionError> {
        if self.status == Status::Open {
            return Err(SessionError::StillOpen);
        }
        if let Some(first) = self.feedback {
            return Ok(first);
        }
        self.feedback = Some(success);
        self.status = Status::closed(success);
        if let Some(last) = self.experiences.last_mut() {
            last.reward = step_reward(true, success, env.max_turns());
        }
        Ok(success)
    }

    /// Route charged for this session, if any.
    pub fn charged_route(&self) -> Option<Route> {
        self.charged.then(|| self.role.route())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use bcs_core::agent::AgentConfig;
    use bcs_core::kb::default_kb;
    use bcs_core::schema::Slot;
    use bcs_core::simulator::UserSimConfig;

    fn env() -> DialogueEnv {
        DialogueEnv::new(default_kb(), UserSimConfig::default())
    }

    fn goal(env: &DialogueEnv) -> UserGoal {
        let row = &env.kb.rows()[0];
        UserGoal::new(
            [(Slot::MovieName, row.get(Slot::MovieName).unwrap().to_string())],
            [Slot::Ticket],
        )
        .unwrap()
    }

    #[test]
    fn human_agent_booking_closes_with_success() {
        let env = env();
        let goal = goal(&env);
        let mut session = Session::human_agent("a".into(), &env, goal.clone(), 3, false).unwrap();
        assert_eq!(session.transcript().len(), 1);
        let book = env.actions.id_of(bcs_core::agent::AgentAction::Book).unwrap();
        let act = env.actions.instantiate(book, session.state(), &env.kb).unwrap();
        let (reply, closed) = session.post(&env, act).unwrap();
        assert!(closed);
        assert_eq!(reply.status, Status::Success);
        assert_eq!(session.experiences().len(), 1);
        assert!(session.experiences()[0].terminal);
        assert_eq!(session.experiences()[0].source, ExperienceSource::HumanHuman);
    }

    #[test]
    fn wrong_speaker_and_closed_sessions_are_rejected() {
        let env = env();
        let agent = Arc::new(DqnAgent::new(AgentConfig::default(), env.state_dim(), env.actions.clone(), 1).unwrap());
        let mut session = Session::human_user("u".into(), &env, goal(&env), agent, false);
        let agent_act = DialogueAct::request(Speaker::Agent, Slot::Date);
        assert_eq!(
            session.post(&env, agent_act).unwrap_err(),
            SessionError::OutOfTurn(Speaker::Agent)
        );
        assert!(matches!(
            session.set_feedback(&env, true),
            Err(SessionError::StillOpen)
        ));
        session.post(&env, DialogueAct::new(Speaker::User, Intent::Closing)).unwrap();
        assert_eq!(session.status(), Status::Failure);
        let again = DialogueAct::new(Speaker::User, Intent::Thanks);
        assert_eq!(session.post(&env, again).unwrap_err(), SessionError::Closed);
    }

    #[test]
    fn feedback_rewrites_the_terminal_reward_once() {
        let env = env();
        let mut session = Session::human_agent("f".into(), &env, goal(&env), 1, false).unwrap();
        let book = env.actions.id_of(bcs_core::agent::AgentAction::Book).unwrap();
        let act = env.actions.instantiate(book, session.state(), &env.kb).unwrap();
        session.post(&env, act).unwrap();
        assert_eq!(session.status(), Status::Success);
        assert!(!session.set_feedback(&env, false).unwrap());
        assert_eq!(session.status(), Status::Failure);
        assert_eq!(session.experiences()[0].reward, step_reward(true, false, 40));
        assert!(!session.set_feedback(&env, true).unwrap());
        assert_eq!(session.status(), Status::Failure);
    }
}
