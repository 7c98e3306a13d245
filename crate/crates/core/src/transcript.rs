//! JSONL dialogue transcripts, one act per line with its speaker and turn,
//! and replay of a transcript into the tracked dialogue state.

use crate::domain::{DialogueAct, DialogueState, Speaker};
use crate::env::DialogueEnv;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// One transcript line. `turn` counts agent turns: an agent act carries the
/// turn it opens, a user act the turn it answers (0 for the opening).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub turn: u32,
    #[serde(flatten)]
    pub act: DialogueAct,
}

/// Records `act` in `state` the way every dialogue driver does: the
/// knowledge-base count is refreshed and agent acts that fit the action
/// space set `last_agent_action`.
pub fn track(env: &DialogueEnv, state: &mut DialogueState, act: &DialogueAct) {
    match act.speaker {
        Speaker::User => env.observe(state, act),
        Speaker::Agent => match env.actions.classify(act) {
            Some(id) => env.observe_agent(state, id, act),
            None => {
                env.observe(state, act);
                state.last_agent_action = None;
            }
        },
    }
}

/// Numbers a sequence of acts by agent turn.
pub fn lines_from_acts<'a>(acts: impl IntoIterator<Item = &'a DialogueAct>) -> Vec<TranscriptLine> {
    let mut turn = 0;
    acts.into_iter()
        .map(|act| {
            if act.speaker == Speaker::Agent {
                turn += 1;
            }
            TranscriptLine { turn, act: act.clone() }
        })
        .collect()
}

pub fn write_jsonl<W: Write>(mut out: W, lines: &[TranscriptLine]) -> Result<()> {
    for line in lines {
        serde_json::to_writer(&mut out, line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<TranscriptLine>> {
    let mut lines = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidArgument(format!("transcript line {}: {e}", n + 1)))?;
        lines.push(parsed);
    }
    Ok(lines)
}

pub fn save(path: &Path, lines: &[TranscriptLine]) -> Result<()> {
    write_jsonl(std::io::BufWriter::new(std::fs::File::create(path)?), lines)
}

pub fn load(path: &Path) -> Result<Vec<TranscriptLine>> {
    read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Rebuilds the final dialogue state from a transcript, checking that the
/// turn numbers are consistent with the acts.
pub fn replay(env: &DialogueEnv, lines: &[TranscriptLine]) -> Result<DialogueState> {
    let mut state = env.initial_state();
    for (n, line) in lines.iter().enumerate() {
        line.act.validate()?;
        track(env, &mut state, &line.act);
        if state.turn != line.turn {
            return Err(Error::InvalidArgument(format!(
                "transcript line {} claims turn {} but replay is at turn {}",
                n + 1,
                line.turn,
                state.turn
            )));
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ExperienceSource;
    use crate::env::{run_dialogue, RulePolicy};
    use crate::kb::{default_kb, enumerate_goals};
    use crate::schema::Slot;
    use crate::simulator::UserSimConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn replay_reconstructs_simulated_dialogues() {
        let env = DialogueEnv::new(default_kb(), UserSimConfig::default());
        let goals = enumerate_goals(&env.kb, 3, 30);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut policy = RulePolicy::new(env.actions.clone());
        for goal in &goals {
            let episode = run_dialogue(&env, &mut policy, goal, ExperienceSource::HumanAgent, &mut rng).unwrap();
            let lines = lines_from_acts(&episode.final_state.history);
            let mut buf = Vec::new();
            write_jsonl(&mut buf, &lines).unwrap();
            let parsed = read_jsonl(buf.as_slice()).unwrap();
            assert_eq!(parsed, lines);
            assert_eq!(replay(&env, &parsed).unwrap(), episode.final_state);
        }
    }

    #[test]
    fn lines_carry_speaker_and_turn_fields() {
        let act = DialogueAct::request(Speaker::Agent, Slot::Date);
        let lines = lines_from_acts([&act]);
        let json: serde_json::Value = serde_json::to_value(&lines[0]).unwrap();
        assert_eq!(json["speaker"], "agent");
        assert_eq!(json["turn"], 1);
        assert_eq!(json["intent"], "request");
    }

    #[test]
    fn inconsistent_turns_are_rejected() {
        let env = DialogueEnv::new(default_kb(), UserSimConfig::default());
        let line = TranscriptLine {
            turn: 3,
            act: DialogueAct::request(Speaker::Agent, Slot::Date),
        };
        assert!(replay(&env, &[line]).is_err());
    }
}
