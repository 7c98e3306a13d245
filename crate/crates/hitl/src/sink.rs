//! Serialized command queue between the HTTP sessions and the training run.
//! A single task owns the ledger and the collected real experience, so
//! concurrent sessions never race on budget.

use bcs_core::agent::ReplayBuffer;
use bcs_core::bcs::{BudgetLedger, Route};
use bcs_core::domain::{step_reward, Experience};
use serde::Serialize;
use tokio::sync::{mpsc, oneshot};

/// Real experience gathered by one closed session.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub route: Route,
    pub success: bool,
    pub experiences: Vec<Experience>,
}

/// Snapshot of the training side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RunStatus {
    pub ledger: BudgetLedger,
    /// Budget still open to sessions in the current epoch.
    pub epoch_budget: u64,
    pub pending_records: usize,
}

enum Command {
    OpenEpoch(u64, oneshot::Sender<RunStatus>),
    Reserve(Route, oneshot::Sender<Result<(), String>>),
    Commit(SessionRecord),
    Amend {
        session_id: String,
        success: bool,
        max_turns: u32,
    },
    Status(oneshot::Sender<RunStatus>),
    Drain(oneshot::Sender<Vec<SessionRecord>>),
}

/// Cloneable handle to the queue.
#[derive(Clone)]
pub struct TrainingLink {
    tx: mpsc::UnboundedSender<Command>,
}

#[derive(Debug, thiserror::Error)]
#[error("the training run has stopped")]
pub struct LinkClosed;

impl TrainingLink {
    /// Starts the queue owner with `total_budget` for the whole run and no
    /// budget open yet.
    pub fn spawn(total_budget: u64) -> Self {
        let (tx, rx) = mpsc::unbounded_channel();
        tokio::spawn(run_queue(BudgetLedger::new(total_budget), rx));
        Self { tx }
    }

    async fn ask<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Command) -> Result<T, LinkClosed> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(make(reply)).map_err(|_| LinkClosed)?;
        rx.await.map_err(|_| LinkClosed)
    }

    /// Sets the real-interaction budget available for the current epoch,
    /// capped by what the ledger has left.
    pub async fn open_epoch(&self, budget: u64) -> Result<RunStatus, LinkClosed> {
        self.ask(|r| Command::OpenEpoch(budget, r)).await
    }

    /// Charges `route` if the epoch still has room for it.
    pub async fn reserve(&self, route: Route) -> Result<Result<(), String>, LinkClosed> {
        self.ask(|r| Command::Reserve(route, r)).await
    }

    pub fn commit(&self, record: SessionRecord) -> Result<(), LinkClosed> {
        self.tx.send(Command::Commit(record)).map_err(|_| LinkClosed)
    }

    /// Applies late feedback to a record that has not been drained yet.
    pub fn amend(&self, session_id: String, success: bool, max_turns: u32) -> Result<(), LinkClosed> {
        self.tx
            .send(Command::Amend {
                session_id,
                success,
                max_turns,
            })
            .map_err(|_| LinkClosed)
    }

    pub async fn status(&self) -> Result<RunStatus, LinkClosed> {
        self.ask(Command::Status).await
    }

    /// Takes every committed record, oldest first.
    pub async fn drain(&self) -> Result<Vec<SessionRecord>, LinkClosed> {
        self.ask(Command::Drain).await
    }

    /// Moves committed experience into a real replay buffer.
    pub async fn drain_into(&self, real: &mut ReplayBuffer) -> Result<usize, LinkClosed> {
        let records = self.drain().await?;
        let mut n = 0;
        for record in records {
            n += record.experiences.len();
            real.extend(record.experiences).map_err(|_| LinkClosed)?;
        }
        Ok(n)
    }
}

async fn run_queue(mut ledger: BudgetLedger, mut rx: mpsc::UnboundedReceiver<Command>) {
    let mut epoch_budget = 0;
    let mut records: Vec<SessionRecord> = Vec::new();
    while let Some(command) = rx.recv().await {
        match command {
            Command::OpenEpoch(budget, reply) => {
                epoch_budget = budget.min(ledger.remaining());
                let _ = reply.send(RunStatus {
                    ledger,
                    epoch_budget,
                    pending_records: records.len(),
                });
            }
            Command::Reserve(route, reply) => {
                let cost = route.cost();
                let outcome = if epoch_budget == 0 {
                    Err("no real-interaction budget".to_string())
                } else if cost > epoch_budget {
                    Err(format!(
                        "route {} costs {cost} but only {epoch_budget} is left this epoch",
                        route.as_str()
                    ))
                } else {
                    ledger.charge(route).map_err(|e| e.to_string()).map(|()| {
                        epoch_budget -= cost;
                    })
                };
                let _ = reply.send(outcome);
            }
            Command::Commit(record) => records.push(record),
            Command::Amend {
                session_id,
                success,
                max_turns,
            } => {
                if let Some(record) = records.iter_mut().find(|r| r.session_id == session_id) {
                    record.success = success;
                    if let Some(last) = record.experiences.last_mut() {
                        last.reward = step_reward(true, success, max_turns);
                    }
                }
            }
            Command::Status(reply) => {
                let _ = reply.send(RunStatus {
                    ledger,
                    epoch_budget,
                    pending_records: records.len(),
                });
            }
            Command::Drain(reply) => {
                let _ = reply.send(std::mem::take(&mut records));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn reservations_follow_the_epoch_budget() {
        let link = TrainingLink::spawn(5);
        assert!(link.reserve(Route::Ha).await.unwrap().is_err());
        link.open_epoch(3).await.unwrap();
        assert!(link.reserve(Route::Hh).await.unwrap().is_ok());
        assert!(link.reserve(Route::Hh).await.unwrap().is_err());
        assert!(link.reserve(Route::Ha).await.unwrap().is_ok());
        let status = link.status().await.unwrap();
        assert_eq!(status.ledger.spent_total, 3);
        assert_eq!((status.ledger.hh, status.ledger.ha), (1, 1));
        assert_eq!(status.epoch_budget, 0);
        // Capped by what the run has left.
        assert_eq!(link.open_epoch(10).await.unwrap().epoch_budget, 2);
    }

    #[tokio::test]
    async fn records_drain_once() {
        let link = TrainingLink::spawn(0);
        link.commit(SessionRecord {
            session_id: "x".into(),
            route: Route::Ha,
            success: true,
            experiences: Vec::new(),
        })
        .unwrap();
        assert_eq!(link.drain().await.unwrap().len(), 1);
        assert!(link.drain().await.unwrap().is_empty());
    }
}
