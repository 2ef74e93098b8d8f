//! In-process agent-to-agent message bus with deterministic FIFO delivery,
//! plus the conversation checker that audits a finished message trace.
//!
//! The bus replaces a networked chat server with a synchronous mailbox per
//! agent: delivery is loss-free, order-preserving and carries no latency.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{TaskKind, Tick};

pub type MsgId = u64;

/// Terminal outcome a robot reports for an order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Completed,
    Failed,
}

/// Message body. The direction of each variant is fixed: `IdentityCheck`
/// and `Order` flow master to robot, `Identity` and `OrderNotice` flow
/// robot to master.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Payload {
    IdentityCheck {},
    Identity {
        robot_id: String,
        capabilities: BTreeSet<TaskKind>,
    },
    Order {
        task_id: String,
    },
    OrderNotice {
        task_id: String,
        elapsed_ticks: u64,
        outcome: Outcome,
    },
}

impl Payload {
    pub fn type_name(&self) -> &'static str {
        match self {
            Payload::IdentityCheck {} => "IdentityCheck",
            Payload::Identity { .. } => "Identity",
            Payload::Order { .. } => "Order",
            Payload::OrderNotice { .. } => "OrderNotice",
        }
    }

    /// True for the request payloads a master emits.
    pub fn is_master_sent(&self) -> bool {
        matches!(self, Payload::IdentityCheck {} | Payload::Order { .. })
    }
}

/// A delivered message. `sent_at` is serialized as `tick` so a trace line
/// reads `{"tick", "msg_id", "from", "to", "correlates", "payload"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(rename = "tick")]
    pub sent_at: Tick,
    pub msg_id: MsgId,
    pub from: String,
    pub to: String,
    pub correlates: Option<MsgId>,
    pub payload: Payload,
}

/// Everything an agent supplies when sending; the bus fills in the id and
/// timestamp.
#[derive(Debug, Clone)]
pub struct Draft {
    pub from: String,
    pub to: String,
    pub correlates: Option<MsgId>,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BusError {
    #[error("unknown agent: {0}")]
    UnknownAgent(String),
}

/// Deterministic in-process mailbox bus. Message ids are assigned from a
/// single monotone counter, so any trace is globally ordered by `msg_id`.
#[derive(Debug, Default)]
pub struct MessageBus {
    now: Tick,
    next_msg_id: MsgId,
    mailboxes: BTreeMap<String, VecDeque<Envelope>>,
}

impl MessageBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, agent_id: impl Into<String>) {
        self.mailboxes.entry(agent_id.into()).or_default();
    }

    pub fn is_registered(&self, agent_id: &str) -> bool {
        self.mailboxes.contains_key(agent_id)
    }

    /// Advances the bus clock; subsequent sends are stamped with `now`.
    pub fn set_now(&mut self, now: Tick) {
        self.now = now;
    }

    /// Stamps and enqueues a message, returning the delivered envelope.
    /// Delivery is immediate: the recipient sees it at its next drain.
    pub fn send(&mut self, draft: Draft) -> Result<Envelope, BusError> {
        if !self.mailboxes.contains_key(&draft.to) {
            return Err(BusError::UnknownAgent(draft.to));
        }
        let envelope = Envelope {
            sent_at: self.now,
            msg_id: self.next_msg_id,
            from: draft.from,
            to: draft.to,
            correlates: draft.correlates,
            payload: draft.payload,
        };
        self.next_msg_id += 1;
        self.mailboxes
            .get_mut(&envelope.to)
            .expect("recipient checked above")
            .push_back(envelope.clone());
        Ok(envelope)
    }

    /// Removes and returns every pending message for `agent_id`, ascending
    /// by message id.
    pub fn drain_mailbox(&mut self, agent_id: &str) -> Result<Vec<Envelope>, BusError> {
        let mailbox = self
            .mailboxes
            .get_mut(agent_id)
            .ok_or_else(|| BusError::UnknownAgent(agent_id.to_string()))?;
        let mut drained: Vec<Envelope> = mailbox.drain(..).collect();
        drained.sort_by_key(|e| e.msg_id);
        Ok(drained)
    }
}

/// Audits a message trace against the conversation rules and returns one
/// message per violation, in trace order.
///
/// Roles are inferred from behaviour: an agent that sends `IdentityCheck`
/// or `Order` acts as a master, one that sends `Identity` or `OrderNotice`
/// acts as a robot; no agent may act as both.
pub fn conversation_check(trace: &[Envelope]) -> Vec<String> {
    let mut violations = Vec::new();
    let mut masters: BTreeSet<&str> = BTreeSet::new();
    let mut robots: BTreeSet<&str> = BTreeSet::new();
    // (master, robot) pairs with an identity check already sent
    let mut checked: BTreeSet<(&str, &str)> = BTreeSet::new();
    // msg_id -> (task_id, from, to) for orders not yet answered
    let mut outstanding: BTreeMap<MsgId, (&str, &str, &str)> = BTreeMap::new();
    let mut completed_tasks: BTreeSet<&str> = BTreeSet::new();

    let mut last_id: Option<MsgId> = None;
    for envelope in trace {
        if let Some(prev) = last_id {
            if envelope.msg_id <= prev {
                violations.push(format!(
                    "msg {}: ids must be strictly increasing (previous {prev})",
                    envelope.msg_id
                ));
            }
        }
        last_id = Some(envelope.msg_id);

        let sender_role = if envelope.payload.is_master_sent() {
            (&mut masters, &robots)
        } else {
            (&mut robots, &masters)
        };
        if sender_role.1.contains(envelope.from.as_str()) {
            violations.push(format!(
                "msg {}: direction violation, {} sent {} while acting in the opposite role",
                envelope.msg_id,
                envelope.from,
                envelope.payload.type_name()
            ));
        } else {
            sender_role.0.insert(envelope.from.as_str());
        }

        match &envelope.payload {
            Payload::IdentityCheck {} => {
                checked.insert((envelope.from.as_str(), envelope.to.as_str()));
            }
            Payload::Identity { .. } => {
                if !checked.contains(&(envelope.to.as_str(), envelope.from.as_str())) {
                    violations.push(format!(
                        "msg {}: Identity without IdentityCheck ({} -> {})",
                        envelope.msg_id, envelope.from, envelope.to
                    ));
                }
            }
            Payload::Order { task_id } => {
                outstanding.insert(
                    envelope.msg_id,
                    (task_id.as_str(), envelope.from.as_str(), envelope.to.as_str()),
                );
            }
            Payload::OrderNotice { task_id, outcome, .. } => {
                let matched = envelope.correlates.and_then(|id| {
                    outstanding
                        .get(&id)
                        .copied()
                        .filter(|(order_task, from, to)| {
                            *order_task == task_id.as_str()
                                && *from == envelope.to
                                && *to == envelope.from
                        })
                        .map(|_| id)
                });
                match matched {
                    Some(order_id) => {
                        outstanding.remove(&order_id);
                        if *outcome == Outcome::Completed
                            && !completed_tasks.insert(task_id.as_str())
                        {
                            violations.push(format!(
                                "msg {}: duplicate completion for {task_id}",
                                envelope.msg_id
                            ));
                        }
                    }
                    None => violations.push(format!(
                        "msg {}: OrderNotice without matching outstanding Order for {task_id}",
                        envelope.msg_id
                    )),
                }
            }
        }
    }
    violations
}
