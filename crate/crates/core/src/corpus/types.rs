//! Core data types for command histories and task labels.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// One executed command: vocabulary id plus a timestamp in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandEvent {
    pub command_id: u32,
    pub timestamp: f64,
}

/// A user's full history, ordered by timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSequence {
    pub user_id: u64,
    pub events: Vec<CommandEvent>,
}

impl UserSequence {
    pub fn span(&self) -> f64 {
        match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => b.timestamp - a.timestamp,
            _ => 0.0,
        }
    }
}

/// A set of user histories over a shared command vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    /// Sorted by `user_id`.
    pub users: Vec<UserSequence>,
    /// Command names; `command_id` indexes into this list.
    pub vocab: Vec<String>,
}

impl Corpus {
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn user(&self, user_id: u64) -> Option<&UserSequence> {
        self.users
            .binary_search_by_key(&user_id, |u| u.user_id)
            .ok()
            .map(|i| &self.users[i])
    }

    /// Check structural invariants: ids strictly ascending, events sorted by
    /// time (ties allowed), command ids within the vocabulary, finite
    /// timestamps.
    pub fn validate(&self) -> Result<()> {
        let vocab = self.vocab.len();
        for pair in self.users.windows(2) {
            if pair[0].user_id >= pair[1].user_id {
                return Err(Error::Validation(format!(
                    "user ids out of order: {} then {}",
                    pair[0].user_id, pair[1].user_id
                )));
            }
        }
        for user in &self.users {
            if user.events.is_empty() {
                return Err(Error::Validation(format!("user {} has no events", user.user_id)));
            }
            for ev in &user.events {
                if (ev.command_id as usize) >= vocab {
                    return Err(Error::Validation(format!(
                        "user {}: command id {} outside vocabulary of {}",
                        user.user_id, ev.command_id, vocab
                    )));
                }
                if !ev.timestamp.is_finite() {
                    return Err(Error::Validation(format!(
                        "user {}: non-finite timestamp",
                        user.user_id
                    )));
                }
            }
            for pair in user.events.windows(2) {
                if pair[0].timestamp > pair[1].timestamp {
                    return Err(Error::Validation(format!(
                        "user {}: timestamps not sorted ({} after {})",
                        user.user_id, pair[1].timestamp, pair[0].timestamp
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A named classification task: `labels` maps user id → class index.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTask {
    pub name: String,
    pub classes: usize,
    pub labels: BTreeMap<u64, usize>,
}

impl LabeledTask {
    pub fn validate(&self) -> Result<()> {
        for (&user, &label) in &self.labels {
            if label >= self.classes {
                return Err(Error::Validation(format!(
                    "task {}: user {} has label {} but only {} classes",
                    self.name, user, label, self.classes
                )));
            }
        }
        Ok(())
    }

    /// Restrict the task to the given users (e.g. one side of a split).
    pub fn restricted_to(&self, users: &[u64]) -> LabeledTask {
        let keep: std::collections::BTreeSet<u64> = users.iter().copied().collect();
        LabeledTask {
            name: self.name.clone(),
            classes: self.classes,
            labels: self.labels.iter().filter(|(u, _)| keep.contains(u)).map(|(&u, &l)| (u, l)).collect(),
        }
    }
}

/// Reference session boundaries per user: the event index at which each
/// session starts, so `boundaries[0]` is always 0 and the session count is
/// `boundaries.len()`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionTruth {
    pub starts: BTreeMap<u64, Vec<usize>>,
}

impl SessionTruth {
    pub fn session_count(&self, user_id: u64) -> Option<usize> {
        self.starts.get(&user_id).map(|b| b.len())
    }
}
