//! Backup policy and the durable per-node message log.
//!
//! Six options decide whether an accepted message is written to permanent
//! storage. When several trigger, the one with the best option priority
//! wins (ties by option number). The store is an append-only log of
//! checksummed records that can be replayed after a restart.

use std::collections::HashSet;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{decode_message, encode_message};
use crate::forward::{EnqueueOutcome, ForwardEngine};
use crate::message::{EmergencyMessage, MessageId, Percent};

/// Default log capacity: 64 MiB.
pub const DEFAULT_STORE_CAPACITY: usize = 64 * 1024 * 1024;

const DELIVERED_TAG: &[u8; 4] = b"DLVR";
const RECORD_OVERHEAD: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackupError {
    #[error("option {0} does not exist")]
    UnknownOption(u8),
    #[error("threshold {threshold:?} out of range for option {option}")]
    InvalidThreshold { option: u8, threshold: Option<u8> },
    #[error("backup store full")]
    StorageFull,
    #[error("corrupt record at byte {0}")]
    Corrupt(usize),
}

/// One enabled backup option. Construct with [`BackupOption::new`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawOption", into = "RawOption")]
pub struct BackupOption {
    number: u8,
    threshold: Option<u8>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOption {
    option: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold: Option<u8>,
}

impl TryFrom<RawOption> for BackupOption {
    type Error = BackupError;
    fn try_from(r: RawOption) -> Result<Self, BackupError> {
        BackupOption::new(r.option, r.threshold)
    }
}

impl From<BackupOption> for RawOption {
    fn from(o: BackupOption) -> Self {
        RawOption {
            option: o.number,
            threshold: o.threshold,
        }
    }
}

impl BackupOption {
    /// Options 1 and 2 take no threshold. Option 3 (battery below t%) needs
    /// 0 < t ≤ 100, option 4 (priority at least as urgent as t) 0 ≤ t ≤ 4,
    /// options 5 and 6 (own / sender load above t%) 0 < t < 100.
    pub fn new(number: u8, threshold: Option<u8>) -> Result<BackupOption, BackupError> {
        let ok = match (number, threshold) {
            (1 | 2, None) => true,
            (3, Some(t)) => (1..=100).contains(&t),
            (4, Some(t)) => t <= 4,
            (5 | 6, Some(t)) => (1..100).contains(&t),
            (1..=6, _) => false,
            _ => return Err(BackupError::UnknownOption(number)),
        };
        if ok {
            Ok(BackupOption { number, threshold })
        } else {
            Err(BackupError::InvalidThreshold {
                option: number,
                threshold,
            })
        }
    }

    pub fn number(self) -> u8 {
        self.number
    }

    pub fn threshold(self) -> Option<u8> {
        self.threshold
    }

    /// 1 for options 1–2, 2 for 3–4, 3 for 5–6. Lower wins.
    pub fn option_priority(self) -> u8 {
        self.number.div_ceil(2)
    }

    fn triggers(self, msg: &EmergencyMessage, cond: &NodeCondition) -> bool {
        let t = self.threshold.unwrap_or(0);
        match self.number {
            1 | 2 => true,
            3 => cond.battery_percent.value() < t,
            4 => msg.priority.level() <= t,
            5 => cond.load_percent.value() > t,
            6 => msg.sender_load.value() > t,
            _ => unreachable!("validated on construction"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCondition {
    pub battery_percent: Percent,
    pub load_percent: Percent,
    pub station_reachable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BackupAction {
    BackupOnReceive,
    BackupAfterForward,
    NoBackup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackupDecision {
    pub action: BackupAction,
    pub winning_option: Option<u8>,
}

impl BackupDecision {
    pub const NONE: BackupDecision = BackupDecision {
        action: BackupAction::NoBackup,
        winning_option: None,
    };
}

pub fn evaluate_policy(enabled: &[BackupOption], msg: &EmergencyMessage, cond: &NodeCondition) -> BackupDecision {
    let winner = enabled
        .iter()
        .filter(|o| o.triggers(msg, cond))
        .min_by_key(|o| (o.option_priority(), o.number));
    match winner {
        None => BackupDecision::NONE,
        Some(o) => BackupDecision {
            action: if o.number == 2 {
                BackupAction::BackupAfterForward
            } else {
                BackupAction::BackupOnReceive
            },
            winning_option: Some(o.number),
        },
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RestoreReport {
    pub restored: usize,
    pub skipped_delivered: usize,
    pub skipped_held: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReplayReport {
    pub records: usize,
    /// Bytes at the end that did not form a complete record and were cut.
    pub truncated_bytes: usize,
}

/// Append-only message log. Records are `len u32 BE | body | crc32 u32 BE`
/// where the body is an encoded message, or `DLVR` plus a big-endian id to
/// mark a persisted message as delivered.
#[derive(Debug, Clone)]
pub struct BackupStore {
    log: Vec<u8>,
    capacity: usize,
    order: Vec<MessageId>,
    messages: Vec<EmergencyMessage>,
    ids: HashSet<MessageId>,
    delivered: HashSet<MessageId>,
    failures: u64,
}

impl Default for BackupStore {
    fn default() -> Self {
        BackupStore::new(DEFAULT_STORE_CAPACITY)
    }
}

impl BackupStore {
    pub fn new(capacity: usize) -> Self {
        BackupStore {
            log: Vec::new(),
            capacity,
            order: Vec::new(),
            messages: Vec::new(),
            ids: HashSet::new(),
            delivered: HashSet::new(),
            failures: 0,
        }
    }

    /// Number of distinct persisted messages.
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn bytes_used(&self) -> usize {
        self.log.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Persist attempts refused with [`BackupError::StorageFull`].
    pub fn failures(&self) -> u64 {
        self.failures
    }

    pub fn contains(&self, id: MessageId) -> bool {
        self.ids.contains(&id)
    }

    pub fn is_delivered(&self, id: MessageId) -> bool {
        self.delivered.contains(&id)
    }

    /// Persisted messages in log order.
    pub fn messages(&self) -> &[EmergencyMessage] {
        &self.messages
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.log
    }

    fn append(&mut self, body: &[u8]) -> Result<(), BackupError> {
        if self.log.len() + body.len() + RECORD_OVERHEAD > self.capacity {
            self.failures += 1;
            return Err(BackupError::StorageFull);
        }
        self.log.extend_from_slice(&(body.len() as u32).to_be_bytes());
        self.log.extend_from_slice(body);
        self.log.extend_from_slice(&crc32fast::hash(body).to_be_bytes());
        Ok(())
    }

    /// Appends `msg` unless its id is already stored. Returns whether a
    /// record was written.
    pub fn persist(&mut self, msg: &EmergencyMessage) -> Result<bool, BackupError> {
        if self.ids.contains(&msg.msg_id) {
            return Ok(false);
        }
        self.append(&encode_message(msg))?;
        self.insert(msg.clone());
        Ok(true)
    }

    fn insert(&mut self, msg: EmergencyMessage) {
        self.ids.insert(msg.msg_id);
        self.order.push(msg.msg_id);
        self.messages.push(msg);
    }

    /// Records that a persisted message reached its next hop for good, so a
    /// later restore skips it. Unknown or already-marked ids are ignored.
    pub fn mark_delivered(&mut self, id: MessageId) -> Result<(), BackupError> {
        if !self.ids.contains(&id) || self.delivered.contains(&id) {
            return Ok(());
        }
        let mut body = DELIVERED_TAG.to_vec();
        body.extend_from_slice(&id.0.to_be_bytes());
        self.append(&body)?;
        self.delivered.insert(id);
        Ok(())
    }

    /// Re-enqueues persisted, undelivered messages in log order. Messages
    /// marked delivered, reported delivered by `delivered_elsewhere`, or
    /// already held by the engine are skipped.
    pub fn restore_into(
        &self,
        engine: &mut ForwardEngine,
        delivered_elsewhere: impl Fn(MessageId) -> bool,
    ) -> RestoreReport {
        let mut report = RestoreReport::default();
        for msg in &self.messages {
            if self.delivered.contains(&msg.msg_id) || delivered_elsewhere(msg.msg_id) {
                report.skipped_delivered += 1;
            } else if engine.bank().contains(msg.msg_id) {
                report.skipped_held += 1;
            } else {
                match engine.accept(msg.clone()) {
                    EnqueueOutcome::Queued { .. } => report.restored += 1,
                    EnqueueOutcome::Dropped(_) => report.dropped += 1,
                }
            }
        }
        report
    }

    /// Rebuilds a store from log bytes. A trailing partial record (a write
    /// cut short by a crash) is discarded; a complete record with a bad
    /// checksum or body is an error.
    pub fn replay(bytes: &[u8], capacity: usize) -> Result<(BackupStore, ReplayReport), BackupError> {
        let mut store = BackupStore::new(capacity);
        let mut report = ReplayReport::default();
        let mut pos = 0;
        while pos < bytes.len() {
            let rest = &bytes[pos..];
            if rest.len() < 4 {
                break;
            }
            let len = u32::from_be_bytes(rest[..4].try_into().unwrap()) as usize;
            if rest.len() < 4 + len + 4 {
                break;
            }
            let body = &rest[4..4 + len];
            let crc = u32::from_be_bytes(rest[4 + len..8 + len].try_into().unwrap());
            if crc32fast::hash(body) != crc {
                return Err(BackupError::Corrupt(pos));
            }
            if body.len() == 12 && body.starts_with(DELIVERED_TAG) {
                let id = MessageId(u64::from_be_bytes(body[4..].try_into().unwrap()));
                store.delivered.insert(id);
            } else {
                let msg = decode_message(body).map_err(|_| BackupError::Corrupt(pos))?;
                if !store.ids.contains(&msg.msg_id) {
                    store.insert(msg);
                }
            }
            report.records += 1;
            pos += len + RECORD_OVERHEAD;
        }
        report.truncated_bytes = bytes.len() - pos;
        store.log = bytes[..pos].to_vec();
        Ok((store, report))
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, &self.log)
    }

    pub fn load(path: &Path, capacity: usize) -> io::Result<(BackupStore, ReplayReport)> {
        let bytes = std::fs::read(path)?;
        BackupStore::replay(&bytes, capacity).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}
