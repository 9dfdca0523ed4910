//! Emergency messages and the node addressing scheme.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::Millis;

/// First address of the simulated address space (10.0.0.0).
pub const ADDRESS_SPACE_BASE: u32 = 0x0A00_0000;
/// Size of the simulated address space (a /16).
pub const ADDRESS_SPACE_SIZE: u32 = 1 << 16;
/// Number of addresses at the top of the space reserved for emergency stations.
pub const STATION_RANGE_SIZE: u32 = 256;

/// A node address, rendered as dotted-quad text.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    /// The `n`-th ordinary host address of the simulated space.
    ///
    /// Host numbers that would land in the station range wrap into it; use
    /// [`NodeId::station`] for stations and keep `n` below `0xFF00`.
    pub const fn host(n: u16) -> NodeId {
        NodeId(ADDRESS_SPACE_BASE + n as u32)
    }

    /// The `k`-th reserved station address.
    pub const fn station(k: u8) -> NodeId {
        NodeId(ADDRESS_SPACE_BASE + ADDRESS_SPACE_SIZE - STATION_RANGE_SIZE + k as u32)
    }

    pub fn is_station_reserved(self) -> bool {
        let first = ADDRESS_SPACE_BASE + ADDRESS_SPACE_SIZE - STATION_RANGE_SIZE;
        (first..ADDRESS_SPACE_BASE + ADDRESS_SPACE_SIZE).contains(&self.0)
    }

    pub fn octets(self) -> [u8; 4] {
        self.0.to_be_bytes()
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.octets();
        write!(f, "{a}.{b}.{c}.{d}")
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeId({self})")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid node address {0:?}")]
pub struct ParseNodeIdError(pub String);

impl FromStr for NodeId {
    type Err = ParseNodeIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<std::net::Ipv4Addr>()
            .map(|ip| NodeId(u32::from(ip)))
            .map_err(|_| ParseNodeIdError(s.to_string()))
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Message priority. 0 is the most urgent level, 4 the least.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Priority(u8);

impl Priority {
    pub const LEVELS: usize = 5;
    pub const HIGHEST: Priority = Priority(0);
    pub const LOWEST: Priority = Priority(4);

    pub const fn new(level: u8) -> Option<Priority> {
        if level <= 4 {
            Some(Priority(level))
        } else {
            None
        }
    }

    pub const fn level(self) -> u8 {
        self.0
    }

    pub const fn index(self) -> usize {
        self.0 as usize
    }

    /// One step less important, saturating at the lowest level.
    pub fn demoted(self) -> Priority {
        Priority((self.0 + 1).min(4))
    }

    /// One step more important, saturating at the highest level.
    pub fn promoted(self) -> Priority {
        Priority(self.0.saturating_sub(1))
    }

    pub fn all() -> impl Iterator<Item = Priority> {
        (0..=4).map(Priority)
    }
}

impl TryFrom<u8> for Priority {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Priority::new(v).ok_or_else(|| format!("priority {v} outside 0..=4"))
    }
}

impl From<Priority> for u8 {
    fn from(p: Priority) -> u8 {
        p.0
    }
}

impl fmt::Display for Priority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// An integer percentage in `0..=100`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Percent(u8);

impl Percent {
    pub const ZERO: Percent = Percent(0);
    pub const FULL: Percent = Percent(100);

    pub const fn new(v: u8) -> Option<Percent> {
        if v <= 100 {
            Some(Percent(v))
        } else {
            None
        }
    }

    /// Clamps a fraction in `[0, 1]` to the nearest whole percentage.
    pub fn from_fraction(f: f64) -> Percent {
        Percent((f.clamp(0.0, 1.0) * 100.0).round() as u8)
    }

    pub const fn value(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for Percent {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Percent::new(v).ok_or_else(|| format!("percentage {v} outside 0..=100"))
    }
}

impl From<Percent> for u8 {
    fn from(p: Percent) -> u8 {
        p.0
    }
}

/// Largest payload carried by a single emergency message.
pub const MAX_PAYLOAD_LEN: usize = 255;

/// Opaque message body of 1 to 255 bytes.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Payload(Vec<u8>);

impl Payload {
    pub fn new(bytes: Vec<u8>) -> Result<Payload, InvalidMessage> {
        if bytes.is_empty() || bytes.len() > MAX_PAYLOAD_LEN {
            return Err(InvalidMessage::PayloadLength(bytes.len()));
        }
        Ok(Payload(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Payload({} bytes)", self.0.len())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InvalidMessage {
    #[error("payload length {0} outside 1..=255")]
    PayloadLength(usize),
}

/// Unique message id: the source address in the high 32 bits, a per-node
/// counter in the low 32 bits.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct MessageId(pub u64);

impl MessageId {
    pub const fn compose(src: NodeId, counter: u32) -> MessageId {
        MessageId(((src.0 as u64) << 32) | counter as u64)
    }

    pub const fn source(self) -> NodeId {
        NodeId((self.0 >> 32) as u32)
    }

    pub const fn counter(self) -> u32 {
        self.0 as u32
    }
}

/// Per-node monotonic id allocator.
#[derive(Debug, Clone)]
pub struct MessageIdGen {
    node: NodeId,
    next: u32,
}

impl MessageIdGen {
    pub fn new(node: NodeId) -> Self {
        MessageIdGen { node, next: 0 }
    }

    pub fn next_id(&mut self) -> MessageId {
        let id = MessageId::compose(self.node, self.next);
        self.next = self.next.wrapping_add(1);
        id
    }
}

/// The unit of emergency traffic.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct EmergencyMessage {
    pub msg_id: MessageId,
    pub src: NodeId,
    pub dst: NodeId,
    pub priority: Priority,
    pub payload: Payload,
    /// Load of the originating device, attached at creation.
    pub sender_load: Percent,
    pub hop_count: u32,
    pub created_at: Millis,
}

impl EmergencyMessage {
    pub fn new(
        msg_id: MessageId,
        src: NodeId,
        dst: NodeId,
        priority: Priority,
        payload: Payload,
        sender_load: Percent,
        created_at: Millis,
    ) -> Self {
        EmergencyMessage {
            msg_id,
            src,
            dst,
            priority,
            payload,
            sender_load,
            hop_count: 0,
            created_at,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_id_renders_dotted_quad() {
        assert_eq!(NodeId::host(1).to_string(), "10.0.0.1");
        assert_eq!(NodeId::host(300).to_string(), "10.0.1.44");
        assert_eq!("10.0.0.1".parse::<NodeId>().unwrap(), NodeId::host(1));
        assert!("10.0.0".parse::<NodeId>().is_err());
    }

    #[test]
    fn station_range_is_top_256() {
        assert_eq!(NodeId::station(0).to_string(), "10.0.255.0");
        assert_eq!(NodeId::station(255).to_string(), "10.0.255.255");
        assert!(NodeId::station(0).is_station_reserved());
        assert!(NodeId::station(255).is_station_reserved());
        assert!(!NodeId::host(0xFEFF).is_station_reserved());
        assert!(!NodeId(ADDRESS_SPACE_BASE + ADDRESS_SPACE_SIZE).is_station_reserved());
    }

    #[test]
    fn priority_saturates() {
        assert_eq!(Priority::new(0).unwrap().demoted().level(), 1);
        assert_eq!(Priority::LOWEST.demoted(), Priority::LOWEST);
        assert_eq!(Priority::HIGHEST.promoted(), Priority::HIGHEST);
        assert!(Priority::new(5).is_none());
    }

    #[test]
    fn payload_bounds() {
        assert!(Payload::new(vec![]).is_err());
        assert!(Payload::new(vec![0; 255]).is_ok());
        assert_eq!(Payload::new(vec![0; 256]), Err(InvalidMessage::PayloadLength(256)));
    }

    #[test]
    fn message_ids_pack_source_and_counter() {
        let mut ids = MessageIdGen::new(NodeId::host(7));
        let a = ids.next_id();
        let b = ids.next_id();
        assert_ne!(a, b);
        assert_eq!(a.source(), NodeId::host(7));
        assert_eq!(b.counter(), 1);
    }
}
