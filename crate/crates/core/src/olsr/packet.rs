//! HELLO and TC control packets and their binary encoding.
//!
//! Layout (all integers big-endian):
//!
//! ```text
//! magic "LLCP" | version u8 = 1 | kind u8 | origin u32 | sequence u16 | ttl u8 |
//! count u16 | count × (address u32, code u8)
//! ```

use std::fmt;

use thiserror::Error;

use crate::codec::CONTROL_MAGIC;
use crate::message::NodeId;

const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 1 + 4 + 2 + 1 + 2;

/// 16-bit wrapping sequence number.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SeqNum(pub u16);

impl SeqNum {
    /// Standard serial-number comparison: `self` is newer than `other` when it
    /// is ahead by less than half the number space.
    pub fn is_newer_than(self, other: SeqNum) -> bool {
        let (a, b) = (self.0, other.0);
        (a > b && a - b <= 0x8000) || (a < b && b - a > 0x8000)
    }

    pub fn next(self) -> SeqNum {
        SeqNum(self.0.wrapping_add(1))
    }
}

impl fmt::Debug for SeqNum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ControlKind {
    Hello,
    Tc,
}

/// Link code attached to each entry of a neighbor list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NeighborCode {
    /// Heard, but the link is not confirmed in both directions.
    Asymmetric,
    Symmetric,
    /// Symmetric and selected as multipoint relay by the sender.
    Mpr,
}

impl NeighborCode {
    fn to_byte(self) -> u8 {
        match self {
            NeighborCode::Asymmetric => 1,
            NeighborCode::Symmetric => 2,
            NeighborCode::Mpr => 3,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(NeighborCode::Asymmetric),
            2 => Some(NeighborCode::Symmetric),
            3 => Some(NeighborCode::Mpr),
            _ => None,
        }
    }

    pub fn is_symmetric(self) -> bool {
        matches!(self, NeighborCode::Symmetric | NeighborCode::Mpr)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ControlPacket {
    pub kind: ControlKind,
    pub origin: NodeId,
    pub sequence: SeqNum,
    /// Sorted by node id, one entry per neighbor.
    pub neighbor_list: Vec<(NodeId, NeighborCode)>,
    /// Remaining hop budget. HELLOs are never forwarded.
    pub ttl: u8,
}

impl ControlPacket {
    /// The copy a relay retransmits: same content, one less hop of budget.
    pub fn forwarded(&self) -> ControlPacket {
        ControlPacket {
            ttl: self.ttl.saturating_sub(1),
            ..self.clone()
        }
    }

    pub fn lists(&self, node: NodeId) -> Option<NeighborCode> {
        self.neighbor_list
            .binary_search_by_key(&node, |(n, _)| *n)
            .ok()
            .map(|i| self.neighbor_list[i].1)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 5 * self.neighbor_list.len());
        out.extend_from_slice(&CONTROL_MAGIC);
        out.push(VERSION);
        out.push(match self.kind {
            ControlKind::Hello => 1,
            ControlKind::Tc => 2,
        });
        out.extend_from_slice(&self.origin.0.to_be_bytes());
        out.extend_from_slice(&self.sequence.0.to_be_bytes());
        out.push(self.ttl);
        out.extend_from_slice(&(self.neighbor_list.len() as u16).to_be_bytes());
        for (n, code) in &self.neighbor_list {
            out.extend_from_slice(&n.0.to_be_bytes());
            out.push(code.to_byte());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<ControlPacket, ControlDecodeError> {
        if bytes.len() < HEADER_LEN {
            return Err(ControlDecodeError::Truncated);
        }
        if bytes[..4] != CONTROL_MAGIC {
            return Err(ControlDecodeError::BadMagic);
        }
        if bytes[4] != VERSION {
            return Err(ControlDecodeError::Version(bytes[4]));
        }
        let kind = match bytes[5] {
            1 => ControlKind::Hello,
            2 => ControlKind::Tc,
            k => return Err(ControlDecodeError::Kind(k)),
        };
        let origin = NodeId(u32::from_be_bytes(bytes[6..10].try_into().unwrap()));
        let sequence = SeqNum(u16::from_be_bytes([bytes[10], bytes[11]]));
        let ttl = bytes[12];
        let count = u16::from_be_bytes([bytes[13], bytes[14]]) as usize;
        let body = &bytes[HEADER_LEN..];
        if body.len() != count * 5 {
            return Err(ControlDecodeError::Truncated);
        }
        let mut neighbor_list = Vec::with_capacity(count);
        for chunk in body.chunks_exact(5) {
            let n = NodeId(u32::from_be_bytes(chunk[..4].try_into().unwrap()));
            let code = NeighborCode::from_byte(chunk[4]).ok_or(ControlDecodeError::Code(chunk[4]))?;
            neighbor_list.push((n, code));
        }
        if !neighbor_list.windows(2).all(|w| w[0].0 < w[1].0) {
            return Err(ControlDecodeError::Unsorted);
        }
        Ok(ControlPacket {
            kind,
            origin,
            sequence,
            neighbor_list,
            ttl,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ControlDecodeError {
    #[error("truncated control packet")]
    Truncated,
    #[error("missing control magic")]
    BadMagic,
    #[error("unsupported control version {0}")]
    Version(u8),
    #[error("unknown control kind {0}")]
    Kind(u8),
    #[error("unknown neighbor code {0}")]
    Code(u8),
    #[error("neighbor list not sorted")]
    Unsorted,
}
