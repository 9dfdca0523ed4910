//! Protocol library for the lifeline emergency ad hoc network.
//!
//! Victims' phones, battery-backed routers and rescuer stations form an OLSR
//! mesh. Emergency messages travel hop by hop through five priority queues
//! towards a station; routers may back messages up, boot into emergency mode
//! on their own, and answer position queries from phones.

pub mod backup;
pub mod boot;
pub mod codec;
pub mod forward;
pub mod frame;
pub mod graph;
pub mod locate;
pub mod message;
pub mod olsr;
pub mod power;

/// Simulation time in milliseconds.
pub type Millis = u64;

pub use codec::{classify_packet, decode_message, encode_message, DecodeError, PacketKind};
pub use graph::Topology;
pub use message::{EmergencyMessage, MessageId, NodeId, Payload, Percent, Priority};
