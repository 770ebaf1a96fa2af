//! Wire protocol, simulated link, latest-wins replication and transports.

pub mod bridge;
pub mod codec;
pub mod latency;
pub mod link;
pub mod replica;
pub mod udp;

pub use codec::{decode, encode, CodecError, Message, MsgType, Payload};
pub use link::{LinkModel, LinkStats, SimLink};
pub use replica::{Applied, ReplicaStore};
