//! Two-room tabletop robot telepresence simulator.
//!
//! A remote operator's robots, hands, body and virtual objects are replicated
//! over a lossy datagram link and turned into goals for local tabletop robots
//! (and the other way round). The crate covers the robot model, the world
//! simulation, coupling rules, tangible widgets, the wire protocol with its
//! simulated link, and a deterministic scenario runner with JSONL logs.

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batch;
pub mod coupling;
pub mod geometry;
pub mod net;
pub mod robot;
pub mod scenario;
pub mod sim;
pub mod widgets;
