//! Leader-based log replication where commit is gated on signed Merkle roots.

pub mod message;
pub mod node;
pub mod sim;
pub mod status;

pub use message::{decode_frame, encode_frame, Envelope, LogEntry, PeerMessage, WIRE_VERSION};
pub use node::{HardState, Handled, Node, NodeOptions, Outbound, Role};
pub use sim::{FaultAction, FaultEvent, FaultScript, Sim, SimConfig, SimReport};
pub use status::{classify_local, node_status, LocalStatus, StatusView, TermHistory, TxStatus};
