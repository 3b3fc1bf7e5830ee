//! Deterministic discrete-event simulator for AODV route discovery on mobile
//! ad-hoc networks, with pluggable RREQ flood-suppression strategies.
//!
//! The crate is organised the way a run flows:
//!
//! * [`protocol`] holds packet and routing-table value types.
//! * [`suppression`] decides which neighbors receive a relayed RREQ, including
//!   the connectivity-index learner and the classic comparison schemes.
//! * [`node`] is the per-node AODV state machine. It never touches the clock or
//!   the network directly; it returns [`node::Emission`]s.
//! * [`engine`] owns the event queue, the link model and mobility, and feeds
//!   events into nodes.
//! * [`metrics`] counts overhead and builds comparison tables.
//! * [`scenario`] is the JSON scenario schema plus the built-in scenarios.

pub mod engine;
pub mod error;
pub mod metrics;
pub mod node;
pub mod protocol;
pub mod scenario;
pub mod suppression;

pub use engine::{run, Engine, RunOutput, Topology};
pub use error::{Error, Result};
pub use metrics::{ComparisonTable, MetricsReport, MetricsRow};
pub use node::{Emission, Node, NodeConfig};
pub use protocol::{NodeId, Packet, PacketKind, RreqId, SeqNum, Tick};
pub use scenario::Scenario;
pub use suppression::{ConnectivityConfig, ConnectivityRecord, MuMode, Strategy};
