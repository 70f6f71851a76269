//! onsim — a deterministic discrete-event simulator of operator-governed
//! opportunistic networks (ONs): temporary, coordinated multi-hop
//! extensions of a wireless infrastructure, created and torn down by
//! cognitive management decisions.
//!
//! The crate models a single access point plus a population of terminals.
//! When infrastructure transmit power is stepped down (shrinking coverage)
//! or terminal channels degrade, the management layer detects the
//! situation from context snapshots, selects relays and a gateway, and
//! forms an ON that carries the affected application flows. Reports
//! quantify the transmission-power saving against the application QoS
//! (VoIP end-to-end delay, bulk delivery latency).
//!
//! Every run is reproducible: one master seed derives independent labeled
//! random streams, events dispatch in `(time, sequence)` order, and each
//! run emits a trace digest that is identical across replays.
//!
//! The narrative guide lives in `book/`; its code snippets compile and run
//! as doctests of this crate.

pub mod cms;
pub mod engine;
pub mod kernel;
pub mod lifecycle;
pub mod metrics;
pub mod mobility;
pub mod radio;
pub mod routing;
pub mod runner;
pub mod scenario;
pub mod traffic;

pub mod book;

/// Index of a node within a scenario (assignment order of the config's
/// node list).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "n{}", self.0)
    }
}

pub use kernel::{Kernel, SimTime};
pub use scenario::ScenarioConfig;
