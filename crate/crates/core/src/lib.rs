//! Discrete-event simulation of a single-cell cellular network with
//! device-to-device delivery and layered video caching.
//!
//! The crate is organized bottom-up: [`catalog`] describes what can be
//! requested, [`topology`] where the devices are, [`channel`] how fast they
//! can talk, [`energy`] what a delivery costs, [`policies`] what the caches
//! keep, and [`engine`] plays it all forward in time. [`experiment`] runs
//! sweeps and benchmarks on top of the engine.

pub mod catalog;
pub mod channel;
pub mod energy;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod policies;
pub mod topology;

pub use catalog::{build_catalog, Catalog, CatalogConfig, ContentUnit, Layer, Session, UnitId};
pub use channel::{ChannelParams, ChannelPool, ProspectiveRates};
pub use energy::{EnergyLedger, EnergyModel, Outcome, PowerProfile, ServiceMode};
pub use error::{Error, Result};
pub use policies::{CacheState, Candidate, EvictionDecision, Policy, PolicyKind};
pub use topology::{sample_topology, CellConfig, Topology};
pub use engine::{run, Metrics, SimConfig, Simulation};
