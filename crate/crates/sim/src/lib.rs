//! Seeded discrete-event simulator for the lifeline emergency network.
//!
//! A [`Scenario`] describes nodes, links, traffic, policies and scripted
//! events. [`run`] plays it under a seed and returns [`RunMetrics`]; equal
//! scenario and seed give byte-identical exports.

pub mod engine;
pub mod experiments;
pub mod metrics;
pub mod scenario;
pub mod setups;
pub mod topo;

pub use engine::{run, Simulation};
pub use metrics::{export_metrics, Format, RunMetrics, StopReason, METRICS_SCHEMA};
pub use scenario::{MalformedScenario, Scenario};
pub use topo::export_topology;
