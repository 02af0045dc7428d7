//! Simulation and analysis of cooperative random-access uplinks.
//!
//! Nodes share one channel to an access point through simple saturated
//! CSMA. Under Direct-Link each node sends straight to the AP; under the
//! cooperative fairMACi protocol, a node that cannot reach the AP at the
//! target rate broadcasts and lets closer nodes relay for it (Two-Hop or
//! Decode-and-Forward), with every node spending the same energy.
//!
//! - [`topology`]: geometry, pathloss and link rates
//! - [`schemes`]: per-scheme rates, helper sets, feasibility
//! - [`analytic`]: slot probabilities and the min-throughput bound
//! - [`simulator`]: slotted discrete-event engine
//! - [`experiments`]: sweeps, gain records and CSV output

pub mod analytic;
pub mod error;
pub mod experiments;
pub mod schemes;
pub mod simulator;
pub mod topology;

pub use analytic::{renewal_time, slot_probabilities, throughput_bound, MacParams, SlotProbabilities};
pub use error::{Error, Result};
pub use experiments::{GainRecord, Regime, SweepSpec, SweepVariable};
pub use schemes::{FeasibilityReport, HelperSets, SchemeKind, Support, TargetRate};
pub use simulator::{ContentionMode, MetricsReport, SimConfig, Simulator, StopCondition};
pub use topology::{ChannelParams, NodeId, Point, RateTable, Topology};
