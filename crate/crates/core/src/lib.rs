//! Trace-driven discrete-event datacenter simulator with operational and
//! embodied carbon accounting.

pub mod analytic;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod policy;
pub mod power;
pub mod sim;
pub mod time;

pub use time::SimTime;
