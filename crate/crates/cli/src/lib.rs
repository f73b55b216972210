//! Front end for the simulator: configuration files, scenario runs, parameter sweeps,
//! the route-search oracle and SVG charts.

pub mod commands;
pub mod config;
pub mod oracle;
pub mod plot;
pub mod sweep;

pub use config::{HarnessError, RegionSearch, SweepSpec};
