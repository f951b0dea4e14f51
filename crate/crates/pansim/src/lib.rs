//! File formats, experiments and the command-line front end for `pansim-core`.

pub mod calibrate;
pub mod cli;
pub mod experiments;
pub mod gaps;
pub mod report;
pub mod scenario_file;
pub mod trace_csv;
pub mod units;
