//! File I/O, configuration, report rendering and the end-to-end pipeline
//! around `lumenfit-core`.

pub mod config;
pub mod io;
pub mod pipeline;
pub mod report;
