//! Batch frontend for the iSLI lab: training, sweeps, density fitting,
//! identification and trace export, each writing a self-describing run
//! directory.

pub mod cli;
pub mod commands;
pub mod config;
pub mod run;
