//! File formats, experiment workflow, command line and HTTP service for the
//! bike-share trip-generation toolkit.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod io;
pub mod server;
pub mod store;
pub mod workflow;
