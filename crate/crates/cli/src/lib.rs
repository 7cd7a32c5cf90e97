//! Command-line front end for `wfa-extract`: standalone stages plus a
//! configured end-to-end pipeline.

pub mod artifact;
pub mod config;
pub mod pipeline;
pub mod stages;
