//! HTTP service and command-line front end for the eq20 engine.

pub mod api;
pub mod cli;
