//! Command line and HTTP front ends for motionalign.

pub mod api;
pub mod cli;
pub mod server;
