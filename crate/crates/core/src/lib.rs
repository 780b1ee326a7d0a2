//! On-the-fly transcoding origin for adaptive segment streaming.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod backend;
pub mod client;
pub mod content;
pub mod metrics;
pub mod netem;
pub mod orchestrator;
pub mod runtime;
pub mod server;
pub mod transcode;
