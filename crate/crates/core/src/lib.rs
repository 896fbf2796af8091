//! Automatic step-level process supervision and Best-of-N reranking.
//!
//! The pipeline samples rollouts from reasoning prefixes ([`mc`]), searches a
//! per-problem state-action tree for the first failing step ([`annotator`]),
//! and writes soft- or hard-labelled training records ([`dataset`]). Scored
//! candidate paths are compared with the aggregators in [`bon`], using the
//! step-probability math and scorer backends in [`prm`].

pub mod annotator;
pub mod bon;
pub mod cli;
pub mod dataset;
pub mod http;
pub mod mc;
pub mod policy;
pub mod prm;
pub mod seed;
pub mod telemetry;
