//! Investor search over a heterogeneous crowdfunding graph.

pub mod analytics;
pub mod graph;
pub mod numeric;
pub mod projection;
pub mod rgcn;
pub mod search;
pub mod snapshot;
pub mod ingest;
pub mod synth;
