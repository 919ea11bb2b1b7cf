//! Token-scheduling load balancer for mixture-of-experts training.
//!
//! Each micro-batch, tokens destined for an expert may be served by any GPU
//! that holds a replica of it. [`scheduler`] solves for the replica loads
//! that minimize the busiest GPU, [`router`] turns those loads into token
//! ranges with locality-first routing, [`placement`] builds and scores
//! expert placements, [`adaptive`] decides when to regenerate a placement,
//! and [`simulator`] runs skewed workloads through the whole pipeline under
//! a simple cost model.

pub mod adaptive;
pub mod error;
pub mod model;
pub mod placement;
pub mod router;
pub mod scheduler;
pub mod simulator;

mod simplex;

pub use error::{Error, Result};
pub use model::{
    aggregate_expert_loads, balance_ratio, balance_ratio_of, ClusterShape, LoadMatrix, Placement, ReplicaLoadPlan,
    Topology,
};
