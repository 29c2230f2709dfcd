//! Hierarchical multi-edge federated learning simulator.
//!
//! Clients train locally and report weights plus self-measured metrics to
//! their edge server. Each edge verifies the reports, scores and selects
//! clients, aggregates their updates under additively homomorphic
//! encryption with clipping and calibrated noise, and exchanges its model
//! with the other edges. The central server only ever receives edge models
//! and sample counts, and forms the global model as their sample-weighted
//! mean.

// `!(x > 0.0)` style checks are there to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod orchestrator;
pub mod params;
pub mod plot;
pub mod report;
pub mod rng;
pub mod secagg;
pub mod selection;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};
pub use params::ParamVector;
