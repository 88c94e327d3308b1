//! Federated learning engine for tabular crop classification.
//!
//! Centralized FL runs a FedAvg server against socket-connected clients;
//! decentralized FL runs serverless nodes over ring or mesh topologies.
//! Both share a from-scratch LSTM classifier, a byte-exact model-update
//! wire protocol, and per-phase timing instrumentation.
//!
//! Runnable walkthroughs live in `crates/core/examples/`.

pub mod aggregation;
pub mod cli;
pub mod data;
pub mod error;
pub mod learner;
pub mod orchestration;
pub mod tensor;
pub mod topology;
pub mod transport;

pub use error::{Error, Result};
pub use tensor::{ParameterSet, Tensor};
