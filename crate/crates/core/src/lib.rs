pub mod anomaly;
pub mod diff;
pub mod embfile;
pub mod gnn;
pub mod graphio;
pub mod manifold;
pub mod metrics;
pub mod optim;
pub mod shallow;
pub mod suites;
pub mod tensor;
