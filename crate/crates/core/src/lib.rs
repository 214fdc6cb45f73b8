//! Simulator and library for distributed asynchronous training on non-IID data
//! with white-list gradient scheduling.

pub mod config;
pub mod data;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod runner;
pub mod scheduler;
pub mod sim;
