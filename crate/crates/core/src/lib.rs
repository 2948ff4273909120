//! Random-forest proximity graphs for node classification on tabular data.
//!
//! A forest is fitted on the training rows, its proximities are thresholded
//! into a graph over all rows, and a GCN classifies the test nodes.

pub mod forest;
pub mod gcn;
pub mod graph;
pub mod harness;
pub mod metrics;
pub mod proximity;
pub mod tabular;
