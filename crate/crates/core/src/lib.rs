//! Agent-based interbank lending simulator with counterparty-risk
//! transparency, systemic-risk centralities and ensemble statistics.

pub mod centrality;
pub mod network;
pub mod params;
pub mod world;
pub mod engine;
pub mod metrics;
pub mod ensemble;
pub mod cli;
