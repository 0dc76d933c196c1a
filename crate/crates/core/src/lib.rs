pub mod cli;
pub mod control;
pub mod dataset;
pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod metrics;
pub mod policy;
pub mod render;
pub mod runner;
pub mod server;
pub mod sim;
pub mod tokenizer;
pub mod tools;
pub mod world;
