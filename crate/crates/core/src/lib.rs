pub mod active;
pub mod clock;
pub mod config;
pub mod dataset;
pub mod domain;
pub mod evaluation;
pub mod fixtures;
pub mod gateway;
pub mod geometry;
pub mod ids;
pub mod journal;
pub mod lock;
pub mod platform;
pub mod server;
