pub mod bundle;
pub mod config;
pub mod export;
pub mod pipeline;
