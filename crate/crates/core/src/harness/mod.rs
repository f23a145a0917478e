pub mod bench;
pub mod config;
pub mod io;
pub mod learn;
pub mod pipeline;
pub mod rollout;
pub mod svg;
pub mod vehicle;
