//! Reconstruction of reply/retweet/quote cascades from tweet-event logs and
//! fitting of SIS, SEIZ and channel-resolved CD-SEIZ diffusion models to
//! their hourly activity curves.

pub mod cascade;
pub mod cli;
pub mod error;
pub mod fitting;
pub mod integrator;
pub mod metrics;
pub mod models;
pub mod synth;

pub use error::{Error, Result};
