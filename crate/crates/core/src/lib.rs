//! Population counts from mobile network event data.
//!
//! The pipeline has four layers, each reading and writing plain CSV files:
//!
//! * [`geolocation`]: per-device hidden Markov model on a tile grid, giving
//!   posterior and joint location probabilities;
//! * [`dedup`]: probability that a device belongs to an individual carrying two devices;
//! * [`aggregation`]: Monte-Carlo draws of detected individuals per region and of flows;
//! * [`inference`]: target-population distributions from detected counts,
//!   register population and penetration rates.
//!
//! [`simulator`] produces synthetic inputs and ground truth; [`cli`] runs the
//! layers with a content-addressed result cache.

pub mod aggregation;
pub mod cli;
pub mod datamodel;
pub mod dedup;
pub mod error;
pub mod geolocation;
pub mod inference;
pub mod io;
pub mod parallel;
pub mod seed;
pub mod simulator;

pub use error::{Error, Result};
