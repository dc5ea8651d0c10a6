//! Analytical Markov models and a Monte Carlo cross-check for non-orthogonal
//! HARQ (N-HARQ) and standard orthogonal HARQ at finite blocklength.

pub mod awgn;
pub mod config;
pub mod delay;
pub mod error;
pub mod fading;
pub mod fbl;
pub mod fsmc;
pub mod markov;
pub mod oharq;
pub mod optimizer;
pub mod par;
pub mod sim;

pub use config::{db_to_linear, linear_to_db, HarqConfig, Scheme};
pub use error::{Error, Result};
pub use fbl::{CodeParams, DispersionScale, SinrSegmentList};
pub use fsmc::{FadingModel, FadingSpec};
pub use markov::TransitionMatrix;
