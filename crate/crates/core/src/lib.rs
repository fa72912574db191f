//! Shared control of a planar lander through a Koopman model learned from
//! pilot demonstrations.
//!
//! The pipeline: record pilot trials ([`trial`]), fit a Koopman operator over
//! the joint state + input ([`koopman`]), extract an affine model and solve an
//! LQR on it ([`controller`]), then filter the pilot's inputs against the
//! optimal input one dimension at a time. [`experiment`] runs the full
//! four-paradigm protocol with synthetic [`pilots`], and [`metrics`] /
//! [`stats`] summarize the results.

pub mod controller;
pub mod error;
pub mod experiment;
pub mod koopman;
pub mod lander;
pub mod metrics;
pub mod pilots;
pub mod seed;
pub mod stats;
pub mod trial;

pub use error::{Error, Result};
