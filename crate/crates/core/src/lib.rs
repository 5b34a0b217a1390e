//! Factor-augmented regression with principal-component factors under weak
//! factor structures: simulation, estimation, bias correction and Monte
//! Carlo evaluation.

pub mod bias;
pub mod covariance;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod factors;
pub mod io;
pub mod linalg;
pub mod manifest;
pub mod mc;
pub mod pipeline;
pub mod regression;
pub mod rotations;

pub use error::{Error, Result};
