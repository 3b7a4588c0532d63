//! Low-rank spatial econometric models estimated by restricted likelihood.

pub mod bootstrap;
pub mod effects;
pub mod eigen;
pub mod error;
pub mod fixtures;
pub mod instrument;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod oracle;
pub mod output;
pub mod par;
pub mod reml;
pub mod sim;
pub mod table;
pub mod weights;

pub use error::{Error, Result};
