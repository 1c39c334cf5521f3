//! Synthetic tabular data with a recurrent generator and a
//! minibatch-discriminating critic.

pub mod error;
pub mod evaluation;
pub mod model;
pub mod neural;
pub mod sampling;
pub mod schema;
pub mod training;
pub mod transform;

pub use error::{Error, Result};
