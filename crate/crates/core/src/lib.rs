pub mod data;
pub mod dgp;
pub mod error;
pub mod expr;
pub mod inference;
pub mod loss;
pub mod net;
pub mod numerics;
pub mod oracle;
pub mod projector;
pub mod targets;

pub use error::{Error, ErrorClass, Result};
