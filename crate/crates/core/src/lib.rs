pub mod clustering;
pub mod corpus;
pub mod error;
pub mod quality;
pub mod sampler;
pub mod scorer;
pub mod session;
pub mod simulate;
pub mod suggester;

pub use error::{Error, Result};
