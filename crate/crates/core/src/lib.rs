pub mod cayley;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod fed;
pub mod homgraph;
pub mod lp;
pub mod model;
pub mod periodic;
pub mod state;
pub mod target;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};
