//! Model-free Q-learning of LQ tracking controllers for references that are
//! known on a moving horizon.

pub mod baseline;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod io;
pub mod learner;
pub mod linalg;
pub mod oracle;
pub mod plant;
pub mod qstructure;
pub mod reference;

pub use error::{Error, Result};
