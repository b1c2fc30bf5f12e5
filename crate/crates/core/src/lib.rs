//! Non-linear optional-time representations on finite trees.

pub mod american;
pub mod doc;
pub mod error;
pub mod expectation;
pub mod representation;
pub mod roots;
pub mod skorokhod;
pub mod stopping;
pub mod tree;

pub use error::{Error, Result};
pub use expectation::{validate_operator, Alpha, DriverForm, DriverSpec, Operator, OperatorSpec};
pub use tree::{NodeId, Process, StoppingRule, Terminal, Tree};
