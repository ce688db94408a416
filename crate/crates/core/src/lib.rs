//! Mixed-type clustering of community water-access records.
//!
//! Records are compared with Gower distance, grouped with damped affinity
//! propagation (damping picked by a silhouette sweep), explained with CART
//! rules and mapped to priority levels.

pub mod affinity;
pub mod cart;
pub mod data;
pub mod error;
pub mod eval;
pub mod gower;
pub mod matrix;
pub mod pipeline;
pub mod priority;

pub use error::{Error, Result};
