//! Verification and simulation toolkit for audit mechanisms in strategic
//! classification. Given a common prior over agent types, a score function,
//! an allocation rule, an audit budget and a fine, the crate computes the
//! minimum incentive-to-lie epsilon under uniform audit policies by exact
//! closed forms, by Monte Carlo estimation, and by brute-force enumeration.

pub mod allocation;
pub mod audit;
pub mod error;
pub mod geometry;
pub mod instance;
pub mod numeric;
pub mod oracle;
pub mod scoring;
pub mod types;
pub mod verification;

pub use error::{AuditError, Result};
pub use instance::InstanceSpec;
