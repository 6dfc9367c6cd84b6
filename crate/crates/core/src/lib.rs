//! Asymptotic and finite-sample power of independence tests on
//! contingency tables: Pearson's chi-square and two distance-covariance
//! statistics.
#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod delta;
pub mod dist;
pub mod error;
pub mod power;
pub mod rng;
pub mod sim;
pub mod special;
pub mod table;

pub use error::{Axis, Error, Result};
pub use power::{PowerReport, TestKind};
pub use sim::{Scenario, ScenarioKind};
pub use table::{AlternativeSpec, CountTable, JointTable};
