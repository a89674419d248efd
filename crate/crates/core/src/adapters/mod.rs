//! Concrete problem families.

pub mod concentration;
pub mod grid;
pub mod interdiction;
pub mod queueing;

pub use concentration::{ConcentrationInstance, ConcentrationModel, GeneratorConfig};
pub use grid::{GridInstance, GridModel, GridRisk};
pub use interdiction::{InterdictionInstance, InterdictionModel};
pub use queueing::{QueueingInstance, QueueingModel};
