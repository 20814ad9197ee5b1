//! Simulation and exact moments for the complex-temperature continuous
//! random energy model on Galton-Watson trees.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod branching;
pub mod ensemble;
pub mod error;
pub mod field;
pub mod oracles;
pub mod partition;
pub mod phases;
pub mod rng;
pub mod speedfn;
pub mod stats;

pub use branching::{OffspringDistribution, DEFAULT_POPULATION_CAP};
pub use error::{Error, Result};
pub use field::{
    EnvelopeMonitor, ExtremalSnapshot, GridSpec, LeafPair, LeafValue, ReplicaOutput, ReplicaPlan, SnapshotSpec,
};
pub use num_complex::Complex64;
pub use oracles::{DivergenceWarning, QuadratureSpec, SecondMoment};
pub use partition::{ComplexTemperature, ScaledComplex, PHASE_FACTOR};
pub use phases::{EnvelopeSpec, Phase, PhaseLabel};
pub use speedfn::{EndSlope, SpeedFunction};
pub use stats::Estimate;
