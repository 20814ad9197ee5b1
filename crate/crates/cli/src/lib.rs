//! Experiment driver for the complex-temperature CREM simulator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod output;
