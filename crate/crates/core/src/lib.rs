//! IMC-aware spiking neural networks.
//!
//! Neurons integrate input currents through a membrane whose synaptic drive
//! saturates toward reversal potentials. The exact event-driven solution is
//! available for every layer, and a discretized alternative ([`dstd`]) trades
//! a controllable error for cost independent of the number of input spikes.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Loops over parallel arrays read better indexed.
#![allow(clippy::needless_range_loop)]

pub mod autodiff;
pub mod bench;
pub mod data;
pub mod dstd;
pub mod error;
pub mod hardware;
pub mod network;
pub mod neuron;
pub mod num;
pub mod training;

pub use error::{Error, Result};
