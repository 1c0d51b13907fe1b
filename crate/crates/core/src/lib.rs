//! Toolchain for hardware-constrained spiking neural networks: MNIST rate
//! coding, surrogate-gradient training, fixed-point quantization sweeps, a
//! bit-exact accelerator model with cycle accounting, and VHDL/.coe emission.

pub mod checkpoint;
pub mod dataset;
pub mod dse;
pub mod encoder;
pub mod error;
pub mod fixedpoint;
pub mod hdlgen;
pub mod network;
pub mod quantizer;
pub mod simulator;
pub mod trainer;

pub use error::{Error, Result};
