//! Simulation core for a benchtop magneto-acoustic microrobot platform:
//! coil waveform synthesis, coil calibration, robot dynamics, microscope
//! vision and closed-loop control.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coil_model;
pub mod control;
pub mod dynamics;
pub mod field_synth;
pub mod serial;
pub mod vision;
