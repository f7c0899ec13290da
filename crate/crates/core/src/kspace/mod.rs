//! Linear k-space interpolation: GRAPPA and SPIRiT.

pub(crate) mod grappa;
mod spirit;

pub use grappa::{grappa_calibrate, grappa_reconstruct, lattice_offset, GrappaKernelSet};
pub use spirit::{spirit_calibrate, spirit_objective, spirit_reconstruct, SpiritKernel, SpiritReport, SPIRIT_DEFAULT_TIKHONOV};

pub use crate::linalg::Tikhonov;

/// Default readout half-extent of a calibration kernel.
pub const DEFAULT_BX: usize = 2;
/// Default phase-encode half-extent of a calibration kernel.
pub const DEFAULT_BY: usize = 1;
