//! Continuous-representation full-waveform inversion.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: velocity grids, acquisition geometry, wavelets, metrics and
//!   the binary grid/gather file formats.
//! * [`solver`]: second-order finite-difference acoustic propagation with
//!   convolutional PML boundaries.
//! * [`adjoint`]: L2 misfit, exact discrete adjoint gradients, TV
//!   regularisation and a finite-difference gradient oracle.
//! * [`repr`]: the six model parameterisations (direct grid, SIREN, Gabor,
//!   low-rank, hash grid, hybrid INR/grid) with parameter backpropagation and
//!   representation NTKs.
//! * [`invert`]: data degradation scenarios, zero-phase filters, Adam and
//!   the inversion loop.
//! * [`ntk`]: sensitivity Jacobians, wave kernels, wave-based NTKs and the
//!   spectral experiments built on them.
//! * [`presets`]: deterministic synthetic models and the standard
//!   acquisition setups.

pub mod adjoint;
pub mod error;
pub mod invert;
pub mod model;
pub mod ntk;
pub mod presets;
pub mod repr;
pub mod solver;

pub use error::{Error, Result};
pub use model::{
    AcquisitionGeometry, Boundary, Metrics, ShotGather, VelocityGrid, Wavelet,
};
pub use solver::{HistoryPolicy, SolverConfig, WavefieldHistory};
