//! Full waveform inversion for the scalar wave equation with an
//! indicator-scaled density.
//!
//! The crate provides an explicit finite-difference forward solver, two
//! gradient engines (continuous adjoint via the Fréchet kernel and an exact
//! discrete adjoint of the time loop), two material parameterisations
//! (piecewise-constant voxels and an upsampling convolutional generator),
//! and the optimisation drivers that combine them.

pub mod adjoint;
pub mod ansatz;
pub mod error;
pub mod fields;
pub mod forward;
pub mod gradcheck;
pub mod inversion;
pub mod io;
pub mod reverse;

pub use error::{FwiError, Result};
pub use fields::{clip_indicator, field_mse, Grid, MaterialModel, ScalarField, TimeAxis};
pub use forward::{run_forward, SensorArray, ShotRecord, SourceSpec, WavefieldHistory};
