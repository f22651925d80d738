//! Attenuated k-space diffusion for multi-coil MRI k-space interpolation.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod coils;
pub mod config;
pub mod container;
pub mod error;
pub mod forward;
pub mod mask;
pub mod metrics;
pub mod noise;
pub mod phantom;
pub mod sampler;
pub mod schedule;
pub mod score;
pub mod slr;
pub mod tensor;

pub use coils::CoilSensitivities;
pub use error::{Error, Result};
pub use mask::{AcsRegion, MaskKind, SamplingMask};
pub use noise::NoiseMode;
pub use schedule::{DiffusionSchedule, ScheduleParams};
pub use tensor::{fft2, ifft2, Dims, Image, KSpace};
