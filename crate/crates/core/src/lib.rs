//! Resonance averaging, regime classification and stochastic simulation for
//! isochronous planar oscillators under decaying oscillatory and
//! multiplicative-noise perturbations.

// `!(x < y)` comparisons are kept on purpose so that NaN takes the failing branch.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod analysis;
pub mod averaging;
pub mod cartpoly;
pub mod envelope;
pub mod error;
pub mod numeric;
pub mod parse;
pub mod presets;
pub mod sde;
pub mod sysdef;
pub mod trigpoly;

pub use error::{Error, Result};
