//! The scanpath network: four stride-2 3×3 conv layers (32 filters each,
//! 42→21→11→6→3), a 256-unit LSTM over the 288-wide flattened features,
//! and three heads sharing that trunk: an 8-way heading policy, a state
//! value and a bounded step magnitude `nu_max * sigmoid(.)`.
//!
//! Forward and backward passes are written out by hand for this one
//! topology. Everything is generic over [`Real`] so the same code runs in
//! `f32` for training and `f64` for gradient checks.

pub mod checkpoint;
pub mod layout;
mod model;
mod ops;
mod rmsprop;

pub use layout::{param_count, Tensor, HIDDEN, N_DIRECTIONS, TENSORS};
pub use model::{backward, forward, forward_taped, softmax, Gradients, HeadGrad, LstmState, NetOutput, NetParams, StepRecord, Tape};
pub use ops::Real;
pub use rmsprop::{RmsProp, RmsPropConfig};

/// Heading in degrees of action index `k` (0 = north, 45 = north-east, ...).
pub fn direction_bearing(k: usize) -> crate::sphere::Bearing {
    crate::sphere::Bearing::new(45.0 * k as f64)
}

/// Nearest of the eight action headings; exact ties go to the smaller angle.
pub fn quantize_bearing(b: crate::sphere::Bearing) -> usize {
    let x = b.deg() / 45.0;
    let lower = x.floor();
    let k = if x - lower > 0.5 { lower + 1.0 } else { lower };
    (k as usize) % N_DIRECTIONS
}
