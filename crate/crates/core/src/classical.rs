//! Classical edge tooling used to build object-level pseudo-labels.

mod canny;
mod l0;

pub use canny::{canny, canny_with, sobel, CannyParams};
pub use l0::{l0_energy, l0_smooth, l0_smooth_with, nonzero_gradient_count, L0Params, L0Round, COUNT_TOL};
