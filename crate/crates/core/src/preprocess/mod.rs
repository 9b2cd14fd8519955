//! Temporal and spatial conditioning of raw 4-D series.
//!
//! The pipeline order is slice timing, then motion correction, then
//! smoothing; drift removal normally happens inside the GLM through cosine
//! regressors, with [`highpass_filter`] available as a standalone step.

mod highpass;
mod motion;
mod simplex;
mod slice_timing;
mod smooth;

pub use highpass::highpass_filter;
pub use motion::{
    apply_motion, estimate_motion, estimate_motion_against, resample_frame, temporal_mean, RigidMotion,
};
pub use simplex::{nelder_mead, SimplexOptions, SimplexResult};
pub use slice_timing::{slice_timing_correct, SliceOrder};
pub use smooth::{fwhm_to_sigma_vox, gaussian_kernel, gaussian_smooth};
