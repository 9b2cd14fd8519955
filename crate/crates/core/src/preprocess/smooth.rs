use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume_io::{Dims3, Volume4D};

/// `FWHM = 2·sqrt(2·ln 2)·σ`, converted to voxels along one axis.
pub fn fwhm_to_sigma_vox(fwhm_mm: f64, voxel_mm: f64) -> f64 {
    fwhm_mm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt()) / voxel_mm
}

/// Unit-sum Gaussian taps from `-r..=r` with `r = ceil(4σ)`.
pub fn gaussian_kernel(sigma_vox: f64) -> Vec<f64> {
    let radius = (4.0 * sigma_vox).ceil() as usize;
    let mut k: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma_vox * sigma_vox)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable 3-axis Gaussian smoothing of every frame. Near the borders the
/// kernel is renormalized over the taps that fall inside the volume.
pub fn gaussian_smooth(vol: &Volume4D, fwhm_mm: f64) -> Result<Volume4D> {
    if !(fwhm_mm.is_finite() && fwhm_mm > 0.0) {
        return Err(Error::Domain(format!("FWHM must be positive, got {fwhm_mm}")));
    }
    let dims = vol.spatial();
    let vs = vol.voxel_size();
    let kernels: Vec<Vec<f64>> = (0..3)
        .map(|a| gaussian_kernel(fwhm_to_sigma_vox(fwhm_mm, vs[a])))
        .collect();
    let nv = dims.len();
    let mut out = vol.data().to_vec();
    out.par_chunks_mut(nv).for_each(|frame| {
        let mut scratch = vec![0.0; nv];
        for (axis, k) in kernels.iter().enumerate() {
            if k.len() > 1 {
                convolve_axis(frame, &mut scratch, dims, axis, k);
                frame.copy_from_slice(&scratch);
            }
        }
    });
    vol.with_data(out)
}

fn convolve_axis(src: &[f64], dst: &mut [f64], dims: Dims3, axis: usize, k: &[f64]) {
    let n = dims.0[axis];
    let stride = match axis {
        0 => 1,
        1 => dims.nx(),
        _ => dims.nx() * dims.ny(),
    };
    let r = (k.len() / 2) as isize;
    for start in 0..dims.len() {
        let pos = (start / stride) % n;
        let lo = (-r).max(-(pos as isize));
        let hi = r.min((n - 1 - pos) as isize);
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for o in lo..=hi {
            let w = k[(o + r) as usize];
            acc += w * src[(start as isize + o * stride as isize) as usize];
            wsum += w;
        }
        dst[start] = acc / wsum;
    }
}
