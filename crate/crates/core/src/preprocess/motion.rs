//! Rigid-body (6-DOF) motion estimation and correction.
//!
//! A [`RigidMotion`] maps reference-space positions to where that anatomy sits
//! in a given volume: `y = R·(x − c) + c + d` in millimetres, with `c` the
//! volume centre and `R = Rz·Ry·Rx`. Correcting a volume samples it at `y`
//! for every reference voxel `x`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::simplex::{nelder_mead, SimplexOptions};
use crate::error::{Error, Result};
use crate::volume_io::{Dims3, Volume4D};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidMotion {
    pub translation_mm: [f64; 3],
    pub rotation_rad: [f64; 3],
}

impl RigidMotion {
    pub fn identity() -> Self {
        RigidMotion::default()
    }

    pub fn is_identity(&self) -> bool {
        self.translation_mm == [0.0; 3] && self.rotation_rad == [0.0; 3]
    }

    pub fn is_finite(&self) -> bool {
        self.translation_mm
            .iter()
            .chain(&self.rotation_rad)
            .all(|v| v.is_finite())
    }

    /// Row-major `Rz·Ry·Rx`.
    pub fn rotation_matrix(&self) -> [[f64; 3]; 3] {
        let [ax, ay, az] = self.rotation_rad;
        let (sx, cx) = ax.sin_cos();
        let (sy, cy) = ay.sin_cos();
        let (sz, cz) = az.sin_cos();
        [
            [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
            [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
            [-sy, cy * sx, cy * cx],
        ]
    }
}

#[inline]
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

#[inline]
fn trilinear(frame: &[f64], dims: Dims3, p: [f64; 3]) -> f64 {
    let mut base = [0usize; 3];
    let mut frac = [0f64; 3];
    for a in 0..3 {
        let n = dims.0[a];
        let v = p[a];
        if v < 0.0 || v > (n - 1) as f64 {
            return 0.0;
        }
        let mut i = v.floor() as usize;
        if i + 1 >= n {
            i = n.saturating_sub(2);
        }
        base[a] = i;
        frac[a] = if n == 1 { 0.0 } else { v - i as f64 };
    }
    let step = [
        usize::from(dims.0[0] > 1),
        if dims.0[1] > 1 { dims.nx() } else { 0 },
        if dims.0[2] > 1 { dims.nx() * dims.ny() } else { 0 },
    ];
    let i000 = dims.index(base[0], base[1], base[2]);
    let [fx, fy, fz] = frac;
    let c = |o: usize| frame[i000 + o];
    let c00 = c(0) * (1.0 - fx) + c(step[0]) * fx;
    let c10 = c(step[1]) * (1.0 - fx) + c(step[1] + step[0]) * fx;
    let c01 = c(step[2]) * (1.0 - fx) + c(step[2] + step[0]) * fx;
    let c11 = c(step[2] + step[1]) * (1.0 - fx) + c(step[2] + step[1] + step[0]) * fx;
    let c0 = c00 * (1.0 - fy) + c10 * fy;
    let c1 = c01 * (1.0 - fy) + c11 * fy;
    c0 * (1.0 - fz) + c1 * fz
}

/// Calls `f(i, value)` for every reference voxel `i` (scan order) with
/// `frame` sampled trilinearly at its `motion`-mapped position, zero outside
/// the field of view.
#[inline]
fn for_each_resampled(
    frame: &[f64],
    dims: Dims3,
    voxel_mm: [f64; 3],
    motion: &RigidMotion,
    mut f: impl FnMut(usize, f64),
) {
    let r = motion.rotation_matrix();
    let centre: [f64; 3] = std::array::from_fn(|a| (dims.0[a] - 1) as f64 * 0.5 * voxel_mm[a]);
    let d = motion.translation_mm;
    let [nx, ny, nz] = dims.0;
    let mut i = 0;
    for z in 0..nz {
        let rz = z as f64 * voxel_mm[2] - centre[2];
        for y in 0..ny {
            let ry = y as f64 * voxel_mm[1] - centre[1];
            // y/z part of R·rel + c + d, fixed along the row
            let row: [f64; 3] = std::array::from_fn(|a| r[a][1] * ry + r[a][2] * rz + centre[a] + d[a]);
            for x in 0..nx {
                let rx = x as f64 * voxel_mm[0] - centre[0];
                let p: [f64; 3] = std::array::from_fn(|a| snap((r[a][0] * rx + row[a]) / voxel_mm[a]));
                f(i, trilinear(frame, dims, p));
                i += 1;
            }
        }
    }
}

/// Sample `frame` at `motion`-mapped positions of every reference voxel,
/// trilinearly, with zeros outside the field of view.
pub fn resample_frame(frame: &[f64], dims: Dims3, voxel_mm: [f64; 3], motion: &RigidMotion) -> Vec<f64> {
    if motion.is_identity() {
        return frame.to_vec();
    }
    let mut out = vec![0.0; dims.len()];
    for_each_resampled(frame, dims, voxel_mm, motion, |i, v| out[i] = v);
    out
}

fn resampled_mse(moving: &[f64], reference: &[f64], dims: Dims3, voxel_mm: [f64; 3], motion: &RigidMotion) -> f64 {
    let mut acc = 0.0;
    if motion.is_identity() {
        acc = moving.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    } else {
        for_each_resampled(moving, dims, voxel_mm, motion, |i, v| {
            let e = v - reference[i];
            acc += e * e;
        });
    }
    acc / reference.len() as f64
}

// Optimizer works in voxel units for translation and degrees for rotation so
// that a unit simplex step is comparable across parameters.
fn to_params(x: &[f64], voxel_mm: [f64; 3]) -> RigidMotion {
    RigidMotion {
        translation_mm: [x[0] * voxel_mm[0], x[1] * voxel_mm[1], x[2] * voxel_mm[2]],
        rotation_rad: [x[3].to_radians(), x[4].to_radians(), x[5].to_radians()],
    }
}

fn register(moving: &[f64], reference: &[f64], dims: Dims3, voxel_mm: [f64; 3]) -> Result<RigidMotion> {
    let cost = |x: &[f64]| {
        resampled_mse(moving, reference, dims, voxel_mm, &to_params(x, voxel_mm))
    };
    let mut x = vec![0.0; 6];
    let mut best = f64::INFINITY;
    // restarts from the incumbent with shrinking simplices
    for step in [1.0, 0.25, 0.05] {
        let opts = SimplexOptions {
            step,
            ..SimplexOptions::default()
        };
        let r = nelder_mead(cost, &x, &opts)?;
        if r.f < best {
            best = r.f;
            x = r.x;
        }
    }
    let m = to_params(&x, voxel_mm);
    if !m.is_finite() {
        return Err(Error::Numeric("motion estimate is not finite".into()));
    }
    Ok(m)
}

/// Register every volume to volume `reference_index`.
pub fn estimate_motion(vol: &Volume4D, reference_index: usize) -> Result<Vec<RigidMotion>> {
    if reference_index >= vol.nt() {
        return Err(Error::OutOfRange(format!(
            "reference volume {reference_index} of {}",
            vol.nt()
        )));
    }
    let reference = vol.frame(reference_index).to_vec();
    let mut out = estimate_motion_against(vol, &reference)?;
    out[reference_index] = RigidMotion::identity();
    Ok(out)
}

/// Register every volume to an arbitrary reference frame (e.g. the temporal mean).
pub fn estimate_motion_against(vol: &Volume4D, reference: &[f64]) -> Result<Vec<RigidMotion>> {
    let dims = vol.spatial();
    if reference.len() != dims.len() {
        return Err(Error::Shape("reference frame size does not match volume".into()));
    }
    let vs = vol.voxel_size();
    (0..vol.nt())
        .into_par_iter()
        .map(|t| register(vol.frame(t), reference, dims, vs))
        .collect()
}

/// Voxelwise mean over time.
pub fn temporal_mean(vol: &Volume4D) -> Vec<f64> {
    let mut m = vec![0.0; vol.n_voxels()];
    for f in vol.frames() {
        m.iter_mut().zip(f).for_each(|(a, b)| *a += b);
    }
    let nt = vol.nt() as f64;
    m.iter_mut().for_each(|a| *a /= nt);
    m
}

/// Resample each volume into reference space.
pub fn apply_motion(vol: &Volume4D, motion: &[RigidMotion]) -> Result<Volume4D> {
    if motion.len() != vol.nt() {
        return Err(Error::Shape(format!(
            "{} motion estimates for {} volumes",
            motion.len(),
            vol.nt()
        )));
    }
    let dims = vol.spatial();
    let vs = vol.voxel_size();
    let frames: Vec<Vec<f64>> = (0..vol.nt())
        .into_par_iter()
        .map(|t| resample_frame(vol.frame(t), dims, vs, &motion[t]))
        .collect();
    vol.with_data(frames.concat())
}
