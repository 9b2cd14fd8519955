//! Mass-univariate least squares and statistic maps.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::special::{normal_quantile, student_t_sf};
use crate::volume_io::Volume4D;

/// Voxel columns per work unit. Fixed so results never depend on thread count.
const CHUNK: usize = 256;

const EXACT_FIT_REL: f64 = 1e-12;

/// `|z|` never exceeds this; beyond it the normal tail underflows.
pub const Z_CLAMP: f64 = 40.0;

/// Per-voxel OLS estimates sharing one design.
#[derive(Debug, Clone)]
pub struct GlmFit {
    /// `P × V`, one column per voxel.
    pub beta: DMatrix<f64>,
    pub residual_variance: Vec<f64>,
    pub dof: usize,
    pub rank: usize,
    design: DesignMatrix,
    /// Right singular vectors of the retained (nonzero) singular values.
    row_basis: DMatrix<f64>,
    singular_values: Vec<f64>,
}

impl GlmFit {
    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn n_voxels(&self) -> usize {
        self.beta.ncols()
    }

    /// `cᵀ (XᵀX)⁺ c`.
    pub fn contrast_variance_factor(&self, c: &[f64]) -> f64 {
        let c = DVector::from_column_slice(c);
        let proj = self.row_basis.transpose() * c;
        proj.iter()
            .zip(&self.singular_values)
            .map(|(p, s)| (p / s).powi(2))
            .sum()
    }

    /// A contrast is estimable when it lies in the row space of the design.
    pub fn is_estimable(&self, c: &[f64]) -> bool {
        let cv = DVector::from_column_slice(c);
        let back = &self.row_basis * (self.row_basis.transpose() * &cv);
        (cv - back).norm() <= 1e-8 * c.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Ordinary least squares for every column of `y` (`N × V`) via the SVD of
/// the design. Rank-deficient designs get the minimum-norm solution and
/// `dof = N − rank`.
pub fn fit_glm(y: &DMatrix<f64>, x: &DesignMatrix) -> Result<GlmFit> {
    let xm = x.values();
    let (n, p) = xm.shape();
    if y.nrows() != n {
        return Err(Error::Shape(format!(
            "data has {} time points, design has {n} rows",
            y.nrows()
        )));
    }
    if p == 0 {
        return Err(Error::Shape("design has no columns".into()));
    }
    let svd = xm.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested Vᵀ");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = smax * n.max(p) as f64 * f64::EPSILON;
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tol)
        .collect();
    let rank = keep.len();
    if n <= rank {
        return Err(Error::DegreesOfFreedom { n, rank });
    }
    let dof = n - rank;

    let row_basis = DMatrix::from_fn(p, rank, |i, j| vt[(keep[j], i)]);
    let singular_values: Vec<f64> = keep.iter().map(|&k| svd.singular_values[k]).collect();
    // pinv = V_r · S_r⁻¹ · U_rᵀ
    let pinv = DMatrix::from_fn(p, n, |i, j| {
        keep.iter()
            .map(|&k| vt[(k, i)] * u[(j, k)] / svd.singular_values[k])
            .sum()
    });

    let nv = y.ncols();
    let parts: Vec<(DMatrix<f64>, Vec<f64>)> = (0..nv.div_ceil(CHUNK))
        .into_par_iter()
        .map(|ci| {
            let start = ci * CHUNK;
            let w = CHUNK.min(nv - start);
            let yc = y.columns(start, w);
            let b = &pinv * yc;
            let resid = yc - xm * &b;
            // residuals at rounding level of the data count as an exact fit
            let rv = resid
                .column_iter()
                .zip(yc.column_iter())
                .map(|(r, yv)| {
                    let rss = r.norm_squared();
                    if rss <= EXACT_FIT_REL * EXACT_FIT_REL * yv.norm_squared() {
                        0.0
                    } else {
                        rss / dof as f64
                    }
                })
                .collect();
            (b, rv)
        })
        .collect();

    let mut beta = DMatrix::zeros(p, nv);
    let mut residual_variance = Vec::with_capacity(nv);
    for (ci, (b, rv)) in parts.into_iter().enumerate() {
        beta.columns_mut(ci * CHUNK, b.ncols()).copy_from(&b);
        residual_variance.extend(rv);
    }
    Ok(GlmFit {
        beta,
        residual_variance,
        dof,
        rank,
        design: x.clone(),
        row_basis,
        singular_values,
    })
}

/// Fit every voxel of a volume.
pub fn fit_volume(vol: &Volume4D, x: &DesignMatrix) -> Result<GlmFit> {
    fit_glm(&vol.series_matrix(), x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sidedness {
    /// `P(T > t)`: evidence for positive activation.
    #[default]
    OneSided,
    TwoSided,
}

/// t, p and z per voxel for one contrast.
#[derive(Debug, Clone, PartialEq)]
pub struct StatMaps {
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    pub z: Vec<f64>,
    /// Voxels with zero residual variance; `t` is ±∞ there and they take no
    /// part in FDR.
    pub degenerate: Vec<bool>,
    pub dof: usize,
    pub sidedness: Sidedness,
}

impl StatMaps {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

fn upper_z(t: f64, dof: f64) -> Result<(f64, f64)> {
    // z from whichever tail is small, to keep precision
    if t >= 0.0 {
        let p = student_t_sf(t, dof)?;
        Ok((p, (-normal_quantile(p)).min(Z_CLAMP)))
    } else {
        let lower = student_t_sf(-t, dof)?;
        Ok((1.0 - lower, normal_quantile(lower).max(-Z_CLAMP)))
    }
}

/// `t = cᵀβ / sqrt(σ² · cᵀ(XᵀX)⁻¹c)` with p and z maps.
pub fn t_contrast(fit: &GlmFit, c: &[f64], sidedness: Sidedness) -> Result<StatMaps> {
    let p = fit.beta.nrows();
    if c.len() != p {
        return Err(Error::Shape(format!("contrast has {} weights for {p} columns", c.len())));
    }
    if c.iter().all(|&v| v == 0.0) || c.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("contrast must be finite and not all zero".into()));
    }
    if !fit.is_estimable(c) {
        return Err(Error::InestimableContrast);
    }
    let vf = fit.contrast_variance_factor(c);
    let dof = fit.dof as f64;
    let cv = DVector::from_column_slice(c);

    let per_voxel: Vec<(f64, f64, f64, bool)> = (0..fit.n_voxels())
        .into_par_iter()
        .map(|v| -> Result<(f64, f64, f64, bool)> {
            let effect = fit.beta.column(v).dot(&cv);
            let rv = fit.residual_variance[v];
            if rv <= 0.0 {
                let t = if effect < 0.0 { f64::NEG_INFINITY } else { f64::INFINITY };
                let (p, z) = match (sidedness, t > 0.0) {
                    (Sidedness::OneSided, true) => (0.0, Z_CLAMP),
                    (Sidedness::OneSided, false) => (1.0, -Z_CLAMP),
                    (Sidedness::TwoSided, pos) => (0.0, if pos { Z_CLAMP } else { -Z_CLAMP }),
                };
                return Ok((t, p, z, true));
            }
            let t = effect / (rv * vf).sqrt();
            if !t.is_finite() {
                return Err(Error::Numeric(format!("t statistic not finite at voxel {v}")));
            }
            let (p, z) = match sidedness {
                Sidedness::OneSided => upper_z(t, dof)?,
                Sidedness::TwoSided => {
                    let tail = student_t_sf(t.abs(), dof)?;
                    let z = (-normal_quantile(tail)).min(Z_CLAMP);
                    ((2.0 * tail).min(1.0), z.copysign(t))
                }
            };
            Ok((t, p, z, false))
        })
        .collect::<Result<_>>()?;

    let mut maps = StatMaps {
        t: Vec::with_capacity(per_voxel.len()),
        p: Vec::with_capacity(per_voxel.len()),
        z: Vec::with_capacity(per_voxel.len()),
        degenerate: Vec::with_capacity(per_voxel.len()),
        dof: fit.dof,
        sidedness,
    };
    for (t, pv, z, d) in per_voxel {
        maps.t.push(t);
        maps.p.push(pv);
        maps.z.push(z);
        maps.degenerate.push(d);
    }
    Ok(maps)
}

/// Pearson correlations with a regressor; constant voxels get `r = 0` and a flag.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap {
    pub r: Vec<f64>,
    pub constant: Vec<bool>,
}

pub fn correlation_map(vol: &Volume4D, regressor: &[f64]) -> Result<CorrelationMap> {
    let nt = vol.nt();
    if regressor.len() != nt {
        return Err(Error::Shape(format!(
            "regressor has {} samples, volume has {nt}",
            regressor.len()
        )));
    }
    let mean = regressor.iter().sum::<f64>() / nt as f64;
    let xc: Vec<f64> = regressor.iter().map(|v| v - mean).collect();
    let sxx: f64 = xc.iter().map(|v| v * v).sum();
    if sxx <= f64::EPSILON * f64::EPSILON * regressor.iter().map(|v| v * v).sum::<f64>() || sxx == 0.0 {
        return Err(Error::DegenerateRegressor);
    }
    let nv = vol.n_voxels();
    let data = vol.data();
    let (r, constant) = (0..nv)
        .into_par_iter()
        .map(|v| {
            let ym = (0..nt).map(|t| data[t * nv + v]).sum::<f64>() / nt as f64;
            let mut sxy = 0.0;
            let mut syy = 0.0;
            let mut raw = 0.0;
            for (t, x) in xc.iter().enumerate() {
                let y = data[t * nv + v];
                let d = y - ym;
                sxy += x * d;
                syy += d * d;
                raw += y * y;
            }
            if syy <= f64::EPSILON * f64::EPSILON * raw || syy == 0.0 {
                (0.0, true)
            } else {
                ((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0), false)
            }
        })
        .unzip();
    Ok(CorrelationMap { r, constant })
}
