//! Scan-duration studies: concatenating and averaging two runs, and the
//! spatial homogeneity metrics used to compare the resulting maps.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::{
    dct_highpass_basis, task_regressor, BlockDesign, ColumnKind, DesignMatrix, DesignOptions,
};
use crate::error::{Error, Result};
use crate::volume_io::{Dims3, Map3D, Mask3D, Volume4D};

/// Runs of one session with their task designs.
#[derive(Debug, Clone)]
pub struct RunSet {
    runs: Vec<Volume4D>,
    designs: Vec<BlockDesign>,
}

impl RunSet {
    pub fn new(runs: Vec<Volume4D>, designs: Vec<BlockDesign>) -> Result<Self> {
        if runs.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "duration studies need at least 2 runs, got {}",
                runs.len()
            )));
        }
        if designs.len() != runs.len() {
            return Err(Error::Shape(format!(
                "{} designs for {} runs",
                designs.len(),
                runs.len()
            )));
        }
        let first = runs[0].header();
        for (i, r) in runs.iter().enumerate().skip(1) {
            if !r.header().same_geometry(first) || r.tr() != runs[0].tr() || r.nt() != runs[0].nt() {
                return Err(Error::Shape(format!(
                    "run {i} differs from run 0 in geometry, TR or length"
                )));
            }
        }
        Ok(RunSet { runs, designs })
    }

    pub fn runs(&self) -> &[Volume4D] {
        &self.runs
    }

    pub fn designs(&self) -> &[BlockDesign] {
        &self.designs
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }
}

/// Stack runs in time with a single task column, per-run DCT drift blocks and
/// per-run intercepts (no global intercept).
pub fn concatenate_runs(set: &RunSet, opts: &DesignOptions) -> Result<(Volume4D, DesignMatrix)> {
    let vol = Volume4D::concat_time(&set.runs)?;
    let tr = vol.tr();
    let n_total = vol.nt();
    let r = set.runs.len();

    let mut task = Vec::with_capacity(n_total);
    let mut drifts = Vec::with_capacity(r);
    for (run, design) in set.runs.iter().zip(&set.designs) {
        task.extend(task_regressor(design, tr, run.nt(), opts)?);
        drifts.push(dct_highpass_basis(run.nt(), tr, opts.cutoff_hz)?);
    }
    let n_drift: usize = drifts.iter().map(|d| d.ncols()).sum();
    let p = 1 + n_drift + r;
    let mut values = DMatrix::zeros(n_total, p);
    let mut labels = Vec::with_capacity(p);
    values.column_mut(0).copy_from_slice(&task);
    labels.push(ColumnKind::Task);

    let mut col = 1;
    let mut row = 0;
    for (run, d) in set.runs.iter().zip(&drifts) {
        for c in 0..d.ncols() {
            for t in 0..run.nt() {
                values[(row + t, col)] = d[(t, c)];
            }
            labels.push(ColumnKind::Drift);
            col += 1;
        }
        row += run.nt();
    }
    row = 0;
    for run in &set.runs {
        for t in 0..run.nt() {
            values[(row + t, col)] = 1.0;
        }
        labels.push(ColumnKind::Intercept);
        col += 1;
        row += run.nt();
    }
    Ok((vol, DesignMatrix::new(values, labels, tr)?))
}

/// Voxelwise mean across runs at each time point.
pub fn average_runs(set: &RunSet) -> Result<Volume4D> {
    if set.designs.iter().any(|d| d != &set.designs[0]) {
        return Err(Error::Design("averaged runs must share one task design".into()));
    }
    let n = set.runs.len() as f64;
    let mut acc = vec![0.0; set.runs[0].data().len()];
    for run in &set.runs {
        for (a, v) in acc.iter_mut().zip(run.data()) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n);
    set.runs[0].with_data(acc)
}

fn check_roi(map: &Map3D, roi: &Mask3D) -> Result<()> {
    if map.dims != roi.dims() {
        return Err(Error::Shape(format!(
            "map dims {:?} vs ROI dims {:?}",
            map.dims.0,
            roi.dims().0
        )));
    }
    if roi.is_empty() {
        return Err(Error::EmptySelection("ROI has no voxels".into()));
    }
    Ok(())
}

fn population_sd(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Mean over ROI voxels of the population standard deviation of the map in
/// the voxel's `(2r+1)³` neighbourhood, clipped to the grid. Non-finite map
/// values are skipped.
pub fn local_standard_deviation(map: &Map3D, roi: &Mask3D, radius_vox: usize) -> Result<f64> {
    check_roi(map, roi)?;
    if radius_vox == 0 {
        return Err(Error::Domain("LSD radius must be >= 1".into()));
    }
    let r = radius_vox as isize;
    let dims = map.dims;
    let mut total = 0.0;
    let mut buf = Vec::new();
    for v in roi.indices() {
        let c = dims.coords(v);
        buf.clear();
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    if let Some(n) = dims.offset(c, [dx, dy, dz]) {
                        if map.data[n].is_finite() {
                            buf.push(map.data[n]);
                        }
                    }
                }
            }
        }
        total += population_sd(&buf);
    }
    Ok(total / roi.count() as f64)
}

/// Mean absolute difference over 6-connected voxel pairs inside the ROI; 0
/// when the ROI has no such pair. Pairs with a non-finite member are skipped.
pub fn total_variation(map: &Map3D, roi: &Mask3D) -> Result<f64> {
    check_roi(map, roi)?;
    let dims = map.dims;
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for v in roi.indices() {
        let c = dims.coords(v);
        for o in [[1, 0, 0], [0, 1, 0], [0, 0, 1]] {
            if let Some(n) = dims.offset(c, o) {
                if roi.contains(n) {
                    let d = (map.data[v] - map.data[n]).abs();
                    if d.is_finite() {
                        sum += d;
                        pairs += 1;
                    }
                }
            }
        }
    }
    Ok(if pairs == 0 { 0.0 } else { sum / pairs as f64 })
}

/// Largest finite value of `r_map` inside the ROI.
pub fn peak_correlation(r_map: &Map3D, roi: &Mask3D) -> Result<f64> {
    check_roi(r_map, roi)?;
    roi.indices()
        .into_iter()
        .map(|v| r_map.data[v])
        .filter(|r| r.is_finite())
        .reduce(f64::max)
        .ok_or_else(|| Error::EmptySelection("ROI has no finite correlation".into()))
}

/// `n` disjoint 6-connected regions of exactly `size` voxels, grown from
/// random seeds inside `allowed`. Deterministic for a given seed.
pub fn grow_regions(allowed: &Mask3D, n: usize, size: usize, seed: u64) -> Result<Vec<Mask3D>> {
    const ATTEMPTS: usize = 200;
    let dims = allowed.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut free = allowed.clone();
    let mut out = Vec::with_capacity(n);
    let six = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];
    for k in 0..n {
        let mut grown = None;
        for _ in 0..ATTEMPTS {
            let candidates = free.indices();
            let Some(&start) = candidates.choose(&mut rng) else {
                break;
            };
            let mut region = BTreeSet::from([start]);
            let mut frontier = BTreeSet::new();
            let push_neighbours = |v: usize, region: &BTreeSet<usize>, frontier: &mut BTreeSet<usize>| {
                let c = dims.coords(v);
                for o in six {
                    if let Some(nb) = dims.offset(c, o) {
                        if free.contains(nb) && !region.contains(&nb) {
                            frontier.insert(nb);
                        }
                    }
                }
            };
            push_neighbours(start, &region, &mut frontier);
            while region.len() < size && !frontier.is_empty() {
                let pick = rng.random_range(0..frontier.len());
                let v = *frontier.iter().nth(pick).expect("index in range");
                frontier.remove(&v);
                region.insert(v);
                push_neighbours(v, &region, &mut frontier);
            }
            if region.len() == size {
                grown = Some(region);
                break;
            }
        }
        let region = grown.ok_or_else(|| {
            Error::InsufficientData(format!("could not place region {k} of {size} voxels"))
        })?;
        let ids: Vec<usize> = region.into_iter().collect();
        let mask = Mask3D::from_indices(dims, &ids)?;
        // keep regions apart so they do not touch
        for v in mask.dilate(1).indices() {
            free.set(v, false);
        }
        out.push(mask);
    }
    Ok(out)
}

/// Default non-target ROIs: three 200-voxel regions in the brain, away from
/// the activation (dilated by 2) and off the brain edge.
pub fn non_target_rois(brain: &Mask3D, activation: &Mask3D, seed: u64) -> Result<Vec<Mask3D>> {
    let dims = brain.dims();
    let outside = invert(brain);
    let edge = outside.dilate(1);
    let near = activation.dilate(2);
    let allowed = Mask3D::from_fn(dims, |x, y, z| {
        let i = dims.index(x, y, z);
        brain.contains(i) && !edge.contains(i) && !near.contains(i)
    });
    grow_regions(&allowed, 3, 200, seed)
}

fn invert(m: &Mask3D) -> Mask3D {
    let dims: Dims3 = m.dims();
    Mask3D::from_fn(dims, |x, y, z| !m.contains(dims.index(x, y, z)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Single,
    Concatenated,
    Averaged,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Single => "single",
            Condition::Concatenated => "concatenated",
            Condition::Averaged => "averaged",
        }
    }
}

/// Which voxelwise map LSD and TV are computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricMap {
    #[default]
    T,
    Z,
    P,
    R,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiMetrics {
    pub roi: String,
    pub n_voxels: usize,
    pub lsd: f64,
    pub tv: f64,
    pub peak_r: f64,
    pub mean_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub n_vols: usize,
    pub dof: usize,
    pub rois: Vec<RoiMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub metric_map: MetricMap,
    pub lsd_radius_vox: usize,
    pub conditions: Vec<ConditionReport>,
}

pub const COMPARISON_CSV_HEADER: &str = "condition,roi,n_voxels,n_vols,dof,lsd,tv,peak_r,mean_t";

impl RobustnessReport {
    pub fn condition(&self, c: Condition) -> Option<&ConditionReport> {
        self.conditions.iter().find(|r| r.condition == c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// One row per condition and ROI.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(COMPARISON_CSV_HEADER);
        s.push('\n');
        for c in &self.conditions {
            for r in &c.rois {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
                    c.condition.as_str(),
                    r.roi,
                    r.n_voxels,
                    c.n_vols,
                    c.dof,
                    r.lsd,
                    r.tv,
                    r.peak_r,
                    r.mean_t
                );
            }
        }
        s
    }
}

/// Mean of the finite map values inside the ROI.
pub fn roi_mean(map: &Map3D, roi: &Mask3D) -> Result<f64> {
    check_roi(map, roi)?;
    let vals: Vec<f64> = roi
        .indices()
        .into_iter()
        .map(|v| map.data[v])
        .filter(|v| v.is_finite())
        .collect();
    if vals.is_empty() {
        return Err(Error::EmptySelection("ROI has no finite values".into()));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}
