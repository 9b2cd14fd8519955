//! Synthetic BOLD data with known activation.
//!
//! Every in-brain voxel follows
//! `baseline + a·h(t) + n(t) + d(t)`: `h` is the HRF-convolved task boxcar
//! scaled to unit peak, `a` is nonzero only inside target ROIs, `n` is AR(1)
//! Gaussian noise and `d` a linear drift with a random sign per voxel. Voxels
//! outside the brain ellipsoid are zero. Random draws for voxel `v` come from
//! ChaCha stream `v` of the run seed, so output does not depend on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{task_regressor, BlockDesign, DesignOptions};
use crate::error::{Error, Result};
use crate::preprocess::SliceOrder;
use crate::volume_io::{Dims3, Mask3D, Volume4D, VolumeHeader};

/// Axis-aligned ellipsoid in voxel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center_vox: [f64; 3],
    pub radii_vox: [f64; 3],
}

impl Ellipsoid {
    pub fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        let p = [x as f64, y as f64, z as f64];
        (0..3)
            .map(|a| ((p[a] - self.center_vox[a]) / self.radii_vox[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiDef {
    pub name: String,
    pub parts: Vec<Ellipsoid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub voxel_size_mm: [f64; 3],
    pub brain: Ellipsoid,
    pub target_rois: Vec<RoiDef>,
    /// Activation amplitude over noise σ, before field scaling.
    pub cnr: f64,
    pub noise_sigma: f64,
    pub ar1_rho: f64,
    /// Drift magnitude accumulated over 100 volumes.
    pub drift_amplitude: f64,
    pub field_tesla: f64,
    pub baseline: f64,
    pub seed: u64,
}

/// Single-run effective CNR that yields a mean in-ROI t of about 9 for the
/// finger-tapping preset (100 volumes, 0.55 T) after 8 mm smoothing.
pub const DEFAULT_CNR: f64 = 3.25;

impl PhantomSpec {
    fn base(target_rois: Vec<RoiDef>) -> Self {
        PhantomSpec {
            dims: [24, 24, 21],
            voxel_size_mm: [3.3, 3.3, 4.8],
            brain: Ellipsoid {
                center_vox: [11.5, 11.5, 10.0],
                radii_vox: [10.5, 11.0, 9.5],
            },
            target_rois,
            cnr: DEFAULT_CNR,
            noise_sigma: 10.0,
            ar1_rho: 0.3,
            drift_amplitude: 5.0,
            field_tesla: 0.55,
            baseline: 1000.0,
            seed: 0,
        }
    }

    /// Bilateral motor cortex targets.
    pub fn finger_tapping() -> Self {
        PhantomSpec::base(vec![RoiDef {
            name: "motor".into(),
            parts: vec![
                Ellipsoid {
                    center_vox: [6.5, 13.0, 15.0],
                    radii_vox: [2.5, 2.5, 2.0],
                },
                Ellipsoid {
                    center_vox: [16.5, 13.0, 15.0],
                    radii_vox: [2.5, 2.5, 2.0],
                },
            ],
        }])
    }

    /// Occipital (primary visual) target.
    pub fn visual() -> Self {
        PhantomSpec::base(vec![RoiDef {
            name: "visual".into(),
            parts: vec![Ellipsoid {
                center_vox: [11.5, 3.5, 8.0],
                radii_vox: [4.0, 2.5, 2.5],
            }],
        }])
    }

    pub fn grid(&self) -> Dims3 {
        Dims3(self.dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Domain("phantom dims must be >= 1".into()));
        }
        if self.voxel_size_mm.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Domain("phantom voxel sizes must be positive".into()));
        }
        if !(self.cnr >= 0.0 && self.cnr.is_finite()) {
            return Err(Error::Domain(format!("cnr = {} must be >= 0", self.cnr)));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Domain(format!("noise_sigma = {} must be > 0", self.noise_sigma)));
        }
        if !(0.0..1.0).contains(&self.ar1_rho) {
            return Err(Error::Domain(format!("ar1_rho = {} must lie in [0, 1)", self.ar1_rho)));
        }
        if !(self.drift_amplitude >= 0.0 && self.drift_amplitude.is_finite()) {
            return Err(Error::Domain("drift_amplitude must be >= 0".into()));
        }
        if !(self.field_tesla > 0.0 && self.field_tesla.is_finite()) {
            return Err(Error::Domain("field_tesla must be > 0".into()));
        }
        if !self.baseline.is_finite() {
            return Err(Error::Domain("baseline must be finite".into()));
        }
        let masks = self.roi_masks();
        for i in 0..masks.len() {
            for j in i + 1..masks.len() {
                if !masks[i].1.intersection(&masks[j].1)?.is_empty() {
                    return Err(Error::Domain(format!(
                        "target ROIs '{}' and '{}' overlap",
                        masks[i].0, masks[j].0
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn brain_mask(&self) -> Mask3D {
        Mask3D::from_fn(self.grid(), |x, y, z| self.brain.contains(x, y, z))
    }

    /// Named target masks, clipped to the brain.
    pub fn roi_masks(&self) -> Vec<(String, Mask3D)> {
        self.target_rois
            .iter()
            .map(|roi| {
                let m = Mask3D::from_fn(self.grid(), |x, y, z| {
                    self.brain.contains(x, y, z) && roi.parts.iter().any(|e| e.contains(x, y, z))
                });
                (roi.name.clone(), m)
            })
            .collect()
    }

    /// Activation amplitude in intensity units.
    pub fn amplitude(&self) -> f64 {
        self.cnr * self.noise_sigma * field_snr_scale(self.field_tesla)
    }
}

/// Linear-in-field SNR factor, unity at 3 T.
pub fn field_snr_scale(field_tesla: f64) -> f64 {
    field_tesla / 3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionParams {
    pub tr_s: f64,
    /// Carried as metadata only.
    pub te_ms: f64,
    pub n_vols: usize,
    pub slice_order: SliceOrder,
}

impl Default for AcquisitionParams {
    fn default() -> Self {
        AcquisitionParams {
            tr_s: 3.0,
            te_ms: 85.0,
            n_vols: 100,
            slice_order: SliceOrder::interleaved(21),
        }
    }
}

impl AcquisitionParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_vols < 4 {
            return Err(Error::Domain(format!("n_vols = {} must be >= 4", self.n_vols)));
        }
        if !(self.tr_s > 0.0 && self.tr_s.is_finite()) {
            return Err(Error::Domain("tr_s must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub brain: Mask3D,
    pub rois: Vec<(String, Mask3D)>,
}

impl GroundTruth {
    /// Union of all target ROIs.
    pub fn activation(&self) -> Mask3D {
        self.rois
            .iter()
            .fold(Mask3D::empty(self.brain.dims()), |acc, (_, m)| {
                acc.union(m).expect("same grid")
            })
    }
}

/// Seed for run `run` of a session; run 0 uses `seed` itself.
pub fn run_seed(seed: u64, run: usize) -> u64 {
    if run == 0 {
        return seed;
    }
    // splitmix64 finalizer
    let mut z = seed ^ (run as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generate one run with the default HRF settings.
pub fn generate_phantom(
    spec: &PhantomSpec,
    acq: &AcquisitionParams,
    design: &BlockDesign,
) -> Result<(Volume4D, GroundTruth)> {
    generate_phantom_with(spec, acq, design, &DesignOptions::default())
}

pub fn generate_phantom_with(
    spec: &PhantomSpec,
    acq: &AcquisitionParams,
    design: &BlockDesign,
    opts: &DesignOptions,
) -> Result<(Volume4D, GroundTruth)> {
    spec.validate()?;
    acq.validate()?;
    let nt = acq.n_vols;
    let mut h = task_regressor(design, acq.tr_s, nt, opts)?;
    let peak = h.iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        h.iter_mut().for_each(|v| *v /= peak);
    }

    let brain = spec.brain_mask();
    let rois = spec.roi_masks();
    let mut active = Mask3D::empty(spec.grid());
    for (_, m) in &rois {
        active = active.union(m)?;
    }
    let amp = spec.amplitude();
    let sigma = spec.noise_sigma;
    let rho = spec.ar1_rho;
    let innov = sigma * (1.0 - rho * rho).sqrt();
    let nv = spec.grid().len();

    let series: Vec<Vec<f64>> = (0..nv)
        .into_par_iter()
        .map(|v| {
            if !brain.contains(v) {
                return vec![0.0; nt];
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(v as u64);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let a = if active.contains(v) { amp } else { 0.0 };
            let mut noise = 0.0;
            (0..nt)
                .map(|t| {
                    let e: f64 = rng.sample(StandardNormal);
                    noise = if t == 0 { sigma * e } else { rho * noise + innov * e };
                    let drift = sign * spec.drift_amplitude * t as f64 / 100.0;
                    spec.baseline + a * h[t] + noise + drift
                })
                .collect()
        })
        .collect();

    let mut header = VolumeHeader::new(
        [spec.dims[0], spec.dims[1], spec.dims[2], nt],
        spec.voxel_size_mm,
        acq.tr_s,
    );
    header.dims[3] = nt;
    let vol = Volume4D::from_series(header, &series)?;
    Ok((vol, GroundTruth { brain, rois }))
}

/// `n_runs` runs with independent noise (run `r` uses [`run_seed`]).
pub fn generate_runs(
    spec: &PhantomSpec,
    acq: &AcquisitionParams,
    design: &BlockDesign,
    n_runs: usize,
) -> Result<(Vec<Volume4D>, GroundTruth)> {
    let mut runs = Vec::with_capacity(n_runs);
    let mut truth = None;
    for r in 0..n_runs {
        let s = PhantomSpec {
            seed: run_seed(spec.seed, r),
            ..spec.clone()
        };
        let (v, t) = generate_phantom(&s, acq, design)?;
        runs.push(v);
        truth = Some(t);
    }
    let truth = truth.ok_or_else(|| Error::Domain("at least one run required".into()))?;
    Ok((runs, truth))
}

/// JSON sidecar describing a simulated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub spec: PhantomSpec,
    pub acquisition: AcquisitionParams,
    pub design: BlockDesign,
    pub amplitude: f64,
    pub brain_voxels: usize,
    pub rois: Vec<RoiVoxels>,
    pub runs: Vec<RunInfo>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoiVoxels {
    pub name: String,
    pub n_voxels: usize,
    pub voxels: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunInfo {
    pub file: String,
    pub seed: u64,
}

impl TruthSidecar {
    pub fn new(
        spec: &PhantomSpec,
        acq: &AcquisitionParams,
        design: &BlockDesign,
        truth: &GroundTruth,
        files: &[String],
    ) -> Self {
        TruthSidecar {
            spec: spec.clone(),
            acquisition: acq.clone(),
            design: design.clone(),
            amplitude: spec.amplitude(),
            brain_voxels: truth.brain.count(),
            rois: truth
                .rois
                .iter()
                .map(|(name, m)| RoiVoxels {
                    name: name.clone(),
                    n_voxels: m.count(),
                    voxels: m.indices(),
                })
                .collect(),
            runs: files
                .iter()
                .enumerate()
                .map(|(i, f)| RunInfo {
                    file: f.clone(),
                    seed: run_seed(spec.seed, i),
                })
                .collect(),
        }
    }

    /// Rebuild ROI masks from the listed voxel indices.
    pub fn roi_masks(&self) -> Result<Vec<(String, Mask3D)>> {
        let dims = Dims3(self.spec.dims);
        self.rois
            .iter()
            .map(|r| Ok((r.name.clone(), Mask3D::from_indices(dims, &r.voxels)?)))
            .collect()
    }
}
