//! End-to-end analysis: preprocessing, GLM, FDR and clusters for one run,
//! and the three-condition duration study.

use serde::{Deserialize, Serialize};

use crate::design::{run_design, task_regressor, BlockDesign, DesignMatrix, DesignOptions};
use crate::duration::{
    average_runs, concatenate_runs, local_standard_deviation, peak_correlation, roi_mean,
    total_variation, Condition, ConditionReport, MetricMap, RobustnessReport, RoiMetrics, RunSet,
};
use crate::error::{Error, Result};
use crate::glm::{correlation_map, fit_volume, t_contrast, Sidedness, StatMaps};
use crate::inference::{extract_clusters, fdr_masked, Cluster, Connectivity, FdrResult};
use crate::preprocess::{
    apply_motion, estimate_motion, gaussian_smooth, highpass_filter, slice_timing_correct,
    RigidMotion, SliceOrder,
};
use crate::volume_io::{Map3D, Mask3D, Volume4D, VolumeHeader};

/// Preprocessing stages, applied in the order listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub slice_timing: bool,
    /// Defaults to interleaved order over the volume's slices.
    pub slice_order: Option<SliceOrder>,
    pub motion_correction: bool,
    pub motion_reference: usize,
    /// Smoothing kernel FWHM in mm; 0 disables smoothing.
    pub fwhm_mm: f64,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            slice_timing: true,
            slice_order: None,
            motion_correction: true,
            motion_reference: 0,
            fwhm_mm: 8.0,
        }
    }
}

impl PreprocessOptions {
    /// No preprocessing at all.
    pub fn none() -> Self {
        PreprocessOptions {
            slice_timing: false,
            slice_order: None,
            motion_correction: false,
            motion_reference: 0,
            fwhm_mm: 0.0,
        }
    }
}

/// Preprocessed run and the motion estimates (empty when motion correction is off).
pub fn preprocess_run(vol: &Volume4D, opts: &PreprocessOptions) -> Result<(Volume4D, Vec<RigidMotion>)> {
    let mut cur = vol.clone();
    if opts.slice_timing {
        let order = match &opts.slice_order {
            Some(o) => o.clone(),
            None => SliceOrder::interleaved(cur.spatial().nz()),
        };
        cur = slice_timing_correct(&cur, &order)?;
    }
    let mut motion = Vec::new();
    if opts.motion_correction {
        motion = estimate_motion(&cur, opts.motion_reference)?;
        cur = apply_motion(&cur, &motion)?;
    }
    if opts.fwhm_mm < 0.0 || !opts.fwhm_mm.is_finite() {
        return Err(Error::Domain(format!("fwhm_mm = {} must be >= 0", opts.fwhm_mm)));
    }
    if opts.fwhm_mm > 0.0 {
        cur = gaussian_smooth(&cur, opts.fwhm_mm)?;
    }
    Ok((cur, motion))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub preprocess: PreprocessOptions,
    pub design: DesignOptions,
    pub q: f64,
    pub connectivity: Connectivity,
    pub sidedness: Sidedness,
    /// Contrast over design columns; defaults to the task column.
    pub contrast: Option<Vec<f64>>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            preprocess: PreprocessOptions::default(),
            design: DesignOptions::default(),
            q: 0.05,
            connectivity: Connectivity::default(),
            sidedness: Sidedness::OneSided,
            contrast: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub design: DesignMatrix,
    pub stats: StatMaps,
    /// Voxels entering FDR: nonzero temporal variance and not degenerate.
    pub mask: Mask3D,
    pub fdr: FdrResult,
    pub rejected: Mask3D,
    pub clusters: Vec<Cluster>,
    pub motion: Vec<RigidMotion>,
}

/// Voxels whose series is not constant.
pub fn variance_mask(vol: &Volume4D) -> Mask3D {
    let nv = vol.n_voxels();
    let data = vol.data();
    let members = (0..nv)
        .map(|v| {
            let first = data[v];
            (1..vol.nt()).any(|t| data[t * nv + v] != first)
        })
        .collect();
    Mask3D::new(vol.spatial(), members).expect("mask matches volume")
}

/// GLM, FDR and clusters for an already preprocessed series and design.
pub fn analyze_prepared(vol: &Volume4D, design: DesignMatrix, opts: &AnalysisOptions) -> Result<Analysis> {
    let fit = fit_volume(vol, &design)?;
    let c = match &opts.contrast {
        Some(c) => c.clone(),
        None => design.task_contrast(0)?,
    };
    let stats = t_contrast(&fit, &c, opts.sidedness)?;
    let var = variance_mask(vol);
    let members: Vec<bool> = (0..vol.n_voxels())
        .map(|v| var.contains(v) && !stats.degenerate[v])
        .collect();
    let fdr = fdr_masked(&stats.p, &members, opts.q)?;
    let mask = Mask3D::new(vol.spatial(), members)?;
    let rejected = Mask3D::new(vol.spatial(), fdr.rejected.clone())?;
    let clusters = extract_clusters(&rejected, &stats, opts.connectivity)?;
    Ok(Analysis {
        design,
        stats,
        mask,
        fdr,
        rejected,
        clusters,
        motion: Vec::new(),
    })
}

/// Full single-run chain: preprocess, design, GLM, FDR, clusters.
pub fn analyze_run(vol: &Volume4D, design: &BlockDesign, opts: &AnalysisOptions) -> Result<Analysis> {
    let (prepared, motion) = preprocess_run(vol, &opts.preprocess)?;
    let x = run_design(design, prepared.nt(), prepared.tr(), &opts.design, None)?;
    let mut a = analyze_prepared(&prepared, x, opts)?;
    a.motion = motion;
    Ok(a)
}

/// Adjusted p-values with a display ceiling; values above it are written as
/// the ceiling.
pub fn adjusted_p_map(fdr: &FdrResult, ceiling: f64) -> Vec<f64> {
    fdr.adjusted_p.iter().map(|&p| p.min(ceiling)).collect()
}

fn single_series_volume(values: &[f64], tr: f64) -> Result<Volume4D> {
    Volume4D::new(VolumeHeader::new([1, 1, 1, values.len()], [1.0; 3], tr), values.to_vec())
}

/// Correlation with the task regressor after the same drift removal is
/// applied to data and regressor, run by run.
fn drift_free_correlation(
    runs: &[Volume4D],
    designs: &[BlockDesign],
    opts: &DesignOptions,
) -> Result<Vec<f64>> {
    let mut filtered = Vec::with_capacity(runs.len());
    let mut reg = Vec::new();
    for (run, d) in runs.iter().zip(designs) {
        filtered.push(highpass_filter(run, opts.cutoff_hz)?);
        let h = task_regressor(d, run.tr(), run.nt(), opts)?;
        let hv = highpass_filter(&single_series_volume(&h, run.tr())?, opts.cutoff_hz)?;
        reg.extend_from_slice(hv.data());
    }
    let vol = Volume4D::concat_time(&filtered)?;
    Ok(correlation_map(&vol, &reg)?.r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationOptions {
    pub analysis: AnalysisOptions,
    pub metric_map: MetricMap,
    pub lsd_radius_vox: usize,
}

impl Default for DurationOptions {
    fn default() -> Self {
        DurationOptions {
            analysis: AnalysisOptions::default(),
            metric_map: MetricMap::T,
            lsd_radius_vox: 1,
        }
    }
}

/// Maps produced for one duration-study condition.
#[derive(Debug, Clone)]
pub struct ConditionMaps {
    pub condition: Condition,
    pub analysis: Analysis,
    pub r: Vec<f64>,
}

/// Single-run (first run), concatenated and averaged analyses of a run pair,
/// with metrics over each named ROI.
pub fn duration_study(
    set: &RunSet,
    rois: &[(String, Mask3D)],
    opts: &DurationOptions,
) -> Result<(RobustnessReport, Vec<ConditionMaps>)> {
    let a = &opts.analysis;
    let prepared: Vec<Volume4D> = set
        .runs()
        .iter()
        .map(|r| preprocess_run(r, &a.preprocess).map(|(v, _)| v))
        .collect::<Result<_>>()?;
    let prepared_set = RunSet::new(prepared, set.designs().to_vec())?;
    let first = &prepared_set.runs()[0];
    let d0 = &set.designs()[0];

    let mut out = Vec::with_capacity(3);

    let x = run_design(d0, first.nt(), first.tr(), &a.design, None)?;
    out.push(ConditionMaps {
        condition: Condition::Single,
        analysis: analyze_prepared(first, x, a)?,
        r: drift_free_correlation(&prepared_set.runs()[..1], &set.designs()[..1], &a.design)?,
    });

    let (cat, x) = concatenate_runs(&prepared_set, &a.design)?;
    out.push(ConditionMaps {
        condition: Condition::Concatenated,
        analysis: analyze_prepared(&cat, x, a)?,
        r: drift_free_correlation(prepared_set.runs(), set.designs(), &a.design)?,
    });

    let avg = average_runs(&prepared_set)?;
    let x = run_design(d0, avg.nt(), avg.tr(), &a.design, None)?;
    out.push(ConditionMaps {
        condition: Condition::Averaged,
        analysis: analyze_prepared(&avg, x, a)?,
        r: drift_free_correlation(std::slice::from_ref(&avg), &set.designs()[..1], &a.design)?,
    });

    let dims = first.spatial();
    let mut conditions = Vec::with_capacity(3);
    for cm in &out {
        let metric = match opts.metric_map {
            MetricMap::T => cm.analysis.stats.t.clone(),
            MetricMap::Z => cm.analysis.stats.z.clone(),
            MetricMap::P => cm.analysis.stats.p.clone(),
            MetricMap::R => cm.r.clone(),
        };
        let metric = Map3D::new(dims, metric)?;
        let tmap = Map3D::new(dims, cm.analysis.stats.t.clone())?;
        let rmap = Map3D::new(dims, cm.r.clone())?;
        let metrics = rois
            .iter()
            .map(|(name, m)| {
                Ok(RoiMetrics {
                    roi: name.clone(),
                    n_voxels: m.count(),
                    lsd: local_standard_deviation(&metric, m, opts.lsd_radius_vox)?,
                    tv: total_variation(&metric, m)?,
                    peak_r: peak_correlation(&rmap, m)?,
                    mean_t: roi_mean(&tmap, m)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        conditions.push(ConditionReport {
            condition: cm.condition,
            n_vols: cm.analysis.design.n_rows(),
            dof: cm.analysis.stats.dof,
            rois: metrics,
        });
    }
    Ok((
        RobustnessReport {
            metric_map: opts.metric_map,
            lsd_radius_vox: opts.lsd_radius_vox,
            conditions,
        },
        out,
    ))
}
