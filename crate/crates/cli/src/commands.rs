use std::path::{Path, PathBuf};

use boldkit::design::{run_design, BlockDesign};
use boldkit::duration::{average_runs, concatenate_runs, non_target_rois, RunSet};
use boldkit::phantom::{generate_runs, GroundTruth, TruthSidecar};
use boldkit::pipeline::{adjusted_p_map, analyze_prepared, analyze_run, duration_study, preprocess_run};
use boldkit::pipeline::{Analysis, AnalysisOptions, DurationOptions};
use boldkit::inference::{cluster_table, table_to_csv, table_to_json};
use boldkit::volume_io::{read_nifti, Map3D, Mask3D, Volume4D};
use serde::Serialize;

use crate::config::{Mode, PipelineConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;
use crate::output::OutputDir;

/// Runs and whatever is known about where the signal is.
struct Loaded {
    runs: Vec<Volume4D>,
    design: BlockDesign,
    /// Target ROIs (from the phantom, a truth sidecar or `[input].rois`).
    rois: Vec<(String, Mask3D)>,
    brain: Option<Mask3D>,
    sources: Vec<String>,
}

fn has_explicit_design(cfg: &PipelineConfig) -> bool {
    let d = &cfg.design;
    d.preset.is_some() || d.onsets_s.is_some() || d.durations_s.is_some() || d.run_length_s.is_some()
}

fn absolute(p: &Path) -> String {
    std::path::absolute(p)
        .unwrap_or_else(|_| p.to_path_buf())
        .display()
        .to_string()
}

fn read_truth(path: &Path) -> CliResult<TruthSidecar> {
    let text = std::fs::read_to_string(path).map_err(|source| {
        CliError::Core(boldkit::Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Core(boldkit::Error::Format(format!("{}: {e}", path.display()))))
}

fn load(cfg: &PipelineConfig) -> CliResult<Loaded> {
    let files = cfg.input.files.as_ref().filter(|f| !f.is_empty());
    let truth_path = cfg.input.truth.as_ref();
    let from_files = files.is_some() || truth_path.is_some();
    match (from_files, cfg.phantom.is_some()) {
        (true, true) => {
            return Err(CliError::config(
                "`input` and `phantom` are mutually exclusive; configure exactly one source",
            ))
        }
        (false, false) => {
            return Err(CliError::config(
                "no input: set `input.files`, `input.truth` or a `[phantom]` section",
            ))
        }
        _ => {}
    }

    let mut loaded = if from_files {
        let sidecar = truth_path.map(|p| read_truth(p)).transpose()?;
        let paths: Vec<PathBuf> = match (files, &sidecar) {
            (Some(f), _) => f.clone(),
            (None, Some(s)) => {
                let dir = truth_path.and_then(|p| p.parent()).unwrap_or(Path::new(""));
                s.runs.iter().map(|r| dir.join(&r.file)).collect()
            }
            (None, None) => unreachable!(),
        };
        let runs = paths.iter().map(read_nifti).collect::<boldkit::Result<Vec<_>>>()?;
        let (rois, brain, design) = match &sidecar {
            Some(s) => (s.roi_masks()?, Some(s.spec.brain_mask()), Some(s.design.clone())),
            None => (Vec::new(), None, None),
        };
        let design = match design {
            Some(d) if !has_explicit_design(cfg) => d,
            _ => cfg.block_design()?,
        };
        Loaded {
            runs,
            design,
            rois,
            brain,
            sources: paths.iter().map(|p| absolute(p)).collect(),
        }
    } else {
        let spec = cfg.phantom_spec()?;
        spec.validate().map_err(|e| CliError::config(format!("`phantom`: {e}")))?;
        let acq = cfg.acquisition(spec.dims[2])?;
        let design = cfg.block_design()?;
        let (runs, GroundTruth { brain, rois }) = generate_runs(&spec, &acq, &design, cfg.n_runs()?)?;
        Loaded {
            runs,
            design,
            rois,
            brain: Some(brain),
            sources: Vec::new(),
        }
    };

    if let Some(extra) = &cfg.input.rois {
        let dims = loaded.runs[0].spatial();
        for (name, p) in extra {
            let m = Mask3D::from_volume(&read_nifti(p)?);
            if m.dims() != dims {
                return Err(CliError::Core(boldkit::Error::Shape(format!(
                    "ROI {name} has dims {:?}, data {:?}",
                    m.dims().0,
                    dims.0
                ))));
            }
            loaded.rois.retain(|(n, _)| n != name);
            loaded.rois.push((name.clone(), m));
        }
    }
    Ok(loaded)
}

#[derive(Serialize)]
struct SimulateResolved {
    spec: boldkit::phantom::PhantomSpec,
    acquisition: boldkit::phantom::AcquisitionParams,
    design: BlockDesign,
    n_runs: usize,
}

/// Write simulated runs, `truth.json` and a manifest.
pub fn simulate(cfg: &PipelineConfig) -> CliResult<PathBuf> {
    if cfg.input.files.is_some() || cfg.input.truth.is_some() {
        return Err(CliError::config("`simulate` takes a `[phantom]` source, not `input`"));
    }
    let spec = cfg.phantom_spec()?;
    spec.validate().map_err(|e| CliError::config(format!("`phantom`: {e}")))?;
    let acq = cfg.acquisition(spec.dims[2])?;
    let design = cfg.block_design()?;
    let n_runs = cfg.n_runs()?;
    let (runs, truth) = generate_runs(&spec, &acq, &design, n_runs)?;

    let root = cfg.out_dir();
    let mut out = OutputDir::create(&root)?;
    let names: Vec<String> = (1..=n_runs).map(|i| format!("run-{i}.nii.gz")).collect();
    for (name, run) in names.iter().zip(&runs) {
        out.nifti(name, run)?;
    }
    let sidecar = TruthSidecar::new(&spec, &acq, &design, &truth, &names);
    let mut json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    json.push('\n');
    out.text("truth.json", &json)?;

    let mut m = Manifest::new(
        "simulate",
        cfg,
        SimulateResolved {
            spec,
            acquisition: acq,
            design,
            n_runs,
        },
    );
    m.outputs = out.names();
    m.outputs.push("manifest.json".into());
    out.text("manifest.json", &m.to_json())?;
    out.commit();
    Ok(root)
}

#[derive(Serialize)]
struct AnalyzeResolved {
    mode: Mode,
    inputs: Vec<String>,
    design: BlockDesign,
    analysis: AnalysisOptions,
}

/// Fraction-of-overlap score between two masks.
pub fn dice(a: &Mask3D, b: &Mask3D) -> f64 {
    let both = a
        .members()
        .iter()
        .zip(b.members())
        .filter(|(x, y)| **x && **y)
        .count();
    let total = a.count() + b.count();
    if total == 0 {
        return 0.0;
    }
    2.0 * both as f64 / total as f64
}

fn run_set(runs: Vec<Volume4D>, design: &BlockDesign) -> CliResult<RunSet> {
    let designs = vec![design.clone(); runs.len()];
    RunSet::new(runs, designs).map_err(|e| CliError::config(format!("runs cannot be combined: {e}")))
}

fn analyze_mode(loaded: &Loaded, mode: Mode, opts: &AnalysisOptions) -> CliResult<Analysis> {
    if mode != Mode::Single && loaded.runs.len() < 2 {
        return Err(CliError::config(format!(
            "`duration.mode` = {mode:?} needs at least two runs, got {}",
            loaded.runs.len()
        )));
    }
    match mode {
        Mode::Single => Ok(analyze_run(&loaded.runs[0], &loaded.design, opts)?),
        Mode::Concatenate | Mode::Average => {
            // Validate geometry before spending time on preprocessing.
            run_set(loaded.runs.clone(), &loaded.design)?;
            let mut prepared = Vec::with_capacity(loaded.runs.len());
            let mut motion = Vec::new();
            for r in &loaded.runs {
                let (v, m) = preprocess_run(r, &opts.preprocess)?;
                prepared.push(v);
                motion.extend(m);
            }
            let set = run_set(prepared, &loaded.design)?;
            let mut a = if mode == Mode::Concatenate {
                let (vol, x) = concatenate_runs(&set, &opts.design)?;
                analyze_prepared(&vol, x, opts)?
            } else {
                let vol = average_runs(&set)?;
                let x = run_design(&loaded.design, vol.nt(), vol.tr(), &opts.design, None)?;
                analyze_prepared(&vol, x, opts)?
            };
            a.motion = motion;
            Ok(a)
        }
    }
}

fn motion_csv(a: &Analysis) -> String {
    let mut s = String::from("frame,tx_mm,ty_mm,tz_mm,rx_deg,ry_deg,rz_deg\n");
    for (i, m) in a.motion.iter().enumerate() {
        let [tx, ty, tz] = m.translation_mm;
        let [rx, ry, rz] = m.rotation_rad.map(f64::to_degrees);
        s.push_str(&format!("{i},{tx:.6},{ty:.6},{tz:.6},{rx:.6},{ry:.6},{rz:.6}\n"));
    }
    s
}

/// Summary printed after `analyze`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeSummary {
    pub out: PathBuf,
    pub n_rejected: usize,
    pub n_clusters: usize,
    /// Dice of the rejection mask against the union of target ROIs, when known.
    pub dice: Option<f64>,
}

pub fn analyze(cfg: &PipelineConfig) -> CliResult<AnalyzeSummary> {
    let mode = cfg.mode()?;
    let loaded = load(cfg)?;
    let nz = loaded.runs[0].spatial().nz();
    let opts = cfg.analysis_options(nz)?;
    let a = analyze_mode(&loaded, mode, &opts)?;

    let dims = loaded.runs[0].spatial();
    let vox = loaded.runs[0].voxel_size();
    let map = |v: &[f64]| -> CliResult<Volume4D> { Ok(Map3D::new(dims, v.to_vec())?.to_volume(vox, 0.0)?) };

    let root = cfg.out_dir();
    let mut out = OutputDir::create(&root)?;
    out.nifti("t.nii.gz", &map(&a.stats.t)?)?;
    out.nifti("z.nii.gz", &map(&a.stats.z)?)?;
    out.nifti("p_adjusted.nii.gz", &map(&adjusted_p_map(&a.fdr, 1.0))?)?;
    out.nifti("rejected.nii.gz", &a.rejected.to_volume(vox)?)?;
    let rows = cluster_table(&a.clusters);
    out.text("clusters.csv", &table_to_csv(&rows))?;
    out.text("clusters.json", &table_to_json(&rows))?;
    if !a.motion.is_empty() {
        out.text("motion.csv", &motion_csv(&a))?;
    }
    let mut m = Manifest::new(
        "analyze",
        cfg,
        AnalyzeResolved {
            mode,
            inputs: loaded.sources.clone(),
            design: loaded.design.clone(),
            analysis: opts,
        },
    );
    m.outputs = out.names();
    m.outputs.push("manifest.json".into());
    out.text("manifest.json", &m.to_json())?;
    out.commit();

    let dice = if loaded.rois.is_empty() {
        None
    } else {
        let mut truth = Mask3D::empty(dims);
        for (_, r) in &loaded.rois {
            truth = truth.union(r)?;
        }
        Some(dice(&a.rejected, &truth))
    };
    Ok(AnalyzeSummary {
        out: root,
        n_rejected: a.fdr.n_rejected(),
        n_clusters: a.clusters.len(),
        dice,
    })
}

#[derive(Serialize)]
struct DurationResolved {
    inputs: Vec<String>,
    design: BlockDesign,
    rois: Vec<(String, usize)>,
    options: DurationOptions,
}

pub fn duration(cfg: &PipelineConfig) -> CliResult<PathBuf> {
    let loaded = load(cfg)?;
    if loaded.runs.len() != 2 {
        return Err(CliError::config(format!(
            "`duration-study` needs exactly two runs, got {}",
            loaded.runs.len()
        )));
    }
    let set = run_set(loaded.runs.clone(), &loaded.design)?;
    let nz = loaded.runs[0].spatial().nz();
    let opts = cfg.duration_options(nz)?;

    let mut rois = loaded.rois.clone();
    if let Some(brain) = &loaded.brain {
        let mut active = Mask3D::empty(brain.dims());
        for (_, r) in &loaded.rois {
            active = active.union(r)?;
        }
        for (i, m) in non_target_rois(brain, &active, cfg.seed())?.into_iter().enumerate() {
            rois.push((format!("nontarget-{}", i + 1), m));
        }
    }
    if rois.is_empty() {
        return Err(CliError::config(
            "`duration-study` needs ROIs: use a phantom, `input.truth` or `input.rois`",
        ));
    }

    let (report, maps) = duration_study(&set, &rois, &opts)?;

    let dims = loaded.runs[0].spatial();
    let vox = loaded.runs[0].voxel_size();
    let root = cfg.out_dir();
    let mut out = OutputDir::create(&root)?;
    out.text("robustness.json", &report.to_json())?;
    out.text("comparison.csv", &report.to_csv())?;
    for cm in &maps {
        let c = cm.condition.as_str();
        out.nifti(
            &format!("t_{c}.nii.gz"),
            &Map3D::new(dims, cm.analysis.stats.t.clone())?.to_volume(vox, 0.0)?,
        )?;
        out.nifti(
            &format!("r_{c}.nii.gz"),
            &Map3D::new(dims, cm.r.clone())?.to_volume(vox, 0.0)?,
        )?;
    }
    let mut m = Manifest::new(
        "duration-study",
        cfg,
        DurationResolved {
            inputs: loaded.sources.clone(),
            design: loaded.design.clone(),
            rois: rois.iter().map(|(n, m)| (n.clone(), m.count())).collect(),
            options: opts,
        },
    );
    m.outputs = out.names();
    m.outputs.push("manifest.json".into());
    out.text("manifest.json", &m.to_json())?;
    out.commit();
    Ok(root)
}
