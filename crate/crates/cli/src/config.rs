//! Pipeline configuration: a TOML file (grammar in README) plus flag
//! overrides, resolved into typed core options.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use boldkit::design::{BlockDesign, DesignOptions, HrfParams};
use boldkit::duration::MetricMap;
use boldkit::glm::Sidedness;
use boldkit::inference::Connectivity;
use boldkit::phantom::{AcquisitionParams, PhantomSpec};
use boldkit::pipeline::{AnalysisOptions, DurationOptions, PreprocessOptions};
use boldkit::preprocess::SliceOrder;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub input: InputSection,
    pub phantom: Option<PhantomSection>,
    #[serde(default)]
    pub acquisition: AcquisitionSection,
    #[serde(default)]
    pub design: DesignSection,
    #[serde(default)]
    pub preprocess: PreprocessSection,
    #[serde(default)]
    pub glm: GlmSection,
    #[serde(default)]
    pub inference: InferenceSection,
    #[serde(default)]
    pub duration: DurationSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSection {
    pub files: Option<Vec<PathBuf>>,
    /// Ground-truth sidecar written by `simulate`; supplies run files when
    /// `files` is absent and target ROIs for the duration study.
    pub truth: Option<PathBuf>,
    /// Named ROI masks (NIfTI, nonzero = member).
    pub rois: Option<BTreeMap<String, PathBuf>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSection {
    pub preset: Option<String>,
    pub cnr: Option<f64>,
    pub noise_sigma: Option<f64>,
    pub ar1_rho: Option<f64>,
    pub drift_amplitude: Option<f64>,
    pub field_tesla: Option<f64>,
    pub baseline: Option<f64>,
    pub n_runs: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionSection {
    pub tr_s: Option<f64>,
    pub te_ms: Option<f64>,
    pub n_vols: Option<usize>,
    pub slice_order: Option<SliceOrderSpec>,
    pub reference_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SliceOrderSpec {
    Named(String),
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub preset: Option<String>,
    pub onsets_s: Option<Vec<f64>>,
    pub durations_s: Option<Vec<f64>>,
    pub run_length_s: Option<f64>,
    pub oversample: Option<usize>,
    pub hrf: Option<HrfParams>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSection {
    pub slice_timing: Option<bool>,
    pub motion_correction: Option<bool>,
    pub motion_reference: Option<usize>,
    pub fwhm_mm: Option<f64>,
    pub cutoff_hz: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlmSection {
    pub contrast: Option<Vec<f64>>,
    pub sidedness: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceSection {
    pub q: Option<f64>,
    pub connectivity: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DurationSection {
    pub mode: Option<String>,
    pub metric_map: Option<String>,
    pub lsd_radius_vox: Option<usize>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub q: Option<f64>,
    pub fwhm: Option<f64>,
    pub cutoff_hz: Option<f64>,
    pub connectivity: Option<u32>,
    pub inputs: Vec<PathBuf>,
}

impl PipelineConfig {
    /// Parse a TOML config, or the `config` object of a run manifest when
    /// the path ends in `.json`. Relative paths inside resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            let c = v
                .get("config")
                .ok_or_else(|| CliError::config(format!("{}: manifest has no `config` key", path.display())))?;
            serde_json::from_value(c.clone()).map_err(|e| CliError::config(format!("{}: config.{e}", path.display())))?
        } else {
            Self::parse(&text).map_err(|e| match e {
                CliError::Config(m) => CliError::config(format!("{}: {m}", path.display())),
                other => other,
            })?
        };
        if let Some(dir) = path.parent() {
            cfg.rebase(dir);
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::config(e.to_string().trim_end().to_string()))
    }

    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !dir.as_os_str().is_empty() {
                *p = dir.join(&*p);
            }
        };
        if let Some(files) = &mut self.input.files {
            files.iter_mut().for_each(fix);
        }
        if let Some(t) = &mut self.input.truth {
            fix(t);
        }
        if let Some(r) = &mut self.input.rois {
            r.values_mut().for_each(fix);
        }
        if let Some(o) = &mut self.out {
            fix(o);
        }
    }

    /// Input paths made absolute, so the config can be reloaded from any
    /// directory.
    pub fn absolutized(&self) -> Self {
        let abs = |p: &PathBuf| std::path::absolute(p).unwrap_or_else(|_| p.clone());
        let mut c = self.clone();
        if let Some(files) = &mut c.input.files {
            files.iter_mut().for_each(|p| *p = abs(p));
        }
        if let Some(t) = &mut c.input.truth {
            *t = abs(t);
        }
        if let Some(r) = &mut c.input.rois {
            r.values_mut().for_each(|p| *p = abs(p));
        }
        c
    }

    /// Fold flag values into the config; flags win.
    pub fn apply(&mut self, o: &Overrides) {
        if o.out.is_some() {
            self.out = o.out.clone();
        }
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if o.threads.is_some() {
            self.threads = o.threads;
        }
        if o.q.is_some() {
            self.inference.q = o.q;
        }
        if o.fwhm.is_some() {
            self.preprocess.fwhm_mm = o.fwhm;
        }
        if o.cutoff_hz.is_some() {
            self.preprocess.cutoff_hz = o.cutoff_hz;
        }
        if o.connectivity.is_some() {
            self.inference.connectivity = o.connectivity;
        }
        if !o.inputs.is_empty() {
            self.input.files = Some(o.inputs.clone());
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("boldkit-out"))
    }

    pub fn threads(&self) -> CliResult<Option<usize>> {
        match self.threads {
            Some(0) => Err(CliError::config("`threads` must be >= 1")),
            t => Ok(t),
        }
    }

    pub fn phantom_spec(&self) -> CliResult<PhantomSpec> {
        let p = self.phantom.clone().unwrap_or_default();
        let mut spec = match p.preset.as_deref().unwrap_or("finger_tapping") {
            "finger_tapping" => PhantomSpec::finger_tapping(),
            "visual" => PhantomSpec::visual(),
            other => {
                return Err(CliError::config(format!(
                    "`phantom.preset` = \"{other}\": expected \"finger_tapping\" or \"visual\""
                )))
            }
        };
        spec.cnr = p.cnr.unwrap_or(spec.cnr);
        spec.noise_sigma = p.noise_sigma.unwrap_or(spec.noise_sigma);
        spec.ar1_rho = p.ar1_rho.unwrap_or(spec.ar1_rho);
        spec.drift_amplitude = p.drift_amplitude.unwrap_or(spec.drift_amplitude);
        spec.field_tesla = p.field_tesla.unwrap_or(spec.field_tesla);
        spec.baseline = p.baseline.unwrap_or(spec.baseline);
        spec.seed = self.seed();
        let checks: [(&str, bool); 5] = [
            ("phantom.cnr", spec.cnr >= 0.0 && spec.cnr.is_finite()),
            ("phantom.noise_sigma", spec.noise_sigma > 0.0 && spec.noise_sigma.is_finite()),
            ("phantom.ar1_rho", (0.0..1.0).contains(&spec.ar1_rho)),
            ("phantom.drift_amplitude", spec.drift_amplitude >= 0.0 && spec.drift_amplitude.is_finite()),
            ("phantom.field_tesla", spec.field_tesla > 0.0 && spec.field_tesla.is_finite()),
        ];
        for (key, ok) in checks {
            if !ok {
                return Err(CliError::config(format!("`{key}` is out of range")));
            }
        }
        Ok(spec)
    }

    pub fn n_runs(&self) -> CliResult<usize> {
        let n = self.phantom.as_ref().and_then(|p| p.n_runs).unwrap_or(2);
        if n == 0 {
            return Err(CliError::config("`phantom.n_runs` must be >= 1"));
        }
        Ok(n)
    }

    pub fn slice_order(&self, nz: usize) -> CliResult<SliceOrder> {
        let a = &self.acquisition;
        let frac = a.reference_fraction.unwrap_or(0.5);
        let seq: Vec<usize> = match &a.slice_order {
            None => SliceOrder::interleaved(nz).sequence().to_vec(),
            Some(SliceOrderSpec::Named(n)) if n == "interleaved" => SliceOrder::interleaved(nz).sequence().to_vec(),
            Some(SliceOrderSpec::Named(n)) if n == "ascending" => (1..=nz).collect(),
            Some(SliceOrderSpec::Named(n)) if n == "descending" => (1..=nz).rev().collect(),
            Some(SliceOrderSpec::Named(n)) => {
                return Err(CliError::config(format!(
                    "`acquisition.slice_order` = \"{n}\": expected interleaved, ascending, descending or a list"
                )))
            }
            Some(SliceOrderSpec::Explicit(v)) => v.clone(),
        };
        if seq.len() != nz {
            return Err(CliError::config(format!(
                "`acquisition.slice_order` lists {} slices, data has {nz}",
                seq.len()
            )));
        }
        SliceOrder::new(seq, frac).map_err(|e| CliError::config(format!("`acquisition.slice_order`: {e}")))
    }

    pub fn acquisition(&self, nz: usize) -> CliResult<AcquisitionParams> {
        let a = &self.acquisition;
        let acq = AcquisitionParams {
            tr_s: a.tr_s.unwrap_or(3.0),
            te_ms: a.te_ms.unwrap_or(85.0),
            n_vols: a.n_vols.unwrap_or(100),
            slice_order: self.slice_order(nz)?,
        };
        if !(acq.tr_s > 0.0 && acq.tr_s.is_finite()) {
            return Err(CliError::config("`acquisition.tr_s` must be positive"));
        }
        if acq.n_vols < 4 {
            return Err(CliError::config("`acquisition.n_vols` must be >= 4"));
        }
        Ok(acq)
    }

    /// Task design; defaults follow the phantom preset (or finger tapping).
    pub fn block_design(&self) -> CliResult<BlockDesign> {
        let d = &self.design;
        let explicit = d.onsets_s.is_some() || d.durations_s.is_some() || d.run_length_s.is_some();
        if explicit {
            if d.preset.is_some() {
                return Err(CliError::config("`design.preset` cannot be combined with explicit onsets"));
            }
            let (Some(on), Some(du), Some(len)) = (&d.onsets_s, &d.durations_s, d.run_length_s) else {
                return Err(CliError::config(
                    "`design` needs all of onsets_s, durations_s and run_length_s",
                ));
            };
            return BlockDesign::new(on.clone(), du.clone(), len)
                .map_err(|e| CliError::config(format!("`design`: {e}")));
        }
        let fallback = match self.phantom.as_ref().and_then(|p| p.preset.as_deref()) {
            Some("visual") => "visual_checkerboard",
            _ => "finger_tapping",
        };
        match d.preset.as_deref().unwrap_or(fallback) {
            "finger_tapping" => Ok(BlockDesign::finger_tapping()),
            "visual_checkerboard" => Ok(BlockDesign::visual_checkerboard()),
            other => Err(CliError::config(format!(
                "`design.preset` = \"{other}\": expected \"finger_tapping\" or \"visual_checkerboard\""
            ))),
        }
    }

    pub fn design_options(&self) -> CliResult<DesignOptions> {
        let mut o = DesignOptions::default();
        if let Some(h) = self.design.hrf {
            h.validate().map_err(|e| CliError::config(format!("`design.hrf`: {e}")))?;
            o.hrf = h;
        }
        o.oversample = self.design.oversample.unwrap_or(o.oversample);
        if o.oversample == 0 {
            return Err(CliError::config("`design.oversample` must be >= 1"));
        }
        o.cutoff_hz = self.preprocess.cutoff_hz.unwrap_or(o.cutoff_hz);
        if !(o.cutoff_hz > 0.0 && o.cutoff_hz.is_finite()) {
            return Err(CliError::config("`preprocess.cutoff_hz` must be positive"));
        }
        Ok(o)
    }

    pub fn analysis_options(&self, nz: usize) -> CliResult<AnalysisOptions> {
        let p = &self.preprocess;
        let fwhm = p.fwhm_mm.unwrap_or(8.0);
        if !(fwhm >= 0.0 && fwhm.is_finite()) {
            return Err(CliError::config("`preprocess.fwhm_mm` must be >= 0"));
        }
        let q = self.inference.q.unwrap_or(0.05);
        if !(q > 0.0 && q < 1.0) {
            return Err(CliError::config(format!("`inference.q` = {q} must lie in (0, 1)")));
        }
        let connectivity = Connectivity::try_from(self.inference.connectivity.unwrap_or(26))
            .map_err(|_| CliError::config("`inference.connectivity` must be 6, 18 or 26"))?;
        let sidedness = match self.glm.sidedness.as_deref() {
            None | Some("one-sided") => Sidedness::OneSided,
            Some("two-sided") => Sidedness::TwoSided,
            Some(other) => {
                return Err(CliError::config(format!(
                    "`glm.sidedness` = \"{other}\": expected \"one-sided\" or \"two-sided\""
                )))
            }
        };
        Ok(AnalysisOptions {
            preprocess: PreprocessOptions {
                slice_timing: p.slice_timing.unwrap_or(true),
                slice_order: Some(self.slice_order(nz)?),
                motion_correction: p.motion_correction.unwrap_or(true),
                motion_reference: p.motion_reference.unwrap_or(0),
                fwhm_mm: fwhm,
            },
            design: self.design_options()?,
            q,
            connectivity,
            sidedness,
            contrast: self.glm.contrast.clone(),
        })
    }

    pub fn mode(&self) -> CliResult<Mode> {
        match self.duration.mode.as_deref() {
            None | Some("single") => Ok(Mode::Single),
            Some("concatenate") => Ok(Mode::Concatenate),
            Some("average") => Ok(Mode::Average),
            Some(other) => Err(CliError::config(format!(
                "`duration.mode` = \"{other}\": expected single, concatenate or average"
            ))),
        }
    }

    pub fn duration_options(&self, nz: usize) -> CliResult<DurationOptions> {
        let metric_map = match self.duration.metric_map.as_deref() {
            None | Some("t") => MetricMap::T,
            Some("z") => MetricMap::Z,
            Some("p") => MetricMap::P,
            Some("r") => MetricMap::R,
            Some(other) => {
                return Err(CliError::config(format!(
                    "`duration.metric_map` = \"{other}\": expected t, z, p or r"
                )))
            }
        };
        let r = self.duration.lsd_radius_vox.unwrap_or(1);
        if r == 0 {
            return Err(CliError::config("`duration.lsd_radius_vox` must be >= 1"));
        }
        Ok(DurationOptions {
            analysis: self.analysis_options(nz)?,
            metric_map,
            lsd_radius_vox: r,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Single,
    Concatenate,
    Average,
}
