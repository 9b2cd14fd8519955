//! Block-design regressors, the canonical HRF and GLM design matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::gamma_pdf;

/// Task blocks within one run, in seconds from the first volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDesign {
    onsets_s: Vec<f64>,
    durations_s: Vec<f64>,
    run_length_s: f64,
}

impl BlockDesign {
    pub fn new(onsets_s: Vec<f64>, durations_s: Vec<f64>, run_length_s: f64) -> Result<Self> {
        if onsets_s.len() != durations_s.len() {
            return Err(Error::Design(format!(
                "{} onsets but {} durations",
                onsets_s.len(),
                durations_s.len()
            )));
        }
        if !(run_length_s.is_finite() && run_length_s > 0.0) {
            return Err(Error::Design(format!("run length {run_length_s} must be positive")));
        }
        for (i, (&on, &dur)) in onsets_s.iter().zip(&durations_s).enumerate() {
            if !(on.is_finite() && on >= 0.0) {
                return Err(Error::Design(format!("onset {i} = {on} must be >= 0")));
            }
            if !(dur.is_finite() && dur > 0.0) {
                return Err(Error::Design(format!("duration {i} = {dur} must be > 0")));
            }
            if on + dur > run_length_s {
                return Err(Error::Design(format!(
                    "block {i} ends at {} s, after the run ({run_length_s} s)",
                    on + dur
                )));
            }
            if i > 0 {
                let prev_end = onsets_s[i - 1] + durations_s[i - 1];
                if on <= onsets_s[i - 1] {
                    return Err(Error::Design("onsets must be strictly increasing".into()));
                }
                if on < prev_end {
                    return Err(Error::Design(format!("block {i} overlaps block {}", i - 1)));
                }
            }
        }
        Ok(BlockDesign {
            onsets_s,
            durations_s,
            run_length_s,
        })
    }

    /// Alternating task/rest blocks of equal length, task first.
    pub fn alternating(block_s: f64, run_length_s: f64) -> Result<Self> {
        let mut onsets = Vec::new();
        let mut t = 0.0;
        while t + block_s <= run_length_s + 1e-9 {
            onsets.push(t);
            t += 2.0 * block_s;
        }
        let durations = vec![block_s; onsets.len()];
        BlockDesign::new(onsets, durations, run_length_s)
    }

    /// Bilateral finger tapping: 30 s on / 30 s off over 5 minutes.
    pub fn finger_tapping() -> Self {
        BlockDesign::alternating(30.0, 300.0).expect("valid preset")
    }

    /// Flashing checkerboard: 24 s on / 24 s off over 5 minutes.
    pub fn visual_checkerboard() -> Self {
        BlockDesign::alternating(24.0, 300.0).expect("valid preset")
    }

    pub fn onsets(&self) -> &[f64] {
        &self.onsets_s
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations_s
    }

    pub fn run_length(&self) -> f64 {
        self.run_length_s
    }

    pub fn blocks(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.onsets_s.iter().copied().zip(self.durations_s.iter().copied())
    }
}

/// Double-gamma HRF parameters, all in seconds except the ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrfParams {
    pub peak_delay_s: f64,
    pub undershoot_delay_s: f64,
    pub peak_dispersion_s: f64,
    pub undershoot_dispersion_s: f64,
    pub undershoot_ratio: f64,
    pub kernel_length_s: f64,
}

impl Default for HrfParams {
    fn default() -> Self {
        HrfParams {
            peak_delay_s: 6.0,
            undershoot_delay_s: 16.0,
            peak_dispersion_s: 1.0,
            undershoot_dispersion_s: 1.0,
            undershoot_ratio: 6.0,
            kernel_length_s: 32.0,
        }
    }
}

impl HrfParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.peak_delay_s,
            self.undershoot_delay_s,
            self.peak_dispersion_s,
            self.undershoot_dispersion_s,
            self.undershoot_ratio,
            self.kernel_length_s,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Domain(format!("HRF parameters must be positive: {self:?}")));
        }
        if self.undershoot_delay_s <= self.peak_delay_s {
            return Err(Error::Domain("undershoot delay must exceed peak delay".into()));
        }
        if self.kernel_length_s < self.undershoot_delay_s {
            return Err(Error::Domain("kernel must cover the undershoot delay".into()));
        }
        Ok(())
    }
}

/// Boxcar sampled on the microtime grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Microtime {
    pub values: Vec<f64>,
    pub dt_s: f64,
    pub oversample: usize,
}

/// HRF kernel sampled at `t = 0, dt, 2·dt, …`.
#[derive(Debug, Clone, PartialEq)]
pub struct HrfKernel {
    pub values: Vec<f64>,
    pub dt_s: f64,
}

/// Task indicator on a grid of `n_vols · oversample` samples spaced `tr/oversample`.
pub fn boxcar(design: &BlockDesign, tr_s: f64, n_vols: usize, oversample: usize) -> Result<Microtime> {
    if !(tr_s.is_finite() && tr_s > 0.0) || n_vols == 0 || oversample == 0 {
        return Err(Error::Domain(format!(
            "boxcar needs positive TR, volumes and oversampling (TR={tr_s}, n={n_vols}, os={oversample})"
        )));
    }
    let window = n_vols as f64 * tr_s;
    if window < design.run_length() - tr_s {
        return Err(Error::OutOfRange(format!(
            "{n_vols} volumes at TR {tr_s} s cover {window} s, run is {} s",
            design.run_length()
        )));
    }
    let n = n_vols * oversample;
    let dt = tr_s / oversample as f64;
    let mut values = vec![0.0; n];
    for (onset, dur) in design.blocks() {
        let end = onset + dur;
        if end > window + 1e-9 {
            return Err(Error::OutOfRange(format!(
                "block [{onset}, {end}) s extends past the sampled window of {window} s"
            )));
        }
        let first = first_sample_at_or_after(onset, dt, n);
        let stop = first_sample_at_or_after(end, dt, n);
        values[first..stop].iter_mut().for_each(|v| *v = 1.0);
    }
    Ok(Microtime {
        values,
        dt_s: dt,
        oversample,
    })
}

/// Smallest `i` with `i·dt >= t`, capped at `n`.
fn first_sample_at_or_after(t: f64, dt: f64, n: usize) -> usize {
    let mut i = ((t / dt).ceil().max(0.0) as usize).min(n);
    while i > 0 && (i - 1) as f64 * dt >= t {
        i -= 1;
    }
    while i < n && (i as f64 * dt) < t {
        i += 1;
    }
    i
}

/// Canonical double-gamma HRF, normalized to a unit maximum.
pub fn canonical_hrf(params: &HrfParams, dt_s: f64) -> Result<HrfKernel> {
    params.validate()?;
    if !(dt_s.is_finite() && dt_s > 0.0 && dt_s <= params.kernel_length_s) {
        return Err(Error::Domain(format!("HRF sampling step {dt_s} s invalid")));
    }
    let n = (params.kernel_length_s / dt_s + 1e-9).floor() as usize + 1;
    let peak_shape = params.peak_delay_s / params.peak_dispersion_s;
    let under_shape = params.undershoot_delay_s / params.undershoot_dispersion_s;
    let mut values: Vec<f64> = (0..n)
        .map(|k| {
            let t = k as f64 * dt_s;
            gamma_pdf(t, peak_shape, params.peak_dispersion_s)
                - gamma_pdf(t, under_shape, params.undershoot_dispersion_s) / params.undershoot_ratio
        })
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("HRF evaluation produced a non-finite value".into()));
    }
    let peak = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(Error::Numeric("HRF has no positive lobe at this sampling".into()));
    }
    values.iter_mut().for_each(|v| *v /= peak);
    Ok(HrfKernel { values, dt_s })
}

/// Convolve a microtime boxcar with the kernel and keep every
/// `oversample`-th sample, starting at the first.
pub fn convolve_regressor(boxcar: &Microtime, kernel: &HrfKernel, oversample: usize) -> Result<Vec<f64>> {
    if oversample == 0 || !boxcar.values.len().is_multiple_of(oversample) {
        return Err(Error::Shape(format!(
            "boxcar of {} samples is not a whole number of {oversample}-sample volumes",
            boxcar.values.len()
        )));
    }
    if (boxcar.dt_s - kernel.dt_s).abs() > 1e-12 * boxcar.dt_s.max(kernel.dt_s) {
        return Err(Error::Shape(format!(
            "boxcar step {} s differs from kernel step {} s",
            boxcar.dt_s, kernel.dt_s
        )));
    }
    let b = &boxcar.values;
    let k = &kernel.values;
    let n_vols = b.len() / oversample;
    Ok((0..n_vols)
        .map(|n| {
            let i = n * oversample;
            let reach = k.len().min(i + 1);
            (0..reach).map(|j| b[i - j] * k[j]).sum()
        })
        .collect())
}

/// Number of cosine drift regressors below `cutoff_hz` for a run of `n_vols`.
pub fn dct_count(n_vols: usize, tr_s: f64, cutoff_hz: f64) -> usize {
    (2.0 * n_vols as f64 * tr_s * cutoff_hz + 1e-9).floor() as usize
}

/// Unit-norm discrete cosine drift basis (`N × K`), excluding the constant.
pub fn dct_highpass_basis(n_vols: usize, tr_s: f64, cutoff_hz: f64) -> Result<DMatrix<f64>> {
    if n_vols == 0 || !(tr_s > 0.0) || !(cutoff_hz > 0.0) {
        return Err(Error::Domain("DCT basis needs positive N, TR and cutoff".into()));
    }
    if cutoff_hz >= 1.0 / (2.0 * tr_s) {
        return Err(Error::Domain(format!(
            "cutoff {cutoff_hz} Hz is not below the Nyquist frequency {} Hz",
            1.0 / (2.0 * tr_s)
        )));
    }
    let k = dct_count(n_vols, tr_s, cutoff_hz).min(n_vols - 1);
    let n = n_vols as f64;
    let mut m = DMatrix::from_fn(n_vols, k, |i, j| {
        (std::f64::consts::PI * (j + 1) as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos()
    });
    for mut col in m.column_iter_mut() {
        let norm = col.norm();
        col /= norm;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Task,
    Drift,
    Confound,
    Intercept,
}

/// GLM design: `N × P` values with one tag per column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
    labels: Vec<ColumnKind>,
    tr_s: f64,
    rank: usize,
}

impl DesignMatrix {
    pub fn new(values: DMatrix<f64>, labels: Vec<ColumnKind>, tr_s: f64) -> Result<Self> {
        if labels.len() != values.ncols() {
            return Err(Error::Shape(format!(
                "{} labels for {} columns",
                labels.len(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("design contains non-finite values".into()));
        }
        let rank = numerical_rank(&values);
        Ok(DesignMatrix {
            values,
            labels,
            tr_s,
            rank,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn labels(&self) -> &[ColumnKind] {
        &self.labels
    }

    pub fn tr(&self) -> f64 {
        self.tr_s
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Set when the columns are linearly dependent; the GLM then falls back to
    /// the minimum-norm solution.
    pub fn is_rank_deficient(&self) -> bool {
        self.rank < self.values.ncols()
    }

    pub fn task_columns(&self) -> Vec<usize> {
        self.columns_of(ColumnKind::Task)
    }

    pub fn columns_of(&self, kind: ColumnKind) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == kind).then_some(i))
            .collect()
    }

    /// Unit contrast selecting the `which`-th task column.
    pub fn task_contrast(&self, which: usize) -> Result<Vec<f64>> {
        let col = *self
            .task_columns()
            .get(which)
            .ok_or_else(|| Error::Design(format!("design has no task column {which}")))?;
        let mut c = vec![0.0; self.n_cols()];
        c[col] = 1.0;
        Ok(c)
    }
}

pub(crate) fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.ncols() == 0 || m.nrows() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let tol = smax * m.nrows().max(m.ncols()) as f64 * f64::EPSILON;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Assemble `[task | drift | confounds | intercept]`.
pub fn build_design_matrix(
    task_regs: &[Vec<f64>],
    drift: &DMatrix<f64>,
    confounds: &DMatrix<f64>,
    n_vols: usize,
    tr_s: f64,
) -> Result<DesignMatrix> {
    if let Some(bad) = task_regs.iter().find(|r| r.len() != n_vols) {
        return Err(Error::Shape(format!(
            "task regressor has {} samples, expected {n_vols}",
            bad.len()
        )));
    }
    for (name, m) in [("drift", drift), ("confound", confounds)] {
        if m.ncols() > 0 && m.nrows() != n_vols {
            return Err(Error::Shape(format!(
                "{name} block has {} rows, expected {n_vols}",
                m.nrows()
            )));
        }
    }
    let p = task_regs.len() + drift.ncols() + confounds.ncols() + 1;
    let mut values = DMatrix::zeros(n_vols, p);
    let mut labels = Vec::with_capacity(p);
    let mut col = 0;
    for r in task_regs {
        values.column_mut(col).copy_from_slice(r);
        labels.push(ColumnKind::Task);
        col += 1;
    }
    for (block, kind) in [(drift, ColumnKind::Drift), (confounds, ColumnKind::Confound)] {
        for c in block.column_iter() {
            values.column_mut(col).copy_from(&c);
            labels.push(kind);
            col += 1;
        }
    }
    values.column_mut(col).fill(1.0);
    labels.push(ColumnKind::Intercept);
    DesignMatrix::new(values, labels, tr_s)
}

/// Regressor construction settings shared by single-run and multi-run designs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignOptions {
    pub hrf: HrfParams,
    pub oversample: usize,
    pub cutoff_hz: f64,
}

impl Default for DesignOptions {
    fn default() -> Self {
        DesignOptions {
            hrf: HrfParams::default(),
            oversample: 16,
            cutoff_hz: 0.005,
        }
    }
}

/// HRF-convolved task regressor sampled at the TR grid.
pub fn task_regressor(design: &BlockDesign, tr_s: f64, n_vols: usize, opts: &DesignOptions) -> Result<Vec<f64>> {
    let bx = boxcar(design, tr_s, n_vols, opts.oversample)?;
    let kernel = canonical_hrf(&opts.hrf, bx.dt_s)?;
    convolve_regressor(&bx, &kernel, opts.oversample)
}

/// Single-run design: task, DCT drift, optional confounds and an intercept.
pub fn run_design(
    design: &BlockDesign,
    n_vols: usize,
    tr_s: f64,
    opts: &DesignOptions,
    confounds: Option<&DMatrix<f64>>,
) -> Result<DesignMatrix> {
    let task = task_regressor(design, tr_s, n_vols, opts)?;
    let drift = dct_highpass_basis(n_vols, tr_s, opts.cutoff_hz)?;
    let empty = DMatrix::zeros(n_vols, 0);
    build_design_matrix(&[task], &drift, confounds.unwrap_or(&empty), n_vols, tr_s)
}
