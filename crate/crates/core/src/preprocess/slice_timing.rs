use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume_io::Volume4D;

/// Slice acquisition order (1-based slice numbers, first acquired first) and
/// the fraction of the TR used as the common temporal reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceOrder {
    acquisition_sequence: Vec<usize>,
    reference_fraction: f64,
}

impl SliceOrder {
    pub fn new(acquisition_sequence: Vec<usize>, reference_fraction: f64) -> Result<Self> {
        let n = acquisition_sequence.len();
        let mut seen = vec![false; n];
        for &s in &acquisition_sequence {
            if s == 0 || s > n || seen[s - 1] {
                return Err(Error::Domain(format!(
                    "slice order {acquisition_sequence:?} is not a permutation of 1..={n}"
                )));
            }
            seen[s - 1] = true;
        }
        if !(0.0..=1.0).contains(&reference_fraction) {
            return Err(Error::Domain(format!(
                "reference fraction {reference_fraction} outside [0, 1]"
            )));
        }
        Ok(SliceOrder {
            acquisition_sequence,
            reference_fraction,
        })
    }

    /// Odd slices first, then even (1, 3, …, 2, 4, …), referenced to mid-TR.
    pub fn interleaved(nz: usize) -> Self {
        let seq = (1..=nz).step_by(2).chain((2..=nz).step_by(2)).collect();
        SliceOrder::new(seq, 0.5).expect("interleaved order is a permutation")
    }

    pub fn ascending(nz: usize) -> Self {
        SliceOrder::new((1..=nz).collect(), 0.5).expect("identity permutation")
    }

    pub fn sequence(&self) -> &[usize] {
        &self.acquisition_sequence
    }

    pub fn reference_fraction(&self) -> f64 {
        self.reference_fraction
    }

    pub fn len(&self) -> usize {
        self.acquisition_sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.acquisition_sequence.is_empty()
    }

    /// Acquisition time of each slice (0-based `z`) relative to the volume start.
    pub fn offsets(&self, tr_s: f64) -> Vec<f64> {
        let nz = self.len();
        let mut out = vec![0.0; nz];
        for (rank, &slice) in self.acquisition_sequence.iter().enumerate() {
            out[slice - 1] = rank as f64 * tr_s / nz as f64;
        }
        out
    }
}

/// Shift each slice's series to the reference time by linear interpolation
/// between neighbouring volumes; the ends are held at the first/last value.
pub fn slice_timing_correct(vol: &Volume4D, order: &SliceOrder) -> Result<Volume4D> {
    let nt = vol.nt();
    if nt < 2 {
        return Err(Error::InsufficientData(format!(
            "slice timing needs at least 2 volumes, got {nt}"
        )));
    }
    let dims = vol.spatial();
    if order.len() != dims.nz() {
        return Err(Error::Shape(format!(
            "slice order has {} entries for {} slices",
            order.len(),
            dims.nz()
        )));
    }
    let tr = vol.tr();
    let t_ref = order.reference_fraction * tr;
    // fractional volume shift per slice
    let shifts: Vec<f64> = order
        .offsets(tr)
        .iter()
        .map(|&t_z| (t_ref - t_z) / tr)
        .collect();

    let nv = dims.len();
    let plane = dims.nx() * dims.ny();
    let src = vol.data();
    let mut out = vec![0.0; src.len()];
    out.par_chunks_mut(nv).enumerate().for_each(|(t, frame)| {
        for (z, &shift) in shifts.iter().enumerate() {
            let pos = t as f64 + shift;
            let (i0, i1, w) = if pos <= 0.0 {
                (0, 0, 0.0)
            } else if pos >= (nt - 1) as f64 {
                (nt - 1, nt - 1, 0.0)
            } else {
                let i0 = pos.floor() as usize;
                (i0, i0 + 1, pos - i0 as f64)
            };
            let a = &src[i0 * nv + z * plane..i0 * nv + (z + 1) * plane];
            let b = &src[i1 * nv + z * plane..i1 * nv + (z + 1) * plane];
            for ((o, &va), &vb) in frame[z * plane..(z + 1) * plane].iter_mut().zip(a).zip(b) {
                *o = va + w * (vb - va);
            }
        }
    });
    vol.with_data(out)
}
