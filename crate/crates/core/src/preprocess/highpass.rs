use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::design::dct_highpass_basis;
use crate::error::{Error, Result};
use crate::volume_io::Volume4D;

/// Remove cosine drifts below `cutoff_hz` from every voxel series while
/// keeping each series' mean.
pub fn highpass_filter(vol: &Volume4D, cutoff_hz: f64) -> Result<Volume4D> {
    let nt = vol.nt();
    if nt < 4 {
        return Err(Error::InsufficientData(format!(
            "high-pass filtering needs at least 4 volumes, got {nt}"
        )));
    }
    let dct = dct_highpass_basis(nt, vol.tr(), cutoff_hz)?;
    let mut basis = DMatrix::from_element(nt, dct.ncols() + 1, 1.0);
    basis.columns_mut(0, dct.ncols()).copy_from(&dct);
    let q = basis.qr().q();

    let y = vol.series_matrix();
    let nv = vol.n_voxels();
    let filtered: Vec<Vec<f64>> = (0..nv)
        .into_par_iter()
        .map(|v| {
            let s = DVector::from_column_slice(y.column(v).as_slice());
            let mean = s.mean();
            let fit = &q * (q.transpose() * &s);
            (s - fit).iter().map(|r| r + mean).collect()
        })
        .collect();
    let mut data = vec![0.0; nv * nt];
    for (v, s) in filtered.iter().enumerate() {
        for (t, &x) in s.iter().enumerate() {
            data[t * nv + v] = x;
        }
    }
    vol.with_data(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume_io::VolumeHeader;

    #[test]
    fn constant_series_unchanged() {
        let h = VolumeHeader::new([2, 1, 1, 100], [1.0; 3], 3.0);
        let v = Volume4D::new(h, vec![42.0; 200]).unwrap();
        let f = highpass_filter(&v, 0.005).unwrap();
        for (a, b) in f.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn too_short() {
        let h = VolumeHeader::new([1, 1, 1, 3], [1.0; 3], 3.0);
        let v = Volume4D::new(h, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(highpass_filter(&v, 0.005), Err(Error::InsufficientData(_))));
    }
}
