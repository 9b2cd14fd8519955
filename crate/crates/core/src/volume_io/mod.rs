//! Volume containers, masks and NIfTI-1 reading/writing.
//!
//! Voxel data is stored in NIfTI order: `x` varies fastest, then `y`, `z`
//! and finally `t`, so each time frame is one contiguous slab.

mod nifti;

pub use nifti::{read_nifti, read_nifti_bytes, write_nifti, write_nifti_bytes, DataType};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial grid dimensions `(nx, ny, nz)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims3(pub [usize; 3]);

impl Dims3 {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims3([nx, ny, nz])
    }

    pub fn nx(&self) -> usize {
        self.0[0]
    }

    pub fn ny(&self) -> usize {
        self.0[1]
    }

    pub fn nz(&self) -> usize {
        self.0[2]
    }

    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.0[0] * (y + self.0[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.0[0];
        let y = (idx / self.0[0]) % self.0[1];
        let z = idx / (self.0[0] * self.0[1]);
        [x, y, z]
    }

    /// Index of the voxel displaced by `offset`, if it stays inside the grid.
    #[inline]
    pub fn offset(&self, c: [usize; 3], offset: [isize; 3]) -> Option<usize> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let v = c[a] as isize + offset[a];
            if v < 0 || v >= self.0[a] as isize {
                return None;
            }
            out[a] = v as usize;
        }
        Some(self.index(out[0], out[1], out[2]))
    }
}

/// qform/sform orientation fields, carried through reads and writes untouched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orientation {
    pub qform_code: i16,
    pub sform_code: i16,
    pub qfac: f32,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
}

impl Default for Orientation {
    fn default() -> Self {
        Orientation {
            qform_code: 0,
            sform_code: 0,
            qfac: 1.0,
            quatern: [0.0; 3],
            qoffset: [0.0; 3],
            srow: [[0.0; 4]; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    /// `(nx, ny, nz, nt)`
    pub dims: [usize; 4],
    pub voxel_size_mm: [f64; 3],
    pub tr_seconds: f64,
    pub datatype_code: i16,
    pub scl_slope: f64,
    pub scl_inter: f64,
    pub magic: [u8; 4],
    pub orientation: Orientation,
}

impl VolumeHeader {
    pub fn new(dims: [usize; 4], voxel_size_mm: [f64; 3], tr_seconds: f64) -> Self {
        VolumeHeader {
            dims,
            voxel_size_mm,
            tr_seconds,
            datatype_code: DataType::Float32.code(),
            scl_slope: 1.0,
            scl_inter: 0.0,
            magic: *b"n+1\0",
            orientation: Orientation::default(),
        }
    }

    pub fn spatial(&self) -> Dims3 {
        Dims3([self.dims[0], self.dims[1], self.dims[2]])
    }

    pub fn nt(&self) -> usize {
        self.dims[3]
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Shape(format!("dims must be >= 1, got {:?}", self.dims)));
        }
        if self
            .voxel_size_mm
            .iter()
            .any(|&v| !(v.is_finite() && v > 0.0))
        {
            return Err(Error::Domain(format!(
                "voxel sizes must be positive, got {:?}",
                self.voxel_size_mm
            )));
        }
        if self.dims[3] > 1 && !(self.tr_seconds.is_finite() && self.tr_seconds > 0.0) {
            return Err(Error::Domain(format!(
                "TR must be positive for a time series, got {}",
                self.tr_seconds
            )));
        }
        Ok(())
    }

    /// Same grid, voxel size and TR (the fields that must agree across runs).
    pub fn same_geometry(&self, other: &VolumeHeader) -> bool {
        self.dims == other.dims
            && self.voxel_size_mm == other.voxel_size_mm
            && self.tr_seconds == other.tr_seconds
    }
}

/// A 4-D scalar field with its geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume4D {
    header: VolumeHeader,
    data: Vec<f64>,
}

impl Volume4D {
    pub fn new(header: VolumeHeader, data: Vec<f64>) -> Result<Self> {
        header.validate()?;
        let expected: usize = header.dims.iter().product();
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "data length {} does not match dims {:?} ({} values)",
                data.len(),
                header.dims,
                expected
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite value at linear index {i}")));
        }
        Ok(Volume4D { header, data })
    }

    pub fn zeros(header: VolumeHeader) -> Result<Self> {
        let n = header.dims.iter().product();
        Volume4D::new(header, vec![0.0; n])
    }

    /// Build a volume from one contiguous slab per time point.
    pub fn from_frames(mut header: VolumeHeader, frames: Vec<Vec<f64>>) -> Result<Self> {
        header.dims[3] = frames.len();
        let data = frames.into_iter().flatten().collect();
        Volume4D::new(header, data)
    }

    /// Build a volume from voxel time series (`series[v][t]`).
    pub fn from_series(mut header: VolumeHeader, series: &[Vec<f64>]) -> Result<Self> {
        let nv = header.spatial().len();
        if series.len() != nv {
            return Err(Error::Shape(format!(
                "{} series for {} voxels",
                series.len(),
                nv
            )));
        }
        let nt = series.first().map_or(0, |s| s.len());
        if series.iter().any(|s| s.len() != nt) {
            return Err(Error::Shape("series have unequal lengths".into()));
        }
        header.dims[3] = nt;
        let mut data = vec![0.0; nv * nt];
        for (v, s) in series.iter().enumerate() {
            for (t, &val) in s.iter().enumerate() {
                data[t * nv + v] = val;
            }
        }
        Volume4D::new(header, data)
    }

    pub fn header(&self) -> &VolumeHeader {
        &self.header
    }

    pub fn dims(&self) -> [usize; 4] {
        self.header.dims
    }

    pub fn spatial(&self) -> Dims3 {
        self.header.spatial()
    }

    pub fn nt(&self) -> usize {
        self.header.dims[3]
    }

    pub fn n_voxels(&self) -> usize {
        self.spatial().len()
    }

    pub fn tr(&self) -> f64 {
        self.header.tr_seconds
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        self.header.voxel_size_mm
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let nv = self.n_voxels();
        &self.data[t * nv..(t + 1) * nv]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n_voxels())
    }

    pub fn get(&self, x: usize, y: usize, z: usize, t: usize) -> f64 {
        self.data[t * self.n_voxels() + self.spatial().index(x, y, z)]
    }

    pub fn series(&self, voxel: usize) -> Vec<f64> {
        let nv = self.n_voxels();
        (0..self.nt()).map(|t| self.data[t * nv + voxel]).collect()
    }

    /// All voxel series as an `nt × n_voxels` matrix (one column per voxel).
    pub fn series_matrix(&self) -> DMatrix<f64> {
        let nv = self.n_voxels();
        let nt = self.nt();
        DMatrix::from_fn(nt, nv, |t, v| self.data[t * nv + v])
    }

    /// Replace the data, keeping the header; validated like [`Volume4D::new`].
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Volume4D::new(self.header.clone(), data)
    }

    /// Stack volumes of identical spatial geometry along time.
    pub fn concat_time(vols: &[Volume4D]) -> Result<Self> {
        let first = vols
            .first()
            .ok_or_else(|| Error::EmptySelection("no volumes to concatenate".into()))?;
        for v in &vols[1..] {
            if v.spatial() != first.spatial()
                || v.voxel_size() != first.voxel_size()
                || v.tr() != first.tr()
            {
                return Err(Error::Shape("volumes differ in geometry or TR".into()));
            }
        }
        let mut header = first.header.clone();
        header.dims[3] = vols.iter().map(Volume4D::nt).sum();
        let data = vols.iter().flat_map(|v| v.data.iter().copied()).collect();
        Volume4D::new(header, data)
    }
}

/// Boolean membership over a 3-D grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask3D {
    dims: Dims3,
    members: Vec<bool>,
}

impl Mask3D {
    pub fn new(dims: Dims3, members: Vec<bool>) -> Result<Self> {
        if dims.0.contains(&0) {
            return Err(Error::Shape(format!("mask dims must be >= 1, got {:?}", dims.0)));
        }
        if members.len() != dims.len() {
            return Err(Error::Shape(format!(
                "mask has {} entries for dims {:?}",
                members.len(),
                dims.0
            )));
        }
        Ok(Mask3D { dims, members })
    }

    pub fn empty(dims: Dims3) -> Self {
        Mask3D {
            dims,
            members: vec![false; dims.len()],
        }
    }

    pub fn full(dims: Dims3) -> Self {
        Mask3D {
            dims,
            members: vec![true; dims.len()],
        }
    }

    pub fn from_fn(dims: Dims3, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let members = (0..dims.len())
            .map(|i| {
                let [x, y, z] = dims.coords(i);
                f(x, y, z)
            })
            .collect();
        Mask3D { dims, members }
    }

    pub fn from_indices(dims: Dims3, indices: &[usize]) -> Result<Self> {
        let mut m = Mask3D::empty(dims);
        for &i in indices {
            if i >= dims.len() {
                return Err(Error::OutOfRange(format!("voxel index {i} outside grid")));
            }
            m.members[i] = true;
        }
        Ok(m)
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn members(&self) -> &[bool] {
        &self.members
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.members[idx]
    }

    pub fn set(&mut self, idx: usize, value: bool) {
        self.members[idx] = value;
    }

    pub fn count(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.members.iter().any(|&m| m)
    }

    /// Member voxel indices in scan order.
    pub fn indices(&self) -> Vec<usize> {
        self.members
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    pub fn union(&self, other: &Mask3D) -> Result<Mask3D> {
        self.check_same(other)?;
        let members = self
            .members
            .iter()
            .zip(&other.members)
            .map(|(a, b)| *a || *b)
            .collect();
        Ok(Mask3D {
            dims: self.dims,
            members,
        })
    }

    pub fn intersection(&self, other: &Mask3D) -> Result<Mask3D> {
        self.check_same(other)?;
        let members = self
            .members
            .iter()
            .zip(&other.members)
            .map(|(a, b)| *a && *b)
            .collect();
        Ok(Mask3D {
            dims: self.dims,
            members,
        })
    }

    /// Grow the mask by `radius` steps of 26-connected dilation.
    pub fn dilate(&self, radius: usize) -> Mask3D {
        let mut cur = self.clone();
        for _ in 0..radius {
            let mut next = cur.clone();
            for i in cur.indices() {
                let c = self.dims.coords(i);
                for dz in -1..=1 {
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            if let Some(j) = self.dims.offset(c, [dx, dy, dz]) {
                                next.members[j] = true;
                            }
                        }
                    }
                }
            }
            cur = next;
        }
        cur
    }

    /// Nonzero voxels of the first frame of a volume.
    pub fn from_volume(vol: &Volume4D) -> Mask3D {
        Mask3D {
            dims: vol.spatial(),
            members: vol.frame(0).iter().map(|&v| v != 0.0).collect(),
        }
    }

    /// Encode as a single-frame 0/1 volume.
    pub fn to_volume(&self, voxel_size_mm: [f64; 3]) -> Result<Volume4D> {
        let header = VolumeHeader::new(
            [self.dims.nx(), self.dims.ny(), self.dims.nz(), 1],
            voxel_size_mm,
            0.0,
        );
        let data = self.members.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        Volume4D::new(header, data)
    }

    fn check_same(&self, other: &Mask3D) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "mask dims {:?} vs {:?}",
                self.dims.0, other.dims.0
            )));
        }
        Ok(())
    }
}

/// A single 3-D scalar map (statistics, correlations).
#[derive(Debug, Clone, PartialEq)]
pub struct Map3D {
    pub dims: Dims3,
    pub data: Vec<f64>,
}

impl Map3D {
    pub fn new(dims: Dims3, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::Shape(format!(
                "map has {} values for dims {:?}",
                data.len(),
                dims.0
            )));
        }
        Ok(Map3D { dims, data })
    }

    /// Export as a single-frame volume; non-finite entries are written as `fill`.
    pub fn to_volume(&self, voxel_size_mm: [f64; 3], fill: f64) -> Result<Volume4D> {
        let header = VolumeHeader::new(
            [self.dims.nx(), self.dims.ny(), self.dims.nz(), 1],
            voxel_size_mm,
            0.0,
        );
        let data = self
            .data
            .iter()
            .map(|&v| if v.is_finite() { v } else { fill })
            .collect();
        Volume4D::new(header, data)
    }
}

/// Time series of every masked voxel, as an `nt × n_roi_voxels` matrix.
///
/// Columns follow scan order of the mask.
pub fn extract_roi_series(vol: &Volume4D, mask: &Mask3D) -> Result<DMatrix<f64>> {
    if mask.dims() != vol.spatial() {
        return Err(Error::Shape(format!(
            "mask dims {:?} do not match volume dims {:?}",
            mask.dims().0,
            vol.spatial().0
        )));
    }
    let idx = mask.indices();
    if idx.is_empty() {
        return Err(Error::EmptySelection("mask selects no voxels".into()));
    }
    let nv = vol.n_voxels();
    let data = vol.data();
    Ok(DMatrix::from_fn(vol.nt(), idx.len(), |t, j| {
        data[t * nv + idx[j]]
    }))
}
