//! Single-file NIfTI-1 (`.nii`, `.nii.gz`) codec.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{Orientation, Volume4D, VolumeHeader};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
const MAGIC_PAIR: &[u8; 4] = b"ni1\0";

/// Voxel datatypes accepted on read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    Uint8,
    Int16,
    Int32,
    Float32,
    Float64,
}

impl DataType {
    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(DataType::Uint8),
            4 => Ok(DataType::Int16),
            8 => Ok(DataType::Int32),
            16 => Ok(DataType::Float32),
            64 => Ok(DataType::Float64),
            other => Err(Error::UnsupportedType(other)),
        }
    }

    pub fn code(self) -> i16 {
        match self {
            DataType::Uint8 => 2,
            DataType::Int16 => 4,
            DataType::Int32 => 8,
            DataType::Float32 => 16,
            DataType::Float64 => 64,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DataType::Uint8 => 1,
            DataType::Int16 => 2,
            DataType::Int32 | DataType::Float32 => 4,
            DataType::Float64 => 8,
        }
    }
}

#[derive(Clone, Copy)]
struct Endian {
    little: bool,
}

impl Endian {
    fn bytes<const N: usize>(&self, buf: &[u8], off: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&buf[off..off + N]);
        b
    }

    fn i16(&self, buf: &[u8], off: usize) -> i16 {
        let b = self.bytes::<2>(buf, off);
        if self.little {
            i16::from_le_bytes(b)
        } else {
            i16::from_be_bytes(b)
        }
    }

    fn i32(&self, buf: &[u8], off: usize) -> i32 {
        let b = self.bytes::<4>(buf, off);
        if self.little {
            i32::from_le_bytes(b)
        } else {
            i32::from_be_bytes(b)
        }
    }

    fn f32(&self, buf: &[u8], off: usize) -> f32 {
        let b = self.bytes::<4>(buf, off);
        if self.little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        }
    }

    fn f64(&self, buf: &[u8], off: usize) -> f64 {
        let b = self.bytes::<8>(buf, off);
        if self.little {
            f64::from_le_bytes(b)
        } else {
            f64::from_be_bytes(b)
        }
    }
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

/// Read a `.nii` or `.nii.gz` file (gzip detected from the leading bytes).
pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume4D> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_nifti_bytes(&bytes)
}

/// Decode an in-memory NIfTI-1 image, applying `scl_slope`/`scl_inter`.
pub fn read_nifti_bytes(bytes: &[u8]) -> Result<Volume4D> {
    if is_gzip(bytes) {
        let mut raw = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut raw)
            .map_err(|e| Error::Format(format!("gzip stream: {e}")))?;
        decode(&raw)
    } else {
        decode(bytes)
    }
}

fn decode(buf: &[u8]) -> Result<Volume4D> {
    if buf.len() < HEADER_SIZE {
        return Err(Error::Format(format!(
            "file has {} bytes, header needs {HEADER_SIZE}",
            buf.len()
        )));
    }
    let le = i32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]);
    let be = i32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]);
    let end = if le == HEADER_SIZE as i32 {
        Endian { little: true }
    } else if be == HEADER_SIZE as i32 {
        Endian { little: false }
    } else {
        return Err(Error::Format(format!("sizeof_hdr is {le}, expected 348")));
    };

    let magic: [u8; 4] = buf[344..348].try_into().unwrap();
    if &magic == MAGIC_PAIR {
        return Err(Error::Format(
            "header/image pair (ni1) files are not supported".into(),
        ));
    }
    if &magic != MAGIC_SINGLE {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }

    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = end.i16(buf, 40 + 2 * i);
    }
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::Format(format!("dim[0] = {ndim} out of range")));
    }
    let mut dims = [1usize; 4];
    for i in 1..=ndim as usize {
        let d = dim[i];
        if d < 1 {
            return Err(Error::Format(format!("dim[{i}] = {d}")));
        }
        if i <= 4 {
            dims[i - 1] = d as usize;
        } else if d != 1 {
            return Err(Error::Format(format!(
                "dimension {i} has extent {d}; at most 4 dimensions are supported"
            )));
        }
    }

    let datatype_code = end.i16(buf, 70);
    let dtype = DataType::from_code(datatype_code)?;

    let mut pixdim = [0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = end.f32(buf, 76 + 4 * i);
    }
    let vox_offset = end.f32(buf, 108);
    let scl_slope = end.f32(buf, 112) as f64;
    let scl_inter = end.f32(buf, 116) as f64;
    let xyzt_units = buf[123];

    let space_scale = match xyzt_units & 0x07 {
        1 => 1000.0,
        3 => 0.001,
        _ => 1.0,
    };
    let time_scale = match xyzt_units & 0x38 {
        16 => 1e-3,
        24 => 1e-6,
        _ => 1.0,
    };
    let mut voxel_size_mm = [0f64; 3];
    for a in 0..3 {
        let p = (pixdim[a + 1] as f64).abs() * space_scale;
        voxel_size_mm[a] = if p > 0.0 && p.is_finite() { p } else { 1.0 };
    }
    let tr_seconds = (pixdim[4] as f64) * time_scale;

    let orientation = Orientation {
        qform_code: end.i16(buf, 252),
        sform_code: end.i16(buf, 254),
        qfac: pixdim[0],
        quatern: [end.f32(buf, 256), end.f32(buf, 260), end.f32(buf, 264)],
        qoffset: [end.f32(buf, 268), end.f32(buf, 272), end.f32(buf, 276)],
        srow: std::array::from_fn(|r| std::array::from_fn(|c| end.f32(buf, 280 + 16 * r + 4 * c))),
    };

    if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32) {
        return Err(Error::Format(format!("vox_offset {vox_offset} invalid")));
    }
    let offset = vox_offset as usize;
    let count: usize = dims.iter().product();
    let needed = count * dtype.size();
    let available = buf.len().saturating_sub(offset);
    if available < needed {
        return Err(Error::Truncated {
            expected: needed,
            found: available,
        });
    }
    let raw = &buf[offset..offset + needed];
    let slope = if scl_slope == 0.0 || !scl_slope.is_finite() {
        1.0
    } else {
        scl_slope
    };
    let inter = if scl_inter.is_finite() { scl_inter } else { 0.0 };

    let sz = dtype.size();
    let data: Vec<f64> = (0..count)
        .map(|i| {
            let o = i * sz;
            let r = match dtype {
                DataType::Uint8 => raw[o] as f64,
                DataType::Int16 => end.i16(raw, o) as f64,
                DataType::Int32 => end.i32(raw, o) as f64,
                DataType::Float32 => end.f32(raw, o) as f64,
                DataType::Float64 => end.f64(raw, o),
            };
            if slope == 1.0 && inter == 0.0 {
                r
            } else {
                r * slope + inter
            }
        })
        .collect();

    let header = VolumeHeader {
        dims,
        voxel_size_mm,
        tr_seconds: if dims[3] > 1 || tr_seconds > 0.0 {
            tr_seconds
        } else {
            0.0
        },
        datatype_code,
        scl_slope,
        scl_inter,
        magic,
        orientation,
    };
    Volume4D::new(header, data)
}

/// Encode as little-endian float32 NIfTI-1 with data at byte 352.
pub fn write_nifti_bytes(vol: &Volume4D) -> Result<Vec<u8>> {
    let h = vol.header();
    h.validate()?;
    let mut buf = vec![0u8; VOX_OFFSET];
    let put_i16 = |b: &mut [u8], off: usize, v: i16| b[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_i32 = |b: &mut [u8], off: usize, v: i32| b[off..off + 4].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |b: &mut [u8], off: usize, v: f32| b[off..off + 4].copy_from_slice(&v.to_le_bytes());

    put_i32(&mut buf, 0, HEADER_SIZE as i32);
    buf[38] = b'r';
    let dims = h.dims;
    put_i16(&mut buf, 40, 4);
    for (i, &d) in dims.iter().enumerate() {
        let d = i16::try_from(d)
            .map_err(|_| Error::OutOfRange(format!("dimension {d} exceeds NIfTI-1 limit")))?;
        put_i16(&mut buf, 42 + 2 * i, d);
    }
    for i in 5..8 {
        put_i16(&mut buf, 40 + 2 * i, 1);
    }
    put_i16(&mut buf, 70, DataType::Float32.code());
    put_i16(&mut buf, 72, 32);

    let o = &h.orientation;
    put_f32(&mut buf, 76, if o.qfac == -1.0 { -1.0 } else { 1.0 });
    for a in 0..3 {
        put_f32(&mut buf, 80 + 4 * a, h.voxel_size_mm[a] as f32);
    }
    put_f32(&mut buf, 92, h.tr_seconds as f32);
    for i in 5..8 {
        put_f32(&mut buf, 76 + 4 * i, 1.0);
    }
    put_f32(&mut buf, 108, VOX_OFFSET as f32);
    put_f32(&mut buf, 112, 1.0);
    put_f32(&mut buf, 116, 0.0);
    // mm + seconds
    buf[123] = 2 | 8;

    put_i16(&mut buf, 252, o.qform_code);
    put_i16(&mut buf, 254, o.sform_code);
    for k in 0..3 {
        put_f32(&mut buf, 256 + 4 * k, o.quatern[k]);
        put_f32(&mut buf, 268 + 4 * k, o.qoffset[k]);
    }
    for r in 0..3 {
        for c in 0..4 {
            put_f32(&mut buf, 280 + 16 * r + 4 * c, o.srow[r][c]);
        }
    }
    buf[344..348].copy_from_slice(MAGIC_SINGLE);
    // bytes 348..352: extension flag, all zero

    buf.reserve(vol.data().len() * 4);
    for &v in vol.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(buf)
}

/// Write `vol` to `path`; a `.gz` suffix selects gzip compression.
pub fn write_nifti(vol: &Volume4D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_nifti_bytes(vol)?;
    let gz = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    let out = if gz {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes
    };
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
