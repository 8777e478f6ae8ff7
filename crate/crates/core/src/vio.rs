//! Reading and writing the VVL1 container, a little-endian binary format for
//! volumes, atlases and masks.
//!
//! Layout:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "VVL1"
//! 4       1     dtype: 1 = f32 volume, 2 = u16 atlas, 3 = u8 mask
//! 5       12    dims nx, ny, nz as u32
//! 17      12    spacing sx, sy, sz as f32 (millimetres)
//! 29      11    reserved, written as zeros
//! 40      ...   payload: raw values in canonical order (x fastest)
//! ```
//!
//! Atlas files append a name table after the payload: a u32 record count,
//! then per record a u16 label id, a u32 byte length and that many bytes of
//! UTF-8, with records in ascending label order. Masks store one byte per
//! voxel, 0 or 1. Readers validate everything a constructor would: finite
//! intensities, named labels, nonzero dims, positive spacing, and reject
//! files with missing or surplus bytes.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::volume::{AtlasLabelMap, BinaryMask, Dims, Spacing, Volume, VolumeError};

pub const MAGIC: [u8; 4] = *b"VVL1";
pub const HEADER_LEN: usize = 40;

const DTYPE_VOLUME: u8 = 1;
const DTYPE_ATLAS: u8 = 2;
const DTYPE_MASK: u8 = 3;

#[derive(Debug, Error)]
pub enum VioError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}, expected \"VVL1\"")]
    BadMagic([u8; 4]),
    #[error("unknown dtype {0}")]
    BadDtype(u8),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("truncated payload: expected {expected} bytes, got {got}")]
    TruncatedPayload { expected: usize, got: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("non-finite value at voxel {0}")]
    NonFiniteData(usize),
    #[error("mask byte at voxel {index} is {value}, expected 0 or 1")]
    InvalidMaskValue { index: usize, value: u8 },
    #[error("bad name table: {0}")]
    BadNameTable(String),
    #[error(transparent)]
    Invalid(#[from] VolumeError),
    #[error("file holds a {got}, expected a {expected}")]
    UnexpectedKind { expected: &'static str, got: &'static str },
}

pub type Result<T> = std::result::Result<T, VioError>;

/// Any object a VVL1 file can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum VvlObject {
    Volume(Volume),
    Atlas { atlas: AtlasLabelMap, spacing: Spacing },
    Mask { mask: BinaryMask, spacing: Spacing },
}

impl VvlObject {
    pub fn kind(&self) -> &'static str {
        match self {
            VvlObject::Volume(_) => "volume",
            VvlObject::Atlas { .. } => "atlas",
            VvlObject::Mask { .. } => "mask",
        }
    }
}

fn check_spacing(s: Spacing) -> Result<()> {
    let ok = |v: f32| v.is_finite() && v > 0.0;
    if ok(s.0) && ok(s.1) && ok(s.2) {
        Ok(())
    } else {
        Err(VioError::InvalidHeader(format!("spacing must be finite and positive, got ({}, {}, {})", s.0, s.1, s.2)))
    }
}

fn header(dtype: u8, dims: Dims, spacing: Spacing) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(&MAGIC);
    out.push(dtype);
    for d in [dims.nx, dims.ny, dims.nz] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in [spacing.0, spacing.1, spacing.2] {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.resize(HEADER_LEN, 0);
    out
}

pub fn encode_volume(volume: &Volume) -> Vec<u8> {
    let mut out = header(DTYPE_VOLUME, volume.dims(), volume.spacing());
    for v in volume.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_atlas(atlas: &AtlasLabelMap, spacing: Spacing) -> Result<Vec<u8>> {
    check_spacing(spacing)?;
    let mut out = header(DTYPE_ATLAS, atlas.dims(), spacing);
    for l in atlas.labels() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    let names = atlas.label_names();
    out.extend_from_slice(&(names.len() as u32).to_le_bytes());
    for (&label, name) in names {
        out.extend_from_slice(&label.to_le_bytes());
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    Ok(out)
}

pub fn encode_mask(mask: &BinaryMask, spacing: Spacing) -> Result<Vec<u8>> {
    check_spacing(spacing)?;
    let mut out = header(DTYPE_MASK, mask.dims(), spacing);
    out.extend(mask.bits().iter().map(|&b| b as u8));
    Ok(out)
}

pub fn encode(object: &VvlObject) -> Result<Vec<u8>> {
    match object {
        VvlObject::Volume(v) => Ok(encode_volume(v)),
        VvlObject::Atlas { atlas, spacing } => encode_atlas(atlas, *spacing),
        VvlObject::Mask { mask, spacing } => encode_mask(mask, *spacing),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, expected_total: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(VioError::TruncatedPayload { expected: expected_total, got: self.bytes.len() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16_le(&mut self, expected_total: usize) -> Result<u16> {
        let b = self.take(2, expected_total)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32_le(&mut self, expected_total: usize) -> Result<u32> {
        let b = self.take(4, expected_total)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<VvlObject> {
    if bytes.len() < 4 {
        let mut m = [0u8; 4];
        m[..bytes.len()].copy_from_slice(bytes);
        return Err(VioError::BadMagic(m));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(VioError::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(VioError::TruncatedPayload { expected: HEADER_LEN, got: bytes.len() });
    }
    let dtype = bytes[4];
    let rd_u32 = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let rd_f32 = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let (nx, ny, nz) = (rd_u32(5) as usize, rd_u32(9) as usize, rd_u32(13) as usize);
    let dims = Dims::new(nx, ny, nz)
        .map_err(|_| VioError::InvalidHeader(format!("dims must all be at least 1, got {nx}x{ny}x{nz}")))?;
    let spacing = (rd_f32(17), rd_f32(21), rd_f32(25));
    check_spacing(spacing)?;

    let n = dims.voxel_count();
    let payload = &bytes[HEADER_LEN..];
    match dtype {
        DTYPE_VOLUME => {
            let expected = HEADER_LEN + 4 * n;
            if payload.len() < 4 * n {
                return Err(VioError::TruncatedPayload { expected, got: bytes.len() });
            }
            if payload.len() > 4 * n {
                return Err(VioError::TrailingBytes(payload.len() - 4 * n));
            }
            let mut data = Vec::with_capacity(n);
            for i in 0..n {
                let v = f32::from_le_bytes(payload[4 * i..4 * i + 4].try_into().unwrap());
                if !v.is_finite() {
                    return Err(VioError::NonFiniteData(i));
                }
                data.push(v);
            }
            Ok(VvlObject::Volume(Volume::new(dims, spacing, data)?))
        }
        DTYPE_ATLAS => {
            // Minimum size: labels plus the record-count word.
            let min_expected = HEADER_LEN + 2 * n + 4;
            if bytes.len() < min_expected {
                return Err(VioError::TruncatedPayload { expected: min_expected, got: bytes.len() });
            }
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                labels.push(u16::from_le_bytes(payload[2 * i..2 * i + 2].try_into().unwrap()));
            }
            let mut cur = Cursor { bytes, pos: HEADER_LEN + 2 * n };
            let count = cur.u32_le(min_expected)? as usize;
            let mut names = BTreeMap::new();
            let mut prev: Option<u16> = None;
            for _ in 0..count {
                let expected = cur.pos + 6;
                let label = cur.u16_le(expected)?;
                let len = cur.u32_le(expected)? as usize;
                let expected = cur.pos + len;
                let raw = cur.take(len, expected)?;
                let name = std::str::from_utf8(raw)
                    .map_err(|_| VioError::BadNameTable(format!("name for label {label} is not valid UTF-8")))?;
                if let Some(p) = prev {
                    if label <= p {
                        return Err(VioError::BadNameTable(format!(
                            "labels out of order: {label} after {p}"
                        )));
                    }
                }
                prev = Some(label);
                names.insert(label, name.to_string());
            }
            if cur.pos < bytes.len() {
                return Err(VioError::TrailingBytes(bytes.len() - cur.pos));
            }
            let atlas = AtlasLabelMap::new(dims, labels, names)?;
            Ok(VvlObject::Atlas { atlas, spacing })
        }
        DTYPE_MASK => {
            let expected = HEADER_LEN + n;
            if payload.len() < n {
                return Err(VioError::TruncatedPayload { expected, got: bytes.len() });
            }
            if payload.len() > n {
                return Err(VioError::TrailingBytes(payload.len() - n));
            }
            let mut bits = Vec::with_capacity(n);
            for (i, &b) in payload.iter().enumerate() {
                match b {
                    0 => bits.push(false),
                    1 => bits.push(true),
                    v => return Err(VioError::InvalidMaskValue { index: i, value: v }),
                }
            }
            Ok(VvlObject::Mask { mask: BinaryMask::from_bits(dims, bits)?, spacing })
        }
        other => Err(VioError::BadDtype(other)),
    }
}

pub fn write_volume(path: impl AsRef<Path>, volume: &Volume) -> Result<()> {
    std::fs::write(path, encode_volume(volume))?;
    Ok(())
}

pub fn write_atlas(path: impl AsRef<Path>, atlas: &AtlasLabelMap, spacing: Spacing) -> Result<()> {
    std::fs::write(path, encode_atlas(atlas, spacing)?)?;
    Ok(())
}

pub fn write_mask(path: impl AsRef<Path>, mask: &BinaryMask, spacing: Spacing) -> Result<()> {
    std::fs::write(path, encode_mask(mask, spacing)?)?;
    Ok(())
}

pub fn write(path: impl AsRef<Path>, object: &VvlObject) -> Result<()> {
    std::fs::write(path, encode(object)?)?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<VvlObject> {
    decode(&std::fs::read(path)?)
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    match read(path)? {
        VvlObject::Volume(v) => Ok(v),
        other => Err(VioError::UnexpectedKind { expected: "volume", got: other.kind() }),
    }
}

pub fn read_atlas(path: impl AsRef<Path>) -> Result<(AtlasLabelMap, Spacing)> {
    match read(path)? {
        VvlObject::Atlas { atlas, spacing } => Ok((atlas, spacing)),
        other => Err(VioError::UnexpectedKind { expected: "atlas", got: other.kind() }),
    }
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<(BinaryMask, Spacing)> {
    match read(path)? {
        VvlObject::Mask { mask, spacing } => Ok((mask, spacing)),
        other => Err(VioError::UnexpectedKind { expected: "mask", got: other.kind() }),
    }
}
