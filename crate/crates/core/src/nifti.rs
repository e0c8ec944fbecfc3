//! Single-file NIfTI-1 reader and writer.
//!
//! Only the `n+1` layout (header, 4-byte extension flag, voxel data in one
//! file) is accepted for volumes. Either byte order is read; files are always
//! written little-endian unless [`encode_volume`] is asked otherwise. A gzip
//! member is detected by its `1f 8b` prefix and decompressed transparently.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::volume::{Affine, BinaryMask, Grid, Volume3D, VolumeError};

pub const HEADER_SIZE: usize = 348;
pub const NIFTI2_HEADER_SIZE: i32 = 540;
/// Header plus the four-byte extension flag.
pub const MIN_VOX_OFFSET: usize = 352;

const MAGIC_SINGLE: [u8; 4] = *b"n+1\0";
const MAGIC_PAIR: [u8; 4] = *b"ni1\0";

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("input too short: {len} bytes, need at least {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("sizeof_hdr is {0} in both byte orders, expected 348")]
    BadHeaderSize(i32),
    #[error("NIfTI-2 headers are not supported")]
    Nifti2Unsupported,
    #[error("bad magic {0:?}, expected \"n+1\\0\" or \"ni1\\0\"")]
    BadMagic([u8; 4]),
    #[error("dual-file (.hdr/.img) NIfTI is not supported; convert to single-file .nii")]
    DualFileUnsupported,
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("bitpix {bitpix} inconsistent with datatype code {datatype} ({expected} bits)")]
    InconsistentBitpix {
        datatype: i16,
        bitpix: i16,
        expected: i16,
    },
    #[error("unsupported dimensions {0:?}: need a 3D volume (or 4D with one volume)")]
    UnsupportedRank([i16; 8]),
    #[error("vox_offset {0} is below the minimum of 352 for single-file NIfTI")]
    BadVoxOffset(f32),
    #[error("truncated voxel data: have {have} bytes, need {need}")]
    TruncatedData { have: usize, need: usize },
    #[error("value {value} at voxel {index} is not representable as {datatype:?}")]
    RangeOverflow {
        value: f64,
        index: usize,
        datatype: Datatype,
    },
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endianness {
    Little,
    Big,
}

/// Supported voxel storage types, keyed by their NIfTI datatype code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Datatype {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl Datatype {
    pub const ALL: [Datatype; 5] = [
        Datatype::U8,
        Datatype::I16,
        Datatype::I32,
        Datatype::F32,
        Datatype::F64,
    ];

    pub fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::I32 => 8,
            Datatype::F32 => 16,
            Datatype::F64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Result<Self, NiftiError> {
        match code {
            2 => Ok(Datatype::U8),
            4 => Ok(Datatype::I16),
            8 => Ok(Datatype::I32),
            16 => Ok(Datatype::F32),
            64 => Ok(Datatype::F64),
            other => Err(NiftiError::UnsupportedDatatype(other)),
        }
    }

    pub fn bitpix(self) -> i16 {
        (self.byte_size() * 8) as i16
    }

    pub fn byte_size(self) -> usize {
        match self {
            Datatype::U8 => 1,
            Datatype::I16 => 2,
            Datatype::I32 | Datatype::F32 => 4,
            Datatype::F64 => 8,
        }
    }

    /// Whether `v` survives a store/load cycle in this type.
    pub fn can_represent(self, v: f64) -> bool {
        let integral = |lo: f64, hi: f64| v.fract() == 0.0 && v >= lo && v <= hi;
        match self {
            Datatype::U8 => integral(0.0, u8::MAX as f64),
            Datatype::I16 => integral(i16::MIN as f64, i16::MAX as f64),
            Datatype::I32 => integral(i32::MIN as f64, i32::MAX as f64),
            Datatype::F32 => !v.is_finite() || v.abs() <= f32::MAX as f64,
            Datatype::F64 => true,
        }
    }
}

impl std::str::FromStr for Datatype {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "u8" | "uint8" => Ok(Datatype::U8),
            "i16" | "int16" => Ok(Datatype::I16),
            "i32" | "int32" => Ok(Datatype::I32),
            "f32" | "float32" => Ok(Datatype::F32),
            "f64" | "float64" => Ok(Datatype::F64),
            other => Err(format!("unknown datatype '{other}'")),
        }
    }
}

/// Decoded NIfTI-1 header. Fields keep their on-disk types.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub sizeof_hdr: i32,
    pub dim_info: u8,
    pub dim: [i16; 8],
    pub intent_p: [f32; 3],
    pub intent_code: i16,
    pub datatype_code: i16,
    pub bitpix: i16,
    pub slice_start: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub slice_end: i16,
    pub slice_code: u8,
    pub xyzt_units: u8,
    pub cal_max: f32,
    pub cal_min: f32,
    pub slice_duration: f32,
    pub toffset: f32,
    pub descrip: [u8; 80],
    pub aux_file: [u8; 24],
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow_x: [f32; 4],
    pub srow_y: [f32; 4],
    pub srow_z: [f32; 4],
    pub intent_name: [u8; 16],
    pub magic: [u8; 4],
    pub endianness: Endianness,
}

impl Default for NiftiHeader {
    fn default() -> Self {
        Self {
            sizeof_hdr: HEADER_SIZE as i32,
            dim_info: 0,
            dim: [3, 1, 1, 1, 1, 1, 1, 1],
            intent_p: [0.0; 3],
            intent_code: 0,
            datatype_code: Datatype::U8.code(),
            bitpix: Datatype::U8.bitpix(),
            slice_start: 0,
            pixdim: [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            vox_offset: MIN_VOX_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            slice_end: 0,
            slice_code: 0,
            xyzt_units: 2,
            cal_max: 0.0,
            cal_min: 0.0,
            slice_duration: 0.0,
            toffset: 0.0,
            descrip: [0; 80],
            aux_file: [0; 24],
            qform_code: 0,
            sform_code: 0,
            quatern: [0.0; 3],
            qoffset: [0.0; 3],
            srow_x: [1.0, 0.0, 0.0, 0.0],
            srow_y: [0.0, 1.0, 0.0, 0.0],
            srow_z: [0.0, 0.0, 1.0, 0.0],
            intent_name: [0; 16],
            magic: MAGIC_SINGLE,
            endianness: Endianness::Little,
        }
    }
}

impl NiftiHeader {
    pub fn datatype(&self) -> Result<Datatype, NiftiError> {
        Datatype::from_code(self.datatype_code)
    }

    pub fn is_single_file(&self) -> bool {
        self.magic == MAGIC_SINGLE
    }

    /// Grid extents, accepting rank 3 or rank 4 with a single volume.
    pub fn volume_dims(&self) -> Result<[usize; 3], NiftiError> {
        let d = self.dim;
        let rank_ok = d[0] == 3 || (d[0] == 4 && d[4] == 1);
        if !rank_ok || d[1] < 1 || d[2] < 1 || d[3] < 1 {
            return Err(NiftiError::UnsupportedRank(d));
        }
        Ok([d[1] as usize, d[2] as usize, d[3] as usize])
    }

    pub fn spacing(&self) -> [f64; 3] {
        [
            self.pixdim[1] as f64,
            self.pixdim[2] as f64,
            self.pixdim[3] as f64,
        ]
    }

    /// sform when `sform_code > 0`, else the quaternion qform when
    /// `qform_code > 0`, else a diagonal spacing matrix.
    pub fn affine(&self) -> Affine {
        if self.sform_code > 0 {
            let row = |r: [f32; 4]| r.map(f64::from);
            return [row(self.srow_x), row(self.srow_y), row(self.srow_z)];
        }
        let [dx, dy, dz] = self.spacing();
        if self.qform_code > 0 {
            return self.qform_affine();
        }
        [
            [dx, 0.0, 0.0, 0.0],
            [0.0, dy, 0.0, 0.0],
            [0.0, 0.0, dz, 0.0],
        ]
    }

    fn qform_affine(&self) -> Affine {
        let [b, c, d] = self.quatern.map(f64::from);
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let qfac = if self.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let [dx, dy, dz] = self.spacing();
        let dz = dz * qfac;
        let r = [
            [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
            [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
            [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ];
        let off = self.qoffset.map(f64::from);
        let mut out = [[0.0; 4]; 3];
        for i in 0..3 {
            out[i] = [r[i][0] * dx, r[i][1] * dy, r[i][2] * dz, off[i]];
        }
        out
    }

    fn validate(&self) -> Result<(), NiftiError> {
        let datatype = self.datatype()?;
        if self.bitpix != datatype.bitpix() {
            return Err(NiftiError::InconsistentBitpix {
                datatype: self.datatype_code,
                bitpix: self.bitpix,
                expected: datatype.bitpix(),
            });
        }
        if self.dim[0] < 1 || self.dim[0] > 7 {
            return Err(NiftiError::UnsupportedRank(self.dim));
        }
        if self.is_single_file() && (self.vox_offset as f64) < MIN_VOX_OFFSET as f64 {
            return Err(NiftiError::BadVoxOffset(self.vox_offset));
        }
        Ok(())
    }

    /// Serialises the 348 header bytes in the given byte order.
    pub fn to_bytes(&self, endianness: Endianness) -> [u8; HEADER_SIZE] {
        let mut w = FieldWriter {
            buf: [0u8; HEADER_SIZE],
            pos: 0,
            big: endianness == Endianness::Big,
        };
        w.i32(self.sizeof_hdr);
        w.skip(10 + 18 + 4 + 2);
        w.bytes(b"r");
        w.bytes(&[self.dim_info]);
        self.dim.iter().for_each(|&v| w.i16(v));
        self.intent_p.iter().for_each(|&v| w.f32(v));
        w.i16(self.intent_code);
        w.i16(self.datatype_code);
        w.i16(self.bitpix);
        w.i16(self.slice_start);
        self.pixdim.iter().for_each(|&v| w.f32(v));
        w.f32(self.vox_offset);
        w.f32(self.scl_slope);
        w.f32(self.scl_inter);
        w.i16(self.slice_end);
        w.bytes(&[self.slice_code, self.xyzt_units]);
        w.f32(self.cal_max);
        w.f32(self.cal_min);
        w.f32(self.slice_duration);
        w.f32(self.toffset);
        w.skip(8); // glmax, glmin
        w.bytes(&self.descrip);
        w.bytes(&self.aux_file);
        w.i16(self.qform_code);
        w.i16(self.sform_code);
        self.quatern.iter().for_each(|&v| w.f32(v));
        self.qoffset.iter().for_each(|&v| w.f32(v));
        for row in [self.srow_x, self.srow_y, self.srow_z] {
            row.iter().for_each(|&v| w.f32(v));
        }
        w.bytes(&self.intent_name);
        w.bytes(&self.magic);
        debug_assert_eq!(w.pos, HEADER_SIZE);
        w.buf
    }
}

struct FieldReader<'a> {
    buf: &'a [u8],
    pos: usize,
    big: bool,
}

impl FieldReader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut out = [0u8; N];
        out.copy_from_slice(&self.buf[self.pos..self.pos + N]);
        self.pos += N;
        out
    }

    fn skip(&mut self, n: usize) {
        self.pos += n;
    }

    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }

    fn i16(&mut self) -> i16 {
        let b = self.take();
        if self.big {
            i16::from_be_bytes(b)
        } else {
            i16::from_le_bytes(b)
        }
    }

    fn i32(&mut self) -> i32 {
        let b = self.take();
        if self.big {
            i32::from_be_bytes(b)
        } else {
            i32::from_le_bytes(b)
        }
    }

    fn f32(&mut self) -> f32 {
        let b = self.take();
        if self.big {
            f32::from_be_bytes(b)
        } else {
            f32::from_le_bytes(b)
        }
    }

    fn i16s<const N: usize>(&mut self) -> [i16; N] {
        std::array::from_fn(|_| self.i16())
    }

    fn f32s<const N: usize>(&mut self) -> [f32; N] {
        std::array::from_fn(|_| self.f32())
    }
}

struct FieldWriter {
    buf: [u8; HEADER_SIZE],
    pos: usize,
    big: bool,
}

impl FieldWriter {
    fn bytes(&mut self, b: &[u8]) {
        self.buf[self.pos..self.pos + b.len()].copy_from_slice(b);
        self.pos += b.len();
    }

    fn skip(&mut self, n: usize) {
        self.pos += n;
    }

    fn i16(&mut self, v: i16) {
        let b = if self.big { v.to_be_bytes() } else { v.to_le_bytes() };
        self.bytes(&b);
    }

    fn i32(&mut self, v: i32) {
        let b = if self.big { v.to_be_bytes() } else { v.to_le_bytes() };
        self.bytes(&b);
    }

    fn f32(&mut self, v: f32) {
        let b = if self.big { v.to_be_bytes() } else { v.to_le_bytes() };
        self.bytes(&b);
    }
}

/// Decodes a NIfTI-1 header, detecting byte order from `sizeof_hdr`.
pub fn parse_header(bytes: &[u8]) -> Result<NiftiHeader, NiftiError> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::TooShort {
            len: bytes.len(),
            needed: HEADER_SIZE,
        });
    }
    let raw: [u8; 4] = bytes[0..4].try_into().expect("length checked");
    let le = i32::from_le_bytes(raw);
    let be = i32::from_be_bytes(raw);
    let endianness = if le == HEADER_SIZE as i32 {
        Endianness::Little
    } else if be == HEADER_SIZE as i32 {
        Endianness::Big
    } else if le == NIFTI2_HEADER_SIZE || be == NIFTI2_HEADER_SIZE {
        return Err(NiftiError::Nifti2Unsupported);
    } else {
        return Err(NiftiError::BadHeaderSize(le));
    };

    let mut r = FieldReader {
        buf: bytes,
        pos: 0,
        big: endianness == Endianness::Big,
    };
    let sizeof_hdr = r.i32();
    r.skip(10 + 18 + 4 + 2 + 1); // data_type, db_name, extents, session_error, regular
    let dim_info = r.u8();
    let dim = r.i16s::<8>();
    let intent_p = r.f32s::<3>();
    let intent_code = r.i16();
    let datatype_code = r.i16();
    let bitpix = r.i16();
    let slice_start = r.i16();
    let pixdim = r.f32s::<8>();
    let vox_offset = r.f32();
    let scl_slope = r.f32();
    let scl_inter = r.f32();
    let slice_end = r.i16();
    let slice_code = r.u8();
    let xyzt_units = r.u8();
    let cal_max = r.f32();
    let cal_min = r.f32();
    let slice_duration = r.f32();
    let toffset = r.f32();
    r.skip(8);
    let descrip = r.take::<80>();
    let aux_file = r.take::<24>();
    let qform_code = r.i16();
    let sform_code = r.i16();
    let quatern = r.f32s::<3>();
    let qoffset = r.f32s::<3>();
    let srow_x = r.f32s::<4>();
    let srow_y = r.f32s::<4>();
    let srow_z = r.f32s::<4>();
    let intent_name = r.take::<16>();
    let magic = r.take::<4>();

    if magic != MAGIC_SINGLE && magic != MAGIC_PAIR {
        return Err(NiftiError::BadMagic(magic));
    }

    let header = NiftiHeader {
        sizeof_hdr,
        dim_info,
        dim,
        intent_p,
        intent_code,
        datatype_code,
        bitpix,
        slice_start,
        pixdim,
        vox_offset,
        scl_slope,
        scl_inter,
        slice_end,
        slice_code,
        xyzt_units,
        cal_max,
        cal_min,
        slice_duration,
        toffset,
        descrip,
        aux_file,
        qform_code,
        sform_code,
        quatern,
        qoffset,
        srow_x,
        srow_y,
        srow_z,
        intent_name,
        magic,
        endianness,
    };
    header.validate()?;
    Ok(header)
}

/// How stored values become voxel values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadMode {
    /// Nonzero stored value -> 1, else 0. Scaling fields are ignored.
    Mask,
    /// `stored * scl_slope + scl_inter`, with a zero slope read as 1.
    Intensity,
}

pub fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

fn io_err(path: &Path, source: std::io::Error) -> NiftiError {
    NiftiError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, NiftiError> {
    let raw = fs::read(path).map_err(|e| io_err(path, e))?;
    if !is_gzip(&raw) {
        return Ok(raw);
    }
    gunzip(&raw).map_err(|e| io_err(path, e))
}

/// Inflates a gzip stream, reserving the full image size once the header is known.
fn gunzip(raw: &[u8]) -> std::io::Result<Vec<u8>> {
    let mut decoder = MultiGzDecoder::new(raw);
    let mut out = Vec::with_capacity(HEADER_SIZE);
    (&mut decoder).take(HEADER_SIZE as u64).read_to_end(&mut out)?;
    if let Ok(h) = parse_header(&out) {
        if let (Ok(dims), Ok(dt)) = (h.volume_dims(), h.datatype()) {
            let total = (h.vox_offset.max(0.0) as usize)
                .saturating_add(dims.iter().product::<usize>().saturating_mul(dt.byte_size()));
            out.reserve(total.saturating_sub(out.len()).min(1 << 32));
        }
    }
    decoder.read_to_end(&mut out)?;
    Ok(out)
}

/// Validated data payload of a single-file image.
fn payload<'a>(header: &NiftiHeader, bytes: &'a [u8]) -> Result<(Grid, Datatype, &'a [u8]), NiftiError> {
    if !header.is_single_file() {
        return Err(NiftiError::DualFileUnsupported);
    }
    let dims = header.volume_dims()?;
    let datatype = header.datatype()?;
    let grid = Grid::with_affine(dims, header.spacing(), header.affine())?;
    let offset = header.vox_offset as usize;
    let need = grid.len() * datatype.byte_size();
    let have = bytes.len().saturating_sub(offset);
    if have < need {
        return Err(NiftiError::TruncatedData { have, need });
    }
    Ok((grid, datatype, &bytes[offset..offset + need]))
}

/// Decodes the stored values of a whole file image (header + data).
fn decode_stored(header: &NiftiHeader, bytes: &[u8]) -> Result<(Grid, Vec<f64>), NiftiError> {
    let (grid, datatype, payload) = payload(header, bytes)?;
    let big = header.endianness == Endianness::Big;

    macro_rules! decode {
        ($t:ty) => {{
            const N: usize = std::mem::size_of::<$t>();
            payload
                .chunks_exact(N)
                .map(|c| {
                    let arr: [u8; N] = c.try_into().unwrap();
                    let v = if big {
                        <$t>::from_be_bytes(arr)
                    } else {
                        <$t>::from_le_bytes(arr)
                    };
                    v as f64
                })
                .collect::<Vec<f64>>()
        }};
    }

    let values = match datatype {
        Datatype::U8 => payload.iter().map(|&b| b as f64).collect(),
        Datatype::I16 => decode!(i16),
        Datatype::I32 => decode!(i32),
        Datatype::F32 => decode!(f32),
        Datatype::F64 => decode!(f64),
    };
    Ok((grid, values))
}

/// Decodes an in-memory file image (gzip allowed).
pub fn decode_volume(bytes: &[u8], mode: ReadMode) -> Result<(NiftiHeader, Volume3D), NiftiError> {
    let owned;
    let bytes = if is_gzip(bytes) {
        owned = gunzip(bytes).map_err(|e| io_err(Path::new("<memory>"), e))?;
        &owned[..]
    } else {
        bytes
    };
    decode_plain(bytes, mode)
}

fn decode_plain(bytes: &[u8], mode: ReadMode) -> Result<(NiftiHeader, Volume3D), NiftiError> {
    let header = parse_header(bytes)?;
    let (grid, mut values) = decode_stored(&header, bytes)?;
    match mode {
        ReadMode::Mask => values
            .iter_mut()
            .for_each(|v| *v = if *v != 0.0 { 1.0 } else { 0.0 }),
        ReadMode::Intensity => {
            let slope = if header.scl_slope == 0.0 || !header.scl_slope.is_finite() {
                1.0
            } else {
                header.scl_slope as f64
            };
            let inter = if header.scl_inter.is_finite() {
                header.scl_inter as f64
            } else {
                0.0
            };
            if slope != 1.0 || inter != 0.0 {
                values.iter_mut().for_each(|v| *v = *v * slope + inter);
            }
        }
    }
    Ok((header, Volume3D::new(grid, values)?))
}

/// Reads a `.nii` or `.nii.gz` file.
pub fn read_volume(path: impl AsRef<Path>, mode: ReadMode) -> Result<Volume3D, NiftiError> {
    read_volume_with_header(path, mode).map(|(_, v)| v)
}

pub fn read_volume_with_header(
    path: impl AsRef<Path>,
    mode: ReadMode,
) -> Result<(NiftiHeader, Volume3D), NiftiError> {
    let bytes = read_bytes(path.as_ref())?;
    decode_plain(&bytes, mode)
}

/// Reads a label or mask file; any nonzero stored value is foreground.
pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask, NiftiError> {
    let bytes = read_bytes(path.as_ref())?;
    let header = parse_header(&bytes)?;
    let (grid, datatype, payload) = payload(&header, &bytes)?;
    let big = header.endianness == Endianness::Big;
    let data: Vec<bool> = match datatype {
        Datatype::U8 => payload.iter().map(|&b| b != 0).collect(),
        Datatype::I16 | Datatype::I32 => payload
            .chunks_exact(datatype.byte_size())
            .map(|c| c.iter().any(|&b| b != 0))
            .collect(),
        Datatype::F32 => payload
            .chunks_exact(4)
            .map(|c| {
                let arr = c.try_into().unwrap();
                (if big { f32::from_be_bytes(arr) } else { f32::from_le_bytes(arr) }) != 0.0
            })
            .collect(),
        Datatype::F64 => payload
            .chunks_exact(8)
            .map(|c| {
                let arr = c.try_into().unwrap();
                (if big { f64::from_be_bytes(arr) } else { f64::from_le_bytes(arr) }) != 0.0
            })
            .collect(),
    };
    Ok(BinaryMask::from_bools(grid, data)?)
}

/// Header describing `vol` stored as `datatype`.
pub fn header_for(grid: &Grid, datatype: Datatype) -> NiftiHeader {
    let [nx, ny, nz] = grid.dims;
    let f = |v: f64| v as f32;
    NiftiHeader {
        dim: [3, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1],
        datatype_code: datatype.code(),
        bitpix: datatype.bitpix(),
        pixdim: [
            1.0,
            f(grid.spacing[0]),
            f(grid.spacing[1]),
            f(grid.spacing[2]),
            0.0,
            0.0,
            0.0,
            0.0,
        ],
        sform_code: 1,
        srow_x: grid.affine[0].map(f),
        srow_y: grid.affine[1].map(f),
        srow_z: grid.affine[2].map(f),
        ..NiftiHeader::default()
    }
}

/// Encodes a volume as an uncompressed single-file image.
pub fn encode_volume(
    vol: &Volume3D,
    datatype: Datatype,
    endianness: Endianness,
) -> Result<Vec<u8>, NiftiError> {
    let grid = vol.grid();
    if grid.dims.iter().any(|&d| d > i16::MAX as usize) {
        return Err(NiftiError::Volume(VolumeError::InvalidGrid(format!(
            "dimension exceeds NIfTI-1 limit of {}: {grid}",
            i16::MAX
        ))));
    }
    if let Some((index, &value)) = vol
        .data()
        .iter()
        .enumerate()
        .find(|(_, &v)| !datatype.can_represent(v))
    {
        return Err(NiftiError::RangeOverflow {
            value,
            index,
            datatype,
        });
    }
    let header = NiftiHeader {
        endianness,
        ..header_for(grid, datatype)
    };
    let mut out = Vec::with_capacity(MIN_VOX_OFFSET + vol.data().len() * datatype.byte_size());
    out.extend_from_slice(&header.to_bytes(endianness));
    out.extend_from_slice(&[0u8; 4]);
    let big = endianness == Endianness::Big;

    macro_rules! encode {
        ($t:ty) => {
            for &v in vol.data() {
                let x = v as $t;
                out.extend_from_slice(&if big { x.to_be_bytes() } else { x.to_le_bytes() });
            }
        };
    }

    match datatype {
        Datatype::U8 => out.extend(vol.data().iter().map(|&v| v as u8)),
        Datatype::I16 => encode!(i16),
        Datatype::I32 => encode!(i32),
        Datatype::F32 => encode!(f32),
        Datatype::F64 => encode!(f64),
    }
    Ok(out)
}

/// Writes a little-endian single-file NIfTI-1 volume, gzip-compressed when
/// `gzip` is set.
pub fn write_volume(
    vol: &Volume3D,
    path: impl AsRef<Path>,
    datatype: Datatype,
    gzip: bool,
) -> Result<(), NiftiError> {
    let path = path.as_ref();
    let bytes = encode_volume(vol, datatype, Endianness::Little)?;
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut file = std::io::BufWriter::new(file);
    if gzip {
        let mut enc = GzEncoder::new(file, Compression::fast());
        enc.write_all(&bytes).map_err(|e| io_err(path, e))?;
        enc.finish()
            .and_then(|mut f| f.flush())
            .map_err(|e| io_err(path, e))?;
    } else {
        file.write_all(&bytes).map_err(|e| io_err(path, e))?;
        file.flush().map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

pub fn write_mask(mask: &BinaryMask, path: impl AsRef<Path>, gzip: bool) -> Result<(), NiftiError> {
    write_volume(&mask.to_volume(), path, Datatype::U8, gzip)
}
