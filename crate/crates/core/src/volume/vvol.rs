//! VVOL container.
//!
//! Little-endian layout:
//!
//! ```text
//! 0   "VVOL"
//! 4   u32 version (1)
//! 8   u32 dtype   (0 = f32, 1 = u8)
//! 12  u32 channels
//! 16  u32 nx, u32 ny, u32 nz
//! 28  f32 vx, f32 vy, f32 vz   (micrometers)
//! 40  u32 meta_len, then meta_len bytes of UTF-8 JSON
//! ..  payload: `channels` planes of nz*ny*nx values, x fastest
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::{BinaryVolume, Dims, DisplacementField, Error, Result, ScalarVolume, VoxelSize};

pub const MAGIC: [u8; 4] = *b"VVOL";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 44;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    U8 = 1,
}

impl Dtype {
    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::U8),
            other => Err(Error::UnsupportedDtype(other)),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl Payload {
    pub fn dtype(&self) -> Dtype {
        match self {
            Payload::F32(_) => Dtype::F32,
            Payload::U8(_) => Dtype::U8,
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::U8(v) => v.len(),
        }
    }
}

/// Parsed header fields.
#[derive(Clone, Debug, PartialEq)]
pub struct Header {
    pub dtype: Dtype,
    pub channels: u32,
    pub dims: Dims,
    pub voxel_size: VoxelSize,
    pub meta: String,
}

impl Header {
    fn payload_offset(&self) -> usize {
        HEADER_LEN + self.meta.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VvolFile {
    pub header: Header,
    pub payload: Payload,
}

impl VvolFile {
    fn new(channels: u32, dims: Dims, voxel_size: VoxelSize, meta: &str, payload: Payload) -> Self {
        Self {
            header: Header {
                dtype: payload.dtype(),
                channels,
                dims,
                voxel_size,
                meta: meta.to_string(),
            },
            payload,
        }
    }

    pub fn from_scalar(vol: &ScalarVolume, meta: &str) -> Self {
        Self::new(1, vol.dims(), vol.voxel_size(), meta, Payload::F32(vol.data().to_vec()))
    }

    pub fn from_field(disp: &DisplacementField, meta: &str) -> Self {
        Self::new(
            3,
            disp.dims(),
            disp.voxel_size(),
            meta,
            Payload::F32(disp.data().to_vec()),
        )
    }

    pub fn from_binary(bin: &BinaryVolume, meta: &str) -> Self {
        Self::new(
            1,
            bin.dims(),
            bin.voxel_size(),
            meta,
            Payload::U8(bin.mask().iter().map(|&m| u8::from(m)).collect()),
        )
    }

    pub fn encode(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(h.payload_offset() + self.payload.len() * h.dtype.width());
        out.extend_from_slice(&MAGIC);
        for v in [
            VERSION,
            h.dtype as u32,
            h.channels,
            h.dims.nx as u32,
            h.dims.ny as u32,
            h.dims.nz as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [h.voxel_size.vx, h.voxel_size.vy, h.voxel_size.vz] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(h.meta.len() as u32).to_le_bytes());
        out.extend_from_slice(h.meta.as_bytes());
        match &self.payload {
            Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let header = parse_header(bytes)?;
        let start = header.payload_offset();
        let count = header.channels as usize * header.dims.len();
        let need = count * header.dtype.width();
        let body = &bytes[start..];
        if body.len() < need {
            return Err(Error::Truncated(format!(
                "payload needs {need} bytes, found {}",
                body.len()
            )));
        }
        let payload = match header.dtype {
            Dtype::F32 => Payload::F32(
                body[..need]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            Dtype::U8 => Payload::U8(body[..need].to_vec()),
        };
        Ok(Self { header, payload })
    }

    pub fn into_scalar(self) -> Result<ScalarVolume> {
        let h = self.header;
        if h.channels != 1 {
            return Err(Error::DimMismatch(format!(
                "expected 1 channel, file has {}",
                h.channels
            )));
        }
        let data = match self.payload {
            Payload::F32(v) => v,
            Payload::U8(v) => v.into_iter().map(f32::from).collect(),
        };
        ScalarVolume::new(h.dims, h.voxel_size, data)
    }

    pub fn into_field(self) -> Result<DisplacementField> {
        let h = self.header;
        if h.channels != 3 {
            return Err(Error::DimMismatch(format!(
                "displacement field needs 3 channels, file has {}",
                h.channels
            )));
        }
        match self.payload {
            Payload::F32(v) => DisplacementField::new(h.dims, h.voxel_size, v),
            Payload::U8(_) => Err(Error::UnsupportedDtype(Dtype::U8 as u32)),
        }
    }

    pub fn into_binary(self) -> Result<BinaryVolume> {
        let h = self.header;
        if h.channels != 1 {
            return Err(Error::DimMismatch(format!(
                "expected 1 channel, file has {}",
                h.channels
            )));
        }
        let mask = match self.payload {
            Payload::U8(v) => v.into_iter().map(|b| b != 0).collect(),
            Payload::F32(v) => v.into_iter().map(|x| x != 0.0).collect(),
        };
        BinaryVolume::new(h.dims, h.voxel_size, mask)
    }
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 4 {
        return Err(Error::Truncated(format!("{} bytes, no magic", bytes.len())));
    }
    let found = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if found != MAGIC {
        return Err(Error::BadMagic { expected: MAGIC, found });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated(format!(
            "header needs {HEADER_LEN} bytes, found {}",
            bytes.len()
        )));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = Dtype::from_code(u32_at(bytes, 8))?;
    let channels = u32_at(bytes, 12);
    let dims = Dims::new(
        u32_at(bytes, 16) as usize,
        u32_at(bytes, 20) as usize,
        u32_at(bytes, 24) as usize,
    );
    let f = |off| f32::from_bits(u32_at(bytes, off));
    let voxel_size = VoxelSize {
        vx: f(28),
        vy: f(32),
        vz: f(36),
    };
    let meta_len = u32_at(bytes, 40) as usize;
    if bytes.len() < HEADER_LEN + meta_len {
        return Err(Error::Truncated(format!(
            "metadata needs {meta_len} bytes, found {}",
            bytes.len() - HEADER_LEN
        )));
    }
    let meta = std::str::from_utf8(&bytes[HEADER_LEN..HEADER_LEN + meta_len])
        .map_err(|e| Error::InvalidArgument(format!("metadata is not UTF-8: {e}")))?
        .to_string();
    Ok(Header {
        dtype,
        channels,
        dims,
        voxel_size,
        meta,
    })
}

pub fn write(path: impl AsRef<Path>, file: &VvolFile) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::at_path(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(&file.encode())?;
    w.flush()?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<VvolFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::at_path(path, e))?;
    VvolFile::decode(&bytes)
}

/// Read only the header (and metadata) without loading the payload.
pub fn read_header(path: impl AsRef<Path>) -> Result<Header> {
    let path = path.as_ref();
    let mut f = File::open(path).map_err(|e| Error::at_path(path, e))?;
    let mut head = vec![0u8; HEADER_LEN];
    let got = read_up_to(&mut f, &mut head)?;
    head.truncate(got);
    if got < HEADER_LEN {
        // let the parser produce the precise error
        return parse_header(&head);
    }
    let meta_len = u32_at(&head, 40) as usize;
    let mut meta = vec![0u8; meta_len];
    let got = read_up_to(&mut f, &mut meta)?;
    head.extend_from_slice(&meta[..got]);
    parse_header(&head)
}

fn read_up_to(f: &mut File, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = f.read(&mut buf[filled..])?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    Ok(filled)
}

/// Read a `size³` block of one channel starting at `origin`, seeking row by row
/// so the rest of the payload is never loaded.
pub fn read_region(path: impl AsRef<Path>, channel: u32, origin: [usize; 3], size: usize) -> Result<Vec<f32>> {
    let path = path.as_ref();
    let header = read_header(path)?;
    let d = header.dims;
    if channel >= header.channels {
        return Err(Error::InvalidArgument(format!(
            "channel {channel} out of range ({} channels)",
            header.channels
        )));
    }
    if origin[0] + size > d.nx || origin[1] + size > d.ny || origin[2] + size > d.nz {
        return Err(Error::InvalidArgument(format!(
            "region at {origin:?} of size {size} exceeds {d}"
        )));
    }
    let width = header.dtype.width();
    let base = header.payload_offset() + channel as usize * d.len() * width;
    let mut f = File::open(path).map_err(|e| Error::at_path(path, e))?;
    let mut row = vec![0u8; size * width];
    let mut out = Vec::with_capacity(size * size * size);
    for z in 0..size {
        for y in 0..size {
            let idx = d.index(origin[0], origin[1] + y, origin[2] + z);
            f.seek(SeekFrom::Start((base + idx * width) as u64))?;
            f.read_exact(&mut row).map_err(|e| {
                if e.kind() == std::io::ErrorKind::UnexpectedEof {
                    Error::Truncated(format!("region row at z={z}, y={y}"))
                } else {
                    Error::Io(e)
                }
            })?;
            match header.dtype {
                Dtype::F32 => out.extend(
                    row.chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
                ),
                Dtype::U8 => out.extend(row.iter().map(|&b| f32::from(b))),
            }
        }
    }
    Ok(out)
}

pub fn write_scalar(path: impl AsRef<Path>, vol: &ScalarVolume, meta: &str) -> Result<()> {
    write(path, &VvolFile::from_scalar(vol, meta))
}

pub fn read_scalar(path: impl AsRef<Path>) -> Result<ScalarVolume> {
    read(path)?.into_scalar()
}

pub fn write_field(path: impl AsRef<Path>, disp: &DisplacementField, meta: &str) -> Result<()> {
    write(path, &VvolFile::from_field(disp, meta))
}

pub fn read_field(path: impl AsRef<Path>) -> Result<DisplacementField> {
    read(path)?.into_field()
}

pub fn write_binary(path: impl AsRef<Path>, bin: &BinaryVolume, meta: &str) -> Result<()> {
    write(path, &VvolFile::from_binary(bin, meta))
}

pub fn read_binary(path: impl AsRef<Path>) -> Result<BinaryVolume> {
    read(path)?.into_binary()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ScalarVolume {
        ScalarVolume::from_fn(Dims::new(3, 4, 5), VoxelSize::iso(40.0), |x, y, z| {
            (x * 100 + y * 10 + z) as f32 * 0.5
        })
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = VvolFile::from_scalar(&sample(), "{}").encode();
        assert_eq!(&bytes[0..4], b"VVOL");
        assert_eq!(u32_at(&bytes, 4), 1);
        assert_eq!(u32_at(&bytes, 8), 0);
        assert_eq!(u32_at(&bytes, 12), 1);
        assert_eq!([u32_at(&bytes, 16), u32_at(&bytes, 20), u32_at(&bytes, 24)], [3, 4, 5]);
        assert_eq!(f32::from_le_bytes(bytes[28..32].try_into().unwrap()), 40.0);
        assert_eq!(u32_at(&bytes, 40), 2);
        assert_eq!(&bytes[44..46], b"{}");
        assert_eq!(bytes.len(), 46 + 60 * 4);
        // first payload value is voxel (0,0,0), second is (1,0,0)
        assert_eq!(f32::from_le_bytes(bytes[46..50].try_into().unwrap()), 0.0);
        assert_eq!(f32::from_le_bytes(bytes[50..54].try_into().unwrap()), 50.0);
    }

    #[test]
    fn distinct_errors_for_bad_inputs() {
        let good = VvolFile::from_scalar(&sample(), "").encode();

        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(VvolFile::decode(&bad), Err(Error::BadMagic { .. })));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(VvolFile::decode(&bad), Err(Error::UnsupportedVersion(2))));

        let mut bad = good.clone();
        bad[8] = 7;
        assert!(matches!(VvolFile::decode(&bad), Err(Error::UnsupportedDtype(7))));

        let cut = &good[..good.len() - 1];
        assert!(matches!(VvolFile::decode(cut), Err(Error::Truncated(_))));
        assert!(matches!(VvolFile::decode(&good[..20]), Err(Error::Truncated(_))));
    }

    #[test]
    fn field_channels_keep_their_order() {
        let d = Dims::new(2, 3, 2);
        let f = DisplacementField::from_fn(d, VoxelSize::iso(5.0), |x, y, z| {
            [x as f32, 10.0 + y as f32, 20.0 + z as f32]
        });
        let back = VvolFile::decode(&VvolFile::from_field(&f, "").encode())
            .unwrap()
            .into_field()
            .unwrap();
        assert_eq!(back, f);
        assert_eq!(back.channel(1)[0], 10.0);
    }

    #[test]
    fn region_read_matches_in_memory_extract() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vvol");
        let vol = ScalarVolume::from_fn(Dims::new(7, 6, 5), VoxelSize::iso(1.0), |x, y, z| {
            (x + 7 * y + 42 * z) as f32
        });
        write_scalar(&path, &vol, r#"{"k":1}"#).unwrap();
        let region = read_region(&path, 0, [2, 1, 1], 4).unwrap();
        let expect = super::super::extract_patch(vol.data(), vol.dims(), [2, 1, 1], 4);
        assert_eq!(region, expect);
        assert!(read_region(&path, 0, [4, 0, 0], 4).is_err());
        assert_eq!(read_header(&path).unwrap().meta, r#"{"k":1}"#);
    }
}
