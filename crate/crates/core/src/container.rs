//! Binary motion container (`HUMO`): little-endian header followed by
//! T·D row-major f32 values.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "HUMO"
//! 4       4     u32 format version (1)
//! 8       4     u32 T (frames)
//! 12      4     u32 D (feature dimension)
//! 16      4     f32 fps
//! 20      16    layout tag, UTF-8, zero padded
//! 36      4·T·D f32 values
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::features::MotionSequence;

pub const MOTION_MAGIC: &[u8; 4] = b"HUMO";
pub const MOTION_FORMAT_VERSION: u32 = 1;
pub const LAYOUT_TAG_BYTES: usize = 16;

pub(crate) fn write_tag(w: &mut impl Write, tag: &str) -> Result<()> {
    let bytes = tag.as_bytes();
    if bytes.len() > LAYOUT_TAG_BYTES {
        return Err(Error::InvalidInput(format!("layout tag '{tag}' longer than 16 bytes")));
    }
    let mut buf = [0u8; LAYOUT_TAG_BYTES];
    buf[..bytes.len()].copy_from_slice(bytes);
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_tag(r: &mut impl Read) -> Result<String> {
    let mut buf = [0u8; LAYOUT_TAG_BYTES];
    r.read_exact(&mut buf)?;
    let end = buf.iter().position(|&b| b == 0).unwrap_or(LAYOUT_TAG_BYTES);
    if buf[end..].iter().any(|&b| b != 0) {
        return Err(Error::Corrupt("layout tag has bytes after padding".into()));
    }
    String::from_utf8(buf[..end].to_vec()).map_err(|_| Error::Corrupt("layout tag is not UTF-8".into()))
}

pub fn write_motion(w: &mut impl Write, m: &MotionSequence) -> Result<()> {
    w.write_all(MOTION_MAGIC)?;
    w.write_u32::<LittleEndian>(MOTION_FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(m.frames() as u32)?;
    w.write_u32::<LittleEndian>(m.dim() as u32)?;
    w.write_f32::<LittleEndian>(m.fps as f32)?;
    write_tag(w, m.layout())?;
    for &x in m.data() {
        w.write_f32::<LittleEndian>(x as f32)?;
    }
    Ok(())
}

pub fn read_motion(r: &mut impl Read) -> Result<MotionSequence> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Corrupt("truncated motion header".into()))?;
    if &magic != MOTION_MAGIC {
        return Err(Error::Corrupt(format!("bad motion magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != MOTION_FORMAT_VERSION {
        return Err(Error::Corrupt(format!("unsupported motion format version {version}")));
    }
    let frames = r.read_u32::<LittleEndian>()? as usize;
    let dim = r.read_u32::<LittleEndian>()? as usize;
    let fps = r.read_f32::<LittleEndian>()? as f64;
    let layout = read_tag(r)?;
    let count = frames
        .checked_mul(dim)
        .ok_or_else(|| Error::Corrupt("frame count overflow".into()))?;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() != count * 4 {
        return Err(Error::Corrupt(format!(
            "expected {} payload bytes, found {}",
            count * 4,
            raw.len()
        )));
    }
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    MotionSequence::new(frames, dim, fps, layout, data).map_err(|e| Error::Corrupt(e.to_string()))
}

pub fn save_motion(path: impl AsRef<Path>, m: &MotionSequence) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_motion(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn load_motion(path: impl AsRef<Path>) -> Result<MotionSequence> {
    read_motion(&mut BufReader::new(File::open(path)?))
}
