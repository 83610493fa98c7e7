//! Codebook file (`PRQC`), all little-endian.
//!
//! ```text
//! magic "PRQC", u32 version (1)
//! u32 codebook_size, latent_dim, layers, downsample, hidden_dim,
//!     parts, part_dim, activation (0 tanh, 1 identity),
//!     flags (bit 0 zero_code, bit 1 share_layers)
//! f64 beta, ema_decay, dead_code_threshold, learning_rate
//! u32 batch_size, epochs
//! per part: 16-byte name, 7 x u32 feature joint index
//! f32 books        book_count x codebook_size x latent_dim
//! f32 usage        book_count x codebook_size
//! f32 encoder      w1, b1, w2, b2 (matrices column-major)
//! f32 decoder      w1, b1, w2, b2
//! ```
//! `book_count` is 1 with `share_layers`, otherwise `layers`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};

use super::config::{Activation, PrqConfig};
use super::model::CodebookSet;
use super::net::TwoLayer;
use super::quantizer::ResidualQuantizer;
use crate::container::{read_tag, write_tag};
use crate::error::{Error, Result};
use crate::parts::{Part, PartitionSpec, JOINTS_PER_PART, PART_DIM};

pub const CODEBOOK_MAGIC: &[u8; 4] = b"PRQC";
pub const CODEBOOK_FORMAT_VERSION: u32 = 1;

const FLAG_ZERO_CODE: u32 = 1;
const FLAG_SHARE_LAYERS: u32 = 2;

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt(msg.into())
}

fn write_f32s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    for &v in values {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    Ok(())
}

fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw).map_err(|_| corrupt("truncated codebook payload"))?;
    Ok(raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn write_net(w: &mut impl Write, net: &TwoLayer) -> Result<()> {
    for p in net.params() {
        write_f32s(w, p)?;
    }
    Ok(())
}

fn read_net(r: &mut impl Read, input: usize, hidden: usize, output: usize, activation: Activation) -> Result<TwoLayer> {
    Ok(TwoLayer {
        w1: DMatrix::from_vec(hidden, input, read_f32s(r, hidden * input)?),
        b1: DVector::from_vec(read_f32s(r, hidden)?),
        w2: DMatrix::from_vec(output, hidden, read_f32s(r, output * hidden)?),
        b2: DVector::from_vec(read_f32s(r, output)?),
        activation,
    })
}

pub fn write_codebook(w: &mut impl Write, model: &CodebookSet) -> Result<()> {
    let cfg = model.config();
    w.write_all(CODEBOOK_MAGIC)?;
    w.write_u32::<LittleEndian>(CODEBOOK_FORMAT_VERSION)?;
    let flags = if cfg.zero_code { FLAG_ZERO_CODE } else { 0 } | if cfg.share_layers { FLAG_SHARE_LAYERS } else { 0 };
    for v in [
        cfg.codebook_size,
        cfg.latent_dim,
        cfg.layers,
        cfg.downsample,
        cfg.hidden_dim,
        model.parts(),
        PART_DIM,
    ] {
        w.write_u32::<LittleEndian>(v as u32)?;
    }
    w.write_u32::<LittleEndian>(cfg.activation.code())?;
    w.write_u32::<LittleEndian>(flags)?;
    for v in [cfg.beta, cfg.ema_decay, cfg.dead_code_threshold, cfg.learning_rate] {
        w.write_f64::<LittleEndian>(v)?;
    }
    w.write_u32::<LittleEndian>(cfg.batch_size as u32)?;
    w.write_u32::<LittleEndian>(cfg.epochs as u32)?;
    for part in model.partition().parts() {
        write_tag(w, &part.name)?;
        for &j in &part.joints {
            w.write_u32::<LittleEndian>(j as u32)?;
        }
    }
    write_f32s(w, model.quantizer().books())?;
    write_f32s(w, model.quantizer().usage())?;
    write_net(w, model.encoder())?;
    write_net(w, model.decoder())?;
    Ok(())
}

pub fn read_codebook(r: &mut impl Read) -> Result<CodebookSet> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| corrupt("truncated codebook header"))?;
    if &magic != CODEBOOK_MAGIC {
        return Err(corrupt(format!("bad codebook magic {magic:?}")));
    }
    let mut u32_field = || r.read_u32::<LittleEndian>().map_err(|_| corrupt("truncated codebook header"));
    let version = u32_field()?;
    if version != CODEBOOK_FORMAT_VERSION {
        return Err(corrupt(format!("unsupported codebook format version {version}")));
    }
    let mut head = [0usize; 7];
    for h in head.iter_mut() {
        *h = u32_field()? as usize;
    }
    let [codebook_size, latent_dim, layers, downsample, hidden_dim, parts, part_dim] = head;
    let activation = Activation::from_code(u32_field()?).ok_or_else(|| corrupt("unknown activation code"))?;
    let flags = u32_field()?;
    if flags & !(FLAG_ZERO_CODE | FLAG_SHARE_LAYERS) != 0 {
        return Err(corrupt(format!("unknown codebook flags {flags:#x}")));
    }
    if part_dim != PART_DIM {
        return Err(corrupt(format!("part dimension {part_dim}, expected {PART_DIM}")));
    }
    let mut f64_field = || r.read_f64::<LittleEndian>().map_err(|_| corrupt("truncated codebook header"));
    let (beta, ema_decay, dead_code_threshold, learning_rate) = (f64_field()?, f64_field()?, f64_field()?, f64_field()?);
    let batch_size = r.read_u32::<LittleEndian>()? as usize;
    let epochs = r.read_u32::<LittleEndian>()? as usize;
    let cfg = PrqConfig {
        codebook_size,
        latent_dim,
        layers,
        downsample,
        beta,
        hidden_dim,
        ema_decay,
        dead_code_threshold,
        learning_rate,
        batch_size,
        epochs,
        activation,
        zero_code: flags & FLAG_ZERO_CODE != 0,
        share_layers: flags & FLAG_SHARE_LAYERS != 0,
    };
    cfg.validate().map_err(|e| corrupt(format!("codebook configuration: {e}")))?;
    // guard allocations against absurd headers
    let books_len = cfg.book_count() as u64 * codebook_size as u64 * latent_dim as u64;
    let net_len = (downsample * PART_DIM) as u64 * hidden_dim as u64 + hidden_dim as u64 * latent_dim as u64;
    if parts == 0 || parts > 64 || books_len > 1 << 31 || net_len > 1 << 31 {
        return Err(corrupt("codebook header sizes are implausible"));
    }
    let mut part_list = Vec::with_capacity(parts);
    for _ in 0..parts {
        let name = read_tag(r).map_err(|_| corrupt("truncated part table"))?;
        let mut joints = [0usize; JOINTS_PER_PART];
        for j in joints.iter_mut() {
            *j = r.read_u32::<LittleEndian>().map_err(|_| corrupt("truncated part table"))? as usize;
        }
        part_list.push(Part { name, joints });
    }
    let partition = PartitionSpec::new(part_list).map_err(|e| corrupt(format!("part table: {e}")))?;
    let books = read_f32s(r, books_len as usize)?;
    let usage = read_f32s(r, cfg.book_count() * codebook_size)?;
    let quantizer = ResidualQuantizer::from_books(&cfg, books, usage).map_err(|e| corrupt(e.to_string()))?;
    let in_dim = downsample * PART_DIM;
    let encoder = read_net(r, in_dim, hidden_dim, latent_dim, activation)?;
    let decoder = read_net(r, latent_dim, hidden_dim, in_dim, activation)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(corrupt("trailing bytes after codebook payload"));
    }
    let model = CodebookSet::from_parts(cfg, partition, quantizer, encoder, decoder)?;
    if !model.is_finite() {
        return Err(corrupt("codebook file holds non-finite values"));
    }
    Ok(model)
}

pub fn save_codebook(path: impl AsRef<Path>, model: &CodebookSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_codebook(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_codebook(path: impl AsRef<Path>) -> Result<CodebookSet> {
    read_codebook(&mut BufReader::new(File::open(path)?))
}
