//! Token streams: ordering, the binary `HTOK` file and a JSON-lines debug
//! form.
//!
//! `HTOK` layout, little-endian:
//! ```text
//! magic "HTOK", u32 version (1)
//! u32 frames, downsample, parts, layers, codebook_size, base_offset
//! u32 ordering (0 frame_by_frame part-major, 1 layer_by_layer)
//! f64 fps
//! 16-byte layout tag
//! u64 token count, then that many unsigned LEB128 ids
//! ```

use std::io::{BufRead, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::vocab::{Token, VocabMap};
use crate::container::{read_tag, write_tag};
use crate::error::{invalid, Error, Result};
use crate::features::HUMO263_V1;
use crate::prq::model::{step_count, CodeGrid};

pub const TOKEN_MAGIC: &[u8; 4] = b"HTOK";
pub const TOKEN_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenOrder {
    /// Every code of a latent step before the next step; parts outer,
    /// layers inner.
    FrameByFrame,
    /// Every code of a layer before the next layer; steps outer, parts inner.
    LayerByLayer,
}

impl TokenOrder {
    fn code(self) -> u32 {
        match self {
            TokenOrder::FrameByFrame => 0,
            TokenOrder::LayerByLayer => 1,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(TokenOrder::FrameByFrame),
            1 => Some(TokenOrder::LayerByLayer),
            _ => None,
        }
    }
}

impl std::str::FromStr for TokenOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frame" | "frame_by_frame" => Ok(TokenOrder::FrameByFrame),
            "layer" | "layer_by_layer" => Ok(TokenOrder::LayerByLayer),
            other => Err(invalid(format!("unknown token ordering '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamHeader {
    pub frames: usize,
    pub downsample: usize,
    pub parts: usize,
    pub layers: usize,
    pub codebook_size: usize,
    pub fps: f64,
    pub layout: String,
    pub ordering: TokenOrder,
    pub base_offset: u32,
}

impl StreamHeader {
    pub fn steps(&self) -> usize {
        step_count(self.frames, self.downsample)
    }

    pub fn code_count(&self) -> usize {
        self.steps() * self.parts * self.layers
    }

    pub fn vocab(&self) -> Result<VocabMap> {
        VocabMap::new(self.base_offset, self.layers, self.codebook_size)
    }

    fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.downsample == 0 || self.parts == 0 || self.layers == 0 || self.codebook_size < 2 {
            return Err(Error::Corrupt("token stream header has zero dimensions".into()));
        }
        self.vocab().map_err(|e| Error::Corrupt(e.to_string()))?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenStream {
    pub header: StreamHeader,
    /// Ids including the begin and end markers.
    pub tokens: Vec<u32>,
}

/// Position in the code sequence → (step, part, layer).
pub fn slot_of(order: TokenOrder, index: usize, steps: usize, parts: usize, layers: usize) -> (usize, usize, usize) {
    match order {
        TokenOrder::FrameByFrame => {
            let step = index / (parts * layers);
            let rem = index % (parts * layers);
            (step, rem / layers, rem % layers)
        }
        TokenOrder::LayerByLayer => {
            let layer = index / (steps * parts);
            let rem = index % (steps * parts);
            (rem / parts, rem % parts, layer)
        }
    }
}

pub fn serialize(codes: &CodeGrid, ordering: TokenOrder, vocab: &VocabMap) -> Result<TokenStream> {
    if vocab.layers as usize != codes.layers() || vocab.codebook_size as usize != codes.codebook_size() {
        return Err(invalid("vocabulary does not match the code grid"));
    }
    let (n, p, l) = (codes.steps(), codes.parts(), codes.layers());
    let mut tokens = Vec::with_capacity(n * p * l + 2);
    tokens.push(vocab.bom());
    for i in 0..n * p * l {
        let (s, j, k) = slot_of(ordering, i, n, p, l);
        tokens.push(vocab.id(k, codes.get(s, j, k)));
    }
    tokens.push(vocab.eom());
    Ok(TokenStream {
        header: StreamHeader {
            frames: codes.frames(),
            downsample: codes.downsample(),
            parts: p,
            layers: l,
            codebook_size: codes.codebook_size(),
            fps: codes.fps,
            layout: HUMO263_V1.to_string(),
            ordering,
            base_offset: vocab.base_offset,
        },
        tokens,
    })
}

fn corrupt_at(position: usize, reason: impl Into<String>) -> Error {
    Error::CorruptStream {
        position,
        reason: reason.into(),
    }
}

/// Checks one token at `position` (0 = begin marker) and returns its code.
pub(crate) fn expect_code(vocab: &VocabMap, id: u32, position: usize, layer: usize) -> Result<u32> {
    match vocab.classify(id) {
        Some(Token::Code { layer: k, code }) if k == layer => Ok(code),
        Some(Token::Code { layer: k, .. }) => Err(corrupt_at(position, format!("layer {k} code where layer {layer} belongs"))),
        Some(Token::Begin) => Err(corrupt_at(position, "unexpected begin marker")),
        Some(Token::End) => Err(corrupt_at(position, "stream ended early")),
        None => Err(corrupt_at(position, format!("id {id} is outside the motion vocabulary"))),
    }
}

pub fn deserialize(stream: &TokenStream) -> Result<CodeGrid> {
    let h = &stream.header;
    h.validate()?;
    let vocab = h.vocab()?;
    let (n, p, l) = (h.steps(), h.parts, h.layers);
    let count = n * p * l;
    let t = &stream.tokens;
    if t.first() != Some(&vocab.bom()) {
        return Err(corrupt_at(0, "missing begin marker"));
    }
    let mut codes = vec![0u32; count];
    for i in 0..count {
        let pos = i + 1;
        let id = *t.get(pos).ok_or_else(|| corrupt_at(pos, "stream truncated"))?;
        let (s, j, k) = slot_of(h.ordering, i, n, p, l);
        codes[(s * p + j) * l + k] = expect_code(&vocab, id, pos, k)?;
    }
    match t.get(count + 1) {
        Some(&id) if id == vocab.eom() => {}
        Some(_) => return Err(corrupt_at(count + 1, "expected end marker")),
        None => return Err(corrupt_at(count + 1, "missing end marker")),
    }
    if t.len() > count + 2 {
        return Err(corrupt_at(count + 2, "tokens after end marker"));
    }
    CodeGrid::new(h.frames, h.downsample, p, l, h.codebook_size, h.fps, codes)
}

pub fn write_header(w: &mut impl Write, h: &StreamHeader) -> Result<()> {
    w.write_all(TOKEN_MAGIC)?;
    w.write_u32::<LittleEndian>(TOKEN_FORMAT_VERSION)?;
    for v in [h.frames, h.downsample, h.parts, h.layers, h.codebook_size] {
        w.write_u32::<LittleEndian>(v as u32)?;
    }
    w.write_u32::<LittleEndian>(h.base_offset)?;
    w.write_u32::<LittleEndian>(h.ordering.code())?;
    w.write_f64::<LittleEndian>(h.fps)?;
    write_tag(w, &h.layout)?;
    Ok(())
}

pub fn read_header(r: &mut impl Read) -> Result<StreamHeader> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Corrupt("truncated token header".into()))?;
    if &magic != TOKEN_MAGIC {
        return Err(Error::Corrupt(format!("bad token stream magic {magic:?}")));
    }
    let mut field = || {
        r.read_u32::<LittleEndian>()
            .map_err(|_| Error::Corrupt("truncated token header".into()))
    };
    let version = field()?;
    if version != TOKEN_FORMAT_VERSION {
        return Err(Error::Corrupt(format!("unsupported token format version {version}")));
    }
    let mut dims = [0usize; 5];
    for d in dims.iter_mut() {
        *d = field()? as usize;
    }
    let base_offset = field()?;
    let ordering = TokenOrder::from_code(field()?).ok_or_else(|| Error::Corrupt("unknown token ordering".into()))?;
    let fps = r
        .read_f64::<LittleEndian>()
        .map_err(|_| Error::Corrupt("truncated token header".into()))?;
    let layout = read_tag(r)?;
    let [frames, downsample, parts, layers, codebook_size] = dims;
    let h = StreamHeader {
        frames,
        downsample,
        parts,
        layers,
        codebook_size,
        fps,
        layout,
        ordering,
        base_offset,
    };
    h.validate()?;
    Ok(h)
}

pub fn write_tokens(w: &mut impl Write, stream: &TokenStream) -> Result<()> {
    write_header(w, &stream.header)?;
    w.write_u64::<LittleEndian>(stream.tokens.len() as u64)?;
    for &id in &stream.tokens {
        leb128::write::unsigned(w, id as u64)?;
    }
    Ok(())
}

/// Reads the id sequence that follows a header. Decoding errors carry the
/// token position.
pub fn read_token_ids(r: &mut impl Read) -> Result<Vec<u32>> {
    let count = r
        .read_u64::<LittleEndian>()
        .map_err(|_| Error::Corrupt("truncated token count".into()))?;
    let mut ids = Vec::with_capacity(count.min(1 << 20) as usize);
    for pos in 0..count as usize {
        let id = leb128::read::unsigned(r).map_err(|e| corrupt_at(pos, format!("bad varint: {e}")))?;
        let id = u32::try_from(id).map_err(|_| corrupt_at(pos, "id exceeds 32 bits"))?;
        ids.push(id);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(corrupt_at(count as usize, "bytes after the last token"));
    }
    Ok(ids)
}

pub fn read_tokens(r: &mut impl Read) -> Result<TokenStream> {
    let header = read_header(r)?;
    let tokens = read_token_ids(r)?;
    Ok(TokenStream { header, tokens })
}

pub fn save_tokens(path: impl AsRef<Path>, stream: &TokenStream) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tokens(&mut w, stream)?;
    w.flush()?;
    Ok(())
}

pub fn load_tokens(path: impl AsRef<Path>) -> Result<TokenStream> {
    read_tokens(&mut std::io::BufReader::new(std::fs::File::open(path)?))
}

#[derive(Serialize, Deserialize)]
struct JsonToken {
    pos: usize,
    id: u32,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    layer: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    code: Option<u32>,
}

/// Debug form: the header object on the first line, then one object per
/// token.
pub fn write_tokens_jsonl(mut w: impl Write, stream: &TokenStream) -> Result<()> {
    let vocab = stream.header.vocab()?;
    serde_json::to_writer(&mut w, &stream.header)?;
    writeln!(w)?;
    for (pos, &id) in stream.tokens.iter().enumerate() {
        let (kind, layer, code) = match vocab.classify(id) {
            Some(Token::Begin) => ("begin", None, None),
            Some(Token::End) => ("end", None, None),
            Some(Token::Code { layer, code }) => ("code", Some(layer), Some(code)),
            None => ("unknown", None, None),
        };
        serde_json::to_writer(
            &mut w,
            &JsonToken {
                pos,
                id,
                kind: kind.to_string(),
                layer,
                code,
            },
        )?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_tokens_jsonl(r: impl BufRead) -> Result<TokenStream> {
    let mut lines = r.lines();
    let first = lines.next().ok_or_else(|| Error::Parse("empty token file".into()))??;
    let header: StreamHeader = serde_json::from_str(&first)?;
    header.validate()?;
    let mut tokens = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: JsonToken = serde_json::from_str(&line)?;
        if t.pos != tokens.len() {
            return Err(corrupt_at(tokens.len(), format!("line claims position {}", t.pos)));
        }
        tokens.push(t.id);
    }
    Ok(TokenStream { header, tokens })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(frames: usize, w: usize, p: usize, l: usize, c: usize, codes: Vec<u32>) -> CodeGrid {
        CodeGrid::new(frames, w, p, l, c, 20.0, codes).unwrap()
    }

    #[test]
    fn orders_on_tiny_grid() {
        // one step, two parts (a, b), two layers
        let (a0, a1, b0, b1) = (1, 2, 3, 0);
        let g = grid(4, 4, 2, 2, 4, vec![a0, a1, b0, b1]);
        let v = VocabMap::new(0, 2, 4).unwrap();
        let id = |k, c| v.id(k, c);
        let frame = serialize(&g, TokenOrder::FrameByFrame, &v).unwrap();
        assert_eq!(frame.tokens, vec![v.bom(), id(0, a0), id(1, a1), id(0, b0), id(1, b1), v.eom()]);
        let layer = serialize(&g, TokenOrder::LayerByLayer, &v).unwrap();
        assert_eq!(layer.tokens, vec![v.bom(), id(0, a0), id(0, b0), id(1, a1), id(1, b1), v.eom()]);
    }

    #[test]
    fn malformed_streams_report_position() {
        let g = grid(8, 4, 2, 2, 4, vec![0, 1, 2, 3, 3, 2, 1, 0]);
        let v = VocabMap::new(10, 2, 4).unwrap();
        let good = serialize(&g, TokenOrder::FrameByFrame, &v).unwrap();
        let cases: Vec<(usize, u32)> = vec![(0, 11), (3, 9999), (2, v.id(0, 1)), (9, v.bom())];
        for (pos, id) in cases {
            let mut s = good.clone();
            s.tokens[pos] = id;
            match deserialize(&s) {
                Err(Error::CorruptStream { position, .. }) => assert_eq!(position, pos),
                other => panic!("{other:?}"),
            }
        }
        let mut short = good.clone();
        short.tokens.truncate(5);
        assert!(matches!(deserialize(&short), Err(Error::CorruptStream { position: 5, .. })));
    }

    #[test]
    fn binary_and_jsonl_round_trip() {
        let g = grid(9, 4, 3, 2, 300, (0..18).map(|i| i * 16).collect());
        let v = VocabMap::new(32000, 2, 300).unwrap();
        let s = serialize(&g, TokenOrder::LayerByLayer, &v).unwrap();
        let mut buf = Vec::new();
        write_tokens(&mut buf, &s).unwrap();
        assert_eq!(read_tokens(&mut buf.as_slice()).unwrap(), s);
        let mut text = Vec::new();
        write_tokens_jsonl(&mut text, &s).unwrap();
        assert_eq!(read_tokens_jsonl(text.as_slice()).unwrap(), s);
        buf.push(0x80);
        assert!(read_tokens(&mut buf.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_both_orders(
            frames in 1usize..20, w in 1usize..5, p in 1usize..6, l in 1usize..5, c in 2usize..40,
            base in 0u32..50_000, seed in any::<u64>(),
        ) {
            let n = frames.div_ceil(w);
            let mut x = seed;
            let codes: Vec<u32> = (0..n * p * l).map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((x >> 33) % c as u64) as u32
            }).collect();
            let g = grid(frames, w, p, l, c, codes);
            let v = VocabMap::new(base, l, c).unwrap();
            for order in [TokenOrder::FrameByFrame, TokenOrder::LayerByLayer] {
                let s = serialize(&g, order, &v).unwrap();
                prop_assert_eq!(s.tokens.len(), n * p * l + 2);
                prop_assert_eq!(&deserialize(&s).unwrap(), &g);
            }
        }
    }
}
