use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Maps (layer, code) pairs to token ids: `base + layer * C + code`, with
/// the boundary tokens right after the last code id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabMap {
    pub base_offset: u32,
    pub layers: u32,
    pub codebook_size: u32,
}

/// What a token id stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Token {
    Begin,
    End,
    Code { layer: usize, code: u32 },
}

impl VocabMap {
    pub fn new(base_offset: u32, layers: usize, codebook_size: usize) -> Result<Self> {
        let span = (layers as u64) * (codebook_size as u64) + 2;
        if layers == 0 || codebook_size == 0 || base_offset as u64 + span > u32::MAX as u64 {
            return Err(invalid("vocabulary does not fit in 32-bit ids"));
        }
        Ok(VocabMap {
            base_offset,
            layers: layers as u32,
            codebook_size: codebook_size as u32,
        })
    }

    pub fn id(&self, layer: usize, code: u32) -> u32 {
        debug_assert!(layer < self.layers as usize && code < self.codebook_size);
        self.base_offset + layer as u32 * self.codebook_size + code
    }

    pub fn bom(&self) -> u32 {
        self.base_offset + self.layers * self.codebook_size
    }

    pub fn eom(&self) -> u32 {
        self.bom() + 1
    }

    /// Ids this map occupies, boundaries included.
    pub fn size(&self) -> u32 {
        self.layers * self.codebook_size + 2
    }

    pub fn classify(&self, id: u32) -> Option<Token> {
        if id == self.bom() {
            return Some(Token::Begin);
        }
        if id == self.eom() {
            return Some(Token::End);
        }
        let rel = id.checked_sub(self.base_offset)?;
        if rel >= self.layers * self.codebook_size {
            return None;
        }
        Some(Token::Code {
            layer: (rel / self.codebook_size) as usize,
            code: rel % self.codebook_size,
        })
    }
}
