//! Incremental detokenization and the latency/throughput arithmetic.

use super::codec::{expect_code, StreamHeader, TokenOrder};
use super::vocab::{Token, VocabMap};
use crate::error::{invalid, Error, Result};
use crate::features::HUMO263_V1;
use crate::prq::model::CodebookSet;

/// Where a stream stands after its input ran out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamStatus {
    /// End marker seen, every frame emitted.
    Complete { frames: usize },
    /// Input stopped early; `pending` codes of a partial step are held back.
    EndOfInput { frames: usize, pending: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    AwaitBegin,
    Body,
    Done,
}

/// Turns a frame-by-frame token feed into motion frames, W at a time.
pub struct StreamDecoder<'m> {
    model: &'m CodebookSet,
    header: StreamHeader,
    vocab: VocabMap,
    layers_used: usize,
    phase: Phase,
    pending: Vec<u32>,
    step: usize,
    position: usize,
    emitted: usize,
}

impl<'m> StreamDecoder<'m> {
    pub fn new(model: &'m CodebookSet, header: StreamHeader, layers_used: usize) -> Result<Self> {
        if header.ordering != TokenOrder::FrameByFrame {
            return Err(Error::UnsupportedOrdering(
                "layer_by_layer streams finish no step until the last layer; decode them in batch".into(),
            ));
        }
        let cfg = model.config();
        if header.parts != model.parts()
            || header.layers != cfg.layers
            || header.downsample != cfg.downsample
            || header.codebook_size != cfg.codebook_size
            || header.layout != HUMO263_V1
        {
            return Err(invalid("token stream header does not match the model"));
        }
        if layers_used == 0 || layers_used > cfg.layers {
            return Err(invalid(format!("layers_used must be in 1..={}", cfg.layers)));
        }
        Ok(StreamDecoder {
            vocab: header.vocab()?,
            pending: Vec::with_capacity(header.parts * header.layers),
            model,
            header,
            layers_used,
            phase: Phase::AwaitBegin,
            step: 0,
            position: 0,
            emitted: 0,
        })
    }

    pub fn frames_emitted(&self) -> usize {
        self.emitted
    }

    pub fn tokens_consumed(&self) -> usize {
        self.position
    }

    fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::CorruptStream {
            position: self.position,
            reason: reason.into(),
        }
    }

    /// Consumes one token id; returns the frames it completes (possibly
    /// none).
    pub fn push(&mut self, id: u32) -> Result<Vec<Vec<f64>>> {
        let out = self.accept(id);
        if out.is_ok() {
            self.position += 1;
        }
        out
    }

    fn accept(&mut self, id: u32) -> Result<Vec<Vec<f64>>> {
        match self.phase {
            Phase::Done => Err(self.corrupt("token after end marker")),
            Phase::AwaitBegin => match self.vocab.classify(id) {
                Some(Token::Begin) => {
                    self.phase = Phase::Body;
                    Ok(Vec::new())
                }
                _ => Err(self.corrupt("missing begin marker")),
            },
            Phase::Body => {
                let steps = self.header.steps();
                if self.step == steps {
                    return if id == self.vocab.eom() {
                        self.phase = Phase::Done;
                        Ok(Vec::new())
                    } else {
                        Err(self.corrupt("expected end marker"))
                    };
                }
                let layer = self.pending.len() % self.header.layers;
                let code = expect_code(&self.vocab, id, self.position, layer)?;
                self.pending.push(code);
                if self.pending.len() < self.header.parts * self.header.layers {
                    return Ok(Vec::new());
                }
                let mut frames = self.model.decode_step(&self.pending, self.layers_used)?;
                self.pending.clear();
                self.step += 1;
                let remaining = self.header.frames - self.emitted;
                frames.truncate(remaining);
                self.emitted += frames.len();
                Ok(frames)
            }
        }
    }

    pub fn finish(&self) -> StreamStatus {
        if self.phase == Phase::Done {
            StreamStatus::Complete { frames: self.emitted }
        } else {
            StreamStatus::EndOfInput {
                frames: self.emitted,
                pending: self.pending.len(),
            }
        }
    }
}

/// Code tokens that must arrive before the first frame can be decoded.
pub fn first_output_latency(order: TokenOrder, steps: usize, parts: usize, layers: usize) -> usize {
    match order {
        TokenOrder::FrameByFrame => parts * layers,
        TokenOrder::LayerByLayer => (layers - 1) * steps * parts + parts,
    }
}

/// Frames per second sustained by a token rate: `rate * W / (parts * layers)`.
pub fn throughput_model(token_rate: f64, downsample: usize, parts: usize, layers: usize) -> Result<f64> {
    if !(token_rate.is_finite() && token_rate > 0.0) || downsample == 0 || parts == 0 || layers == 0 {
        return Err(invalid("throughput inputs must be positive"));
    }
    Ok(token_rate * downsample as f64 / (parts * layers) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{MotionSequence, HUMO263_DIM};
    use crate::parts::PartitionSpec;
    use crate::prq::config::PrqConfig;
    use crate::tokens::codec::serialize;

    fn setup() -> (CodebookSet, MotionSequence) {
        let cfg = PrqConfig {
            codebook_size: 8,
            latent_dim: 4,
            hidden_dim: 8,
            layers: 2,
            downsample: 4,
            ..PrqConfig::default()
        };
        let mut model = CodebookSet::untrained(&cfg, PartitionSpec::body_parts(), 3).unwrap();
        for k in 0..2 {
            for c in 0..8 {
                let row: Vec<f64> = (0..4).map(|i| ((c * 4 + i + k) as f64).sin()).collect();
                model.quantizer_mut().set_codeword(k, c, &row);
            }
        }
        let data = (0..11 * HUMO263_DIM).map(|i| (i as f64 * 0.013).cos()).collect();
        (model, MotionSequence::new(11, HUMO263_DIM, 20.0, HUMO263_V1, data).unwrap())
    }

    #[test]
    fn token_by_token_matches_batch() {
        let (model, m) = setup();
        let (_, grid) = model.encode(&m).unwrap();
        let v = VocabMap::new(0, 2, 8).unwrap();
        let s = serialize(&grid, TokenOrder::FrameByFrame, &v).unwrap();
        let batch = model.decode(&grid, 2).unwrap();
        let mut dec = StreamDecoder::new(&model, s.header.clone(), 2).unwrap();
        let mut out: Vec<f64> = Vec::new();
        for &id in &s.tokens {
            for f in dec.push(id).unwrap() {
                out.extend(f);
                // prefix consistency
                assert_eq!(&out[..], &batch.data()[..out.len()]);
            }
        }
        assert_eq!(dec.finish(), StreamStatus::Complete { frames: 11 });
        assert_eq!(out.len(), batch.data().len());
        assert!(out.iter().zip(batch.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn truncated_stream_emits_whole_steps() {
        let (model, m) = setup();
        let (_, grid) = model.encode(&m).unwrap();
        let v = VocabMap::new(0, 2, 8).unwrap();
        let s = serialize(&grid, TokenOrder::FrameByFrame, &v).unwrap();
        let mut dec = StreamDecoder::new(&model, s.header.clone(), 2).unwrap();
        // begin marker + 1.5 steps of 10 codes
        let mut frames = 0;
        for &id in &s.tokens[..16] {
            frames += dec.push(id).unwrap().len();
        }
        assert_eq!(frames, 4);
        assert_eq!(dec.finish(), StreamStatus::EndOfInput { frames: 4, pending: 5 });
    }

    #[test]
    fn layer_order_rejected_and_bad_ids_located() {
        let (model, m) = setup();
        let (_, grid) = model.encode(&m).unwrap();
        let v = VocabMap::new(0, 2, 8).unwrap();
        let s = serialize(&grid, TokenOrder::LayerByLayer, &v).unwrap();
        assert!(matches!(
            StreamDecoder::new(&model, s.header.clone(), 2),
            Err(Error::UnsupportedOrdering(_))
        ));
        let s = serialize(&grid, TokenOrder::FrameByFrame, &v).unwrap();
        let mut dec = StreamDecoder::new(&model, s.header.clone(), 2).unwrap();
        dec.push(s.tokens[0]).unwrap();
        dec.push(s.tokens[1]).unwrap();
        match dec.push(999) {
            Err(Error::CorruptStream { position, .. }) => assert_eq!(position, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn latency_counts() {
        assert_eq!(first_output_latency(TokenOrder::FrameByFrame, 50, 5, 4), 20);
        assert_eq!(first_output_latency(TokenOrder::LayerByLayer, 50, 5, 4), 3 * 50 * 5 + 5);
        for n in 1..20 {
            for l in 1..6 {
                assert!(
                    first_output_latency(TokenOrder::LayerByLayer, n, 5, l)
                        >= first_output_latency(TokenOrder::FrameByFrame, n, 5, l)
                );
            }
        }
    }

    #[test]
    fn throughput_values() {
        assert_eq!(throughput_model(100.0, 4, 5, 4).unwrap(), 20.0);
        assert_eq!(throughput_model(144.5, 4, 5, 4).unwrap(), 28.9);
        assert_eq!(throughput_model(100.0, 4, 5, 2).unwrap(), 40.0);
        assert!(throughput_model(0.0, 4, 5, 4).is_err());
    }
}
