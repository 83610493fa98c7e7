//! Flat token streams over code grids.

pub mod codec;
pub mod stream;
pub mod vocab;

pub use codec::{
    deserialize, load_tokens, read_tokens, read_tokens_jsonl, save_tokens, serialize, write_tokens, write_tokens_jsonl,
    StreamHeader, TokenOrder, TokenStream, TOKEN_FORMAT_VERSION,
};
pub use stream::{first_output_latency, throughput_model, StreamDecoder, StreamStatus};
pub use vocab::{Token, VocabMap};
