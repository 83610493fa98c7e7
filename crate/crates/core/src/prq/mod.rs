//! Part-aware residual quantization.

pub mod config;
pub mod gradcheck;
pub mod io;
pub mod model;
pub mod net;
pub mod quantizer;
pub mod train;

pub use config::{Activation, PrqConfig};
pub use model::{CapacityReport, CodeGrid, CodebookSet, PartLatentGrid};
pub use quantizer::{Quantized, ResidualQuantizer};
pub use train::{train, EpochStats, LossTerms, TrainReport, Trainer};
pub use gradcheck::{check_gradients, GradCheckOptions, GradCheckReport, Stability};
pub use io::{load_codebook, read_codebook, save_codebook, write_codebook, CODEBOOK_FORMAT_VERSION};
