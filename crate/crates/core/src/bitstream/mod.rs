//! Wire format: quantized parameters coded with zigzag + Exp-Golomb behind a
//! fixed header, and the step-size search that produces them.

pub mod format;
pub mod golomb;
pub mod quant;
pub mod search;

pub use format::{deserialize, serialize, Header, Parsed, HEADER_LEN, MAGIC, VERSION};
pub use golomb::{exp_golomb_decode, exp_golomb_encode, unzigzag, zigzag};
pub use quant::{quantize_model, QuantizedModel};
pub use search::{mesh_search, Candidate, SearchResult};
