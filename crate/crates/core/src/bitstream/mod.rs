//! Byte formats: packed `.ffc` code streams and `.ffm` weight files.
//!
//! Both formats are little-endian throughout. See `docs/formats.md` at the
//! repository root for the field tables.

mod codes;
mod model;

pub use codes::{bits_per_index, header_len, pack_codes, payload_bits, unpack_codes, CodeStreamHeader, CODE_MAGIC};
pub use model::{load_model, save_model, WeightRecord, WeightSet, MODEL_MAGIC};
