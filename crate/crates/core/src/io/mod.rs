//! File formats, synthetic data and configuration.
//!
//! Binary layouts are documented in `FORMATS.md` at the repository root.

mod config;
mod format;
mod synth;

pub use config::{parse_config, parse_config_str, Config, CONFIG_KEYS};
pub use format::{
    decode_features, decode_quantiser, decode_student, decode_tokens, encode_features,
    encode_quantiser, encode_student, encode_tokens, inspect_bytes, read_features, read_quantiser,
    read_student, read_tokens, write_features, write_quantiser, write_student, write_tokens,
    FileSummary, FEATURE_HEADER_LEN, FEATURE_MAGIC, FORMAT_VERSION, QUANTISER_HEADER_LEN,
    QUANTISER_MAGIC, STUDENT_HEADER_LEN, STUDENT_MAGIC, TOKEN_HEADER_LEN, TOKEN_MAGIC,
};
pub use synth::{generate_synthetic, generate_synthetic_with_states, SynthConfig, SyntheticData};
