//! File formats: text embeddings, the binary compressed format, JSON reports
//! and CSV tables.

pub mod binary;
pub mod json;
pub mod tables;
pub mod text;

pub use binary::{read_compressed, write_compressed};
pub use tables::{read_performance_table, write_csv};
pub use text::{read_text_embedding, write_text_embedding, TextFormat};
