//! Dataset ingestion and on-disk formats.

mod csv;
mod idx;
mod model_file;
mod pgm;
mod preprocess;

use thiserror::Error;

pub use csv::{format_sig, write_metrics_csv, METRICS_HEADER};
pub use idx::{read_idx, read_idx_images, read_idx_labels, write_idx, IdxImages, RawMnist};
pub use model_file::{read_model, read_model_from, write_model, write_model_to, MODEL_MAGIC, MODEL_VERSION};
pub use pgm::{read_pgm, write_pgm_grid, GrayImage, ImageGrid};
pub use preprocess::{
    gaussianify, gaussianify_images, map_to_range, prepare, select_subset, Dataset, Dither, Provenance,
};

/// Malformed or unsupported file contents.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic number in {what}: expected {expected}, found {found}")]
    BadMagic { what: &'static str, expected: String, found: String },

    #[error("unsupported model format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("truncated {what}: expected {expected} bytes, found {found}")]
    Truncated { what: &'static str, expected: u64, found: u64 },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("{0}")]
    Invalid(String),
}
