//! Check-in ingestion: raw dump parsing, filtering, chronological splitting
//! and the canonical on-disk dataset format.

mod canonical;
mod dataset;
mod preprocess;
mod raw;

pub use canonical::{load_canonical, save_canonical, CANONICAL_VERSION};
pub use dataset::{CheckIn, Dataset};
pub use preprocess::{preprocess, split, PreprocessConfig, DEFAULT_TRAIN_FRACTION};
pub use raw::{parse_raw, parse_raw_reader, ColumnMapping, ParsedCheckIns, RawCheckIn, TimeFormat};
