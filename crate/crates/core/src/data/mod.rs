//! Synthetic video tasks, the on-disk tensor format and dataset manifests.

mod format;
mod manifest;
mod synthetic;

pub use format::{decode_tensor, encode_tensor, read_tensor, write_atomic, write_tensor, MAGIC, VERSION};
pub use manifest::{load_dataset, read_manifest, save_dataset, write_manifest, ManifestEntry};
pub use synthetic::{generate, Sample, SyntheticTask, TaskKind, BLOB};
