//! Dataset manifests, augmentation, epoch scheduling, the fake-image pool
//! and the procedural toy dataset.

pub mod augment;
pub mod manifest;
pub mod pool;
pub mod schedule;
pub mod synth;

use std::path::Path;

use crate::error::{Error, Result};

pub use augment::{augment, augment_pair, AugmentConfig, Transform};
pub use manifest::{DatasetManifest, PairedEntry, SampleRecord, Split, UnpairedEntry};
pub use pool::ImagePool;
pub use schedule::{build_epoch_schedule, BatchSpec, EpochSchedule};
pub use synth::{synth_toy_dataset, toy_colormap, SynthConfig};

/// Writes `bytes` to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
