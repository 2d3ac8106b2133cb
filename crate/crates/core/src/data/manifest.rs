use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::ColorMap;
use crate::image::Domain;
use crate::selection::SelectionResult;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

/// One row of the manifest file. Paths are relative to the manifest.
///
/// `pair_path` names the ground-truth counterpart in the other domain, if one
/// exists. Training uses it only for rows marked `paired` or chosen by a
/// selection; test rows always need it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub domain: Domain,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_path: Option<String>,
    #[serde(default)]
    pub split: Split,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub paired: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestFile {
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    colormap: Option<ColorMap>,
    samples: Vec<SampleRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairedEntry {
    pub id: String,
    pub x: PathBuf,
    pub y: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnpairedEntry {
    pub id: String,
    pub path: PathBuf,
    /// Ground-truth counterpart, available for annotation but not trained on.
    pub pair: Option<PathBuf>,
}

/// Resolved view of a manifest: paired training samples, the two unpaired
/// streams and the held-out evaluation pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub paired: Vec<PairedEntry>,
    pub unpaired_x: Vec<UnpairedEntry>,
    pub unpaired_y: Vec<UnpairedEntry>,
    pub test: Vec<PairedEntry>,
    pub colormap: Option<ColorMap>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ManifestFile = serde_json::from_str(&text)?;
        if file.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("unsupported manifest version {}", file.version)));
        }
        let root = path.parent().unwrap_or(Path::new("."));
        Self::from_records(root, file.samples, file.colormap)
    }

    pub fn from_records(root: &Path, records: Vec<SampleRecord>, colormap: Option<ColorMap>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut m = DatasetManifest {
            paired: Vec::new(),
            unpaired_x: Vec::new(),
            unpaired_y: Vec::new(),
            test: Vec::new(),
            colormap,
        };
        for r in records {
            if !seen.insert((r.domain, r.split, r.paired, r.id.clone())) {
                return Err(Error::InvalidInput(format!("duplicate sample id `{}`", r.id)));
            }
            let path = root.join(&r.path);
            let pair = r.pair_path.as_ref().map(|p| root.join(p));
            let need_pair = |what: &str| -> Result<PathBuf> {
                if r.domain != Domain::X {
                    return Err(Error::InvalidInput(format!("{what} sample `{}` must be in domain X", r.id)));
                }
                pair.clone()
                    .ok_or_else(|| Error::InvalidInput(format!("{what} sample `{}` has no pair_path", r.id)))
            };
            match (r.split, r.paired, r.domain) {
                (Split::Test, _, _) => {
                    let y = need_pair("test")?;
                    m.test.push(PairedEntry { id: r.id, x: path, y });
                }
                (Split::Train, true, _) => {
                    let y = need_pair("paired")?;
                    m.paired.push(PairedEntry { id: r.id, x: path, y });
                }
                (Split::Train, false, Domain::X) => m.unpaired_x.push(UnpairedEntry { id: r.id, path, pair }),
                (Split::Train, false, Domain::Y) => m.unpaired_y.push(UnpairedEntry { id: r.id, path, pair }),
            }
        }
        Ok(m)
    }

    /// Writes the manifest with paths made relative to its directory.
    pub fn save(&self, path: &Path) -> Result<()> {
        let root = path.parent().unwrap_or(Path::new(""));
        let rel = |p: &Path| -> String {
            p.strip_prefix(root).unwrap_or(p).to_string_lossy().replace('\\', "/")
        };
        let mut samples = Vec::new();
        for e in &self.paired {
            samples.push(SampleRecord {
                id: e.id.clone(),
                domain: Domain::X,
                path: rel(&e.x),
                pair_path: Some(rel(&e.y)),
                split: Split::Train,
                paired: true,
            });
        }
        for (list, domain) in [(&self.unpaired_x, Domain::X), (&self.unpaired_y, Domain::Y)] {
            for e in list {
                samples.push(SampleRecord {
                    id: e.id.clone(),
                    domain,
                    path: rel(&e.path),
                    pair_path: e.pair.as_deref().map(rel),
                    split: Split::Train,
                    paired: false,
                });
            }
        }
        for e in &self.test {
            samples.push(SampleRecord {
                id: e.id.clone(),
                domain: Domain::X,
                path: rel(&e.x),
                pair_path: Some(rel(&e.y)),
                split: Split::Test,
                paired: false,
            });
        }
        let file = ManifestFile {
            version: MANIFEST_VERSION,
            colormap: self.colormap.clone(),
            samples,
        };
        super::write_atomic(path, serde_json::to_string_pretty(&file)?.as_bytes())
    }

    pub fn is_empty(&self) -> bool {
        self.paired.is_empty() && self.unpaired_x.is_empty() && self.unpaired_y.is_empty()
    }

    /// Unpaired photos whose ground truth could be obtained.
    pub fn annotatable(&self) -> Vec<&UnpairedEntry> {
        self.unpaired_x.iter().filter(|e| e.pair.is_some()).collect()
    }

    /// Adds every selected sample as a paired entry. The samples stay in the
    /// unpaired streams as well.
    pub fn with_selection(&self, selection: &SelectionResult) -> Result<Self> {
        let mut out = self.clone();
        for id in selection.selected_ids() {
            let e = self
                .unpaired_x
                .iter()
                .find(|e| e.id == id)
                .ok_or_else(|| Error::InvalidInput(format!("selected id `{id}` not in manifest")))?;
            let y = e
                .pair
                .clone()
                .ok_or_else(|| Error::InvalidInput(format!("selected id `{id}` has no pair_path")))?;
            if out.paired.iter().any(|p| p.id == id) {
                continue;
            }
            out.paired.push(PairedEntry {
                id: id.to_string(),
                x: e.path.clone(),
                y,
            });
        }
        Ok(out)
    }

    /// Drops both unpaired streams (purely supervised training).
    pub fn paired_only(&self) -> Self {
        Self {
            unpaired_x: Vec::new(),
            unpaired_y: Vec::new(),
            ..self.clone()
        }
    }

    /// Drops paired samples (purely unsupervised training).
    pub fn unpaired_only(&self) -> Self {
        Self {
            paired: Vec::new(),
            ..self.clone()
        }
    }

    /// Fails on the first training or test file that does not exist.
    pub fn check_files(&self) -> Result<()> {
        let paths = self
            .paired
            .iter()
            .chain(&self.test)
            .flat_map(|e| [&e.x, &e.y])
            .chain(self.unpaired_x.iter().chain(&self.unpaired_y).map(|e| &e.path));
        for p in paths {
            if !p.is_file() {
                return Err(Error::MissingFile(p.clone()));
            }
        }
        Ok(())
    }
}
