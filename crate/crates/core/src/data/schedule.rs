use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::DatasetManifest;
use crate::error::{Error, Result};

/// One training iteration. Indices point into the manifest's lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchSpec {
    Paired { index: usize },
    Unpaired { x: usize, y: usize },
}

impl BatchSpec {
    pub fn is_paired(&self) -> bool {
        matches!(self, BatchSpec::Paired { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochSchedule {
    pub entries: Vec<BatchSpec>,
    pub seed: u64,
}

impl EpochSchedule {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Occurrences of each paired index.
    pub fn paired_counts(&self, n_paired: usize) -> Vec<usize> {
        let mut counts = vec![0; n_paired];
        for e in &self.entries {
            if let BatchSpec::Paired { index } = e {
                counts[*index] += 1;
            }
        }
        counts
    }
}

/// Paired indices replicated round-robin to `target` copies; the first
/// `target % p` indices get the extra copy.
fn replicate(p: usize, target: usize) -> Vec<usize> {
    (0..target).map(|i| i % p).collect()
}

/// Builds one epoch: every unpaired sample once, paired samples replicated to
/// match the unpaired count when `balanced`, all shuffled together.
///
/// Unpaired X and Y streams are shuffled independently and zipped; if their
/// sizes differ the shorter stream is cycled. With no unpaired data, or more
/// paired than unpaired samples, each paired sample appears once.
pub fn build_epoch_schedule(manifest: &DatasetManifest, seed: u64, balanced: bool) -> Result<EpochSchedule> {
    let p = manifest.paired.len();
    let (ux, uy) = (manifest.unpaired_x.len(), manifest.unpaired_y.len());
    if p == 0 && ux == 0 && uy == 0 {
        return Err(Error::EmptyDataset);
    }
    if (ux == 0) != (uy == 0) {
        return Err(Error::InvalidInput(
            "unpaired training needs samples from both domains".into(),
        ));
    }
    let u = ux.max(uy);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut xs: Vec<usize> = (0..ux).collect();
    let mut ys: Vec<usize> = (0..uy).collect();
    xs.shuffle(&mut rng);
    ys.shuffle(&mut rng);
    let mut entries: Vec<BatchSpec> = (0..u)
        .map(|i| BatchSpec::Unpaired {
            x: xs[i % ux],
            y: ys[i % uy],
        })
        .collect();

    let copies = if balanced && p > 0 && u >= p {
        replicate(p, u)
    } else {
        (0..p).collect()
    };
    entries.extend(copies.into_iter().map(|index| BatchSpec::Paired { index }));
    entries.shuffle(&mut rng);
    Ok(EpochSchedule { entries, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::{PairedEntry, UnpairedEntry};

    pub(crate) fn manifest(p: usize, u: usize) -> DatasetManifest {
        let e = |i: usize| UnpairedEntry {
            id: format!("u{i}"),
            path: format!("u{i}.png").into(),
            pair: None,
        };
        DatasetManifest {
            paired: (0..p)
                .map(|i| PairedEntry {
                    id: format!("p{i}"),
                    x: "x.png".into(),
                    y: "y.png".into(),
                })
                .collect(),
            unpaired_x: (0..u).map(e).collect(),
            unpaired_y: (0..u).map(e).collect(),
            test: vec![],
            colormap: None,
        }
    }

    #[test]
    fn replication_examples() {
        let s = build_epoch_schedule(&manifest(2, 6), 0, true).unwrap();
        assert_eq!(s.len(), 12);
        assert_eq!(s.paired_counts(2), vec![3, 3]);
        let s = build_epoch_schedule(&manifest(4, 6), 0, true).unwrap();
        assert_eq!(s.paired_counts(4), vec![2, 2, 1, 1]);
        let s = build_epoch_schedule(&manifest(0, 5), 0, true).unwrap();
        assert!(s.entries.iter().all(|e| !e.is_paired()));
        assert_eq!(s.len(), 5);
    }

    #[test]
    fn unbalanced_lists_each_pair_once() {
        let s = build_epoch_schedule(&manifest(3, 20), 1, false).unwrap();
        assert_eq!(s.paired_counts(3), vec![1, 1, 1]);
        assert_eq!(s.len(), 23);
    }

    #[test]
    fn degenerate_sizes() {
        assert!(matches!(build_epoch_schedule(&manifest(0, 0), 0, true), Err(Error::EmptyDataset)));
        let s = build_epoch_schedule(&manifest(3, 0), 0, true).unwrap();
        assert_eq!(s.paired_counts(3), vec![1, 1, 1]);
        let s = build_epoch_schedule(&manifest(5, 2), 0, true).unwrap();
        assert_eq!(s.paired_counts(5), vec![1; 5]);
    }

    #[test]
    fn every_unpaired_sample_once_and_seeded() {
        let m = manifest(2, 9);
        let a = build_epoch_schedule(&m, 7, true).unwrap();
        let b = build_epoch_schedule(&m, 7, true).unwrap();
        assert_eq!(a, b);
        let mut xs: Vec<usize> = a
            .entries
            .iter()
            .filter_map(|e| match e {
                BatchSpec::Unpaired { x, .. } => Some(*x),
                _ => None,
            })
            .collect();
        xs.sort();
        assert_eq!(xs, (0..9).collect::<Vec<_>>());
        let c = build_epoch_schedule(&m, 8, true).unwrap();
        assert_ne!(a.entries, c.entries);
    }
}
