//! Mesh ingestion, surface sampling, synthetic shapes and datasets.

pub mod mesh;
pub mod off;
pub mod ply;
pub mod synth;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::PointCloud;

pub use mesh::{sample_surface, TriangleMesh};
pub use off::parse_off;
pub use ply::{parse_ply, write_ply_colored, Coloring};
pub use synth::{jitter, synth_shape, ShapeKind};

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSample {
    pub cloud: PointCloud,
    pub class_id: usize,
}

impl DatasetSample {
    pub fn part_labels(&self) -> Option<&[usize]> {
        self.cloud.part_labels.as_deref()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<DatasetSample>,
    pub class_count: usize,
    pub part_count: usize,
    /// Part ids that belong to each class, used for per-shape IoU.
    pub class_parts: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn with_samples(&self, samples: Vec<DatasetSample>) -> Self {
        Dataset {
            samples,
            class_count: self.class_count,
            part_count: self.part_count,
            class_parts: self.class_parts.clone(),
        }
    }

    /// Per-class split with `train_fraction` of each class in the first set,
    /// deterministic per seed.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for class in 0..self.class_count {
            let mut members: Vec<&DatasetSample> =
                self.samples.iter().filter(|s| s.class_id == class).collect();
            members.shuffle(&mut rng);
            let cut = (members.len() as f64 * train_fraction).round() as usize;
            train.extend(members[..cut].iter().map(|&s| s.clone()));
            test.extend(members[cut..].iter().map(|&s| s.clone()));
        }
        (self.with_samples(train), self.with_samples(test))
    }

    /// Keeps samples whose class is in `classes`, relabeling nothing.
    pub fn filter_classes(&self, classes: &[usize]) -> Dataset {
        self.with_samples(
            self.samples
                .iter()
                .filter(|s| classes.contains(&s.class_id))
                .cloned()
                .collect(),
        )
    }
}

/// `per_class` samples of each kind, class ids in [`ShapeKind::ALL`] order.
pub fn synthetic_dataset(
    kinds: &[ShapeKind],
    per_class: usize,
    points: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    let mut samples = Vec::with_capacity(kinds.len() * per_class);
    for &kind in kinds {
        for i in 0..per_class {
            let s = seed
                .wrapping_mul(1_000_003)
                .wrapping_add((kind.class_id() * 100_000 + i) as u64);
            samples.push(synth_shape(kind, points, s, noise)?);
        }
    }
    Ok(Dataset {
        samples,
        class_count: ShapeKind::ALL.len(),
        part_count: synth::SYNTH_PART_COUNT,
        class_parts: ShapeKind::ALL.iter().map(|k| k.parts().to_vec()).collect(),
    })
}

/// Loads an OFF mesh (sampled to `points` with face normals) or an ASCII PLY cloud.
pub fn load_cloud(path: &Path, points: usize, seed: u64) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("off") => sample_surface(&parse_off(&text)?.cleaned(), points, seed),
        Some("ply") => parse_ply(&text),
        _ => Err(Error::invalid(format!(
            "{}: expected an .off or .ply file",
            path.display()
        ))),
    }
}

/// Reads a manifest of `<path> <class id>` lines (relative to the manifest's
/// directory, `#` comments allowed) and loads every entry.
pub fn load_manifest(path: &Path, points: usize, seed: u64) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut samples = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (file, class) = match (parts.next(), parts.next(), parts.next()) {
            (Some(f), Some(c), None) => (f, c),
            _ => {
                return Err(Error::Parse {
                    line: ln + 1,
                    message: format!("expected '<path> <class id>', got '{line}'"),
                })
            }
        };
        let class_id: usize = class.parse().map_err(|_| Error::Parse {
            line: ln + 1,
            message: format!("bad class id '{class}'"),
        })?;
        let file = PathBuf::from(file);
        let file = if file.is_absolute() { file } else { base.join(file) };
        let mut cloud = load_cloud(&file, points, seed.wrapping_add(samples.len() as u64))?;
        cloud.label = Some(class_id);
        samples.push(DatasetSample { cloud, class_id });
    }
    if samples.is_empty() {
        return Err(Error::invalid(format!("{}: empty manifest", path.display())));
    }
    let class_count = samples.iter().map(|s| s.class_id).max().unwrap_or(0) + 1;
    Ok(Dataset {
        samples,
        class_count: class_count.max(2),
        part_count: 2,
        class_parts: vec![vec![0, 1]; class_count.max(2)],
    })
}
