//! Run configuration: `key = value` files merged with command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::data::{load_manifest, synthetic_dataset, Dataset, ShapeKind};
use crate::error::{Error, Result};
use crate::keypoint::Fusion;
use crate::mix_seed;
use crate::net::{Encoding, ModelConfig, Task, TrainConfig};

/// Every key a config file may set.
pub const KEYS: &[&str] = &[
    "seed",
    "preset",
    "task",
    "encoding",
    "fusion",
    "ablate",
    "k",
    "response_k",
    "points",
    "normalize_scale",
    "normalize_response",
    "rotate",
    "epochs",
    "batch_size",
    "lr",
    "trials",
    "per_class",
    "noise",
    "shapes",
    "dataset",
];

pub const SEED_ENV: &str = "SRINET_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Narrow layers for clouds of a few dozen points.
    Toy,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablate {
    None,
    Ga,
    Kpd,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub preset: Preset,
    pub task: Task,
    pub encoding: Encoding,
    pub fusion: Fusion,
    pub ablate: Ablate,
    pub k: Option<usize>,
    pub response_k: Option<usize>,
    pub points: Option<usize>,
    pub normalize_scale: bool,
    pub normalize_response: Option<bool>,
    /// Rotation seed, when inputs are to be rotated.
    pub rotate: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub trials: usize,
    pub per_class: usize,
    pub noise: f64,
    pub shapes: Vec<ShapeKind>,
    /// Manifest of `<path> <class>` lines; synthetic shapes when absent.
    pub dataset: Option<PathBuf>,
}

/// Parses `key = value` lines; `#` starts a comment. Unknown keys are rejected.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("expected 'key = value', got '{line}'"),
        })?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("unknown key '{key}'"),
            });
        }
        out.insert(key.to_string(), value.trim().to_string());
    }
    Ok(out)
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_text(&text).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        e => e,
    })
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("bad value '{value}' for '{key}'")))
}

impl RunConfig {
    /// Builds a configuration from merged pairs. The seed falls back to
    /// `env_seed`, then to 0.
    pub fn from_pairs(pairs: &BTreeMap<String, String>, env_seed: Option<&str>) -> Result<Self> {
        if let Some(key) = pairs.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::invalid(format!("unknown key '{key}'")));
        }
        let get = |k: &str| pairs.get(k).map(String::as_str);
        let opt = |k: &str| -> Result<Option<usize>> { get(k).map(|v| parse(k, v)).transpose() };

        let seed = match (get("seed"), env_seed) {
            (Some(v), _) => parse("seed", v)?,
            (None, Some(v)) => parse(SEED_ENV, v)?,
            (None, None) => 0,
        };
        let preset = match get("preset").unwrap_or("toy") {
            "toy" => Preset::Toy,
            "full" => Preset::Full,
            other => return Err(Error::invalid(format!("unknown preset '{other}'"))),
        };
        let ablate = match get("ablate").unwrap_or("none") {
            "none" => Ablate::None,
            "ga" => Ablate::Ga,
            "kpd" => Ablate::Kpd,
            other => return Err(Error::invalid(format!("unknown ablation '{other}'"))),
        };
        let rotate = match get("rotate") {
            None | Some("false") => None,
            Some("true") | Some("") => Some(mix_seed(seed, 0x5EED)),
            Some(v) => Some(parse("rotate", v)?),
        };
        let shapes = match get("shapes") {
            Some(list) => list
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<Result<Vec<ShapeKind>>>()?,
            None => ShapeKind::ALL.to_vec(),
        };
        let cfg = RunConfig {
            seed,
            preset,
            task: get("task").unwrap_or("classify").parse()?,
            encoding: get("encoding").unwrap_or("projection").parse()?,
            fusion: get("fusion").unwrap_or("sum").parse()?,
            ablate,
            k: opt("k")?,
            response_k: opt("response_k")?,
            points: opt("points")?,
            normalize_scale: get("normalize_scale").map(|v| parse("normalize_scale", v)).transpose()?.unwrap_or(true),
            normalize_response: get("normalize_response")
                .map(|v| parse("normalize_response", v))
                .transpose()?,
            rotate,
            epochs: opt("epochs")?,
            batch_size: opt("batch_size")?,
            lr: get("lr").map(|v| parse("lr", v)).transpose()?,
            trials: opt("trials")?.unwrap_or(100),
            per_class: opt("per_class")?.unwrap_or(100),
            noise: get("noise").map(|v| parse("noise", v)).transpose()?.unwrap_or(0.01),
            shapes,
            dataset: get("dataset").map(PathBuf::from),
        };
        if cfg.shapes.is_empty() || cfg.per_class == 0 {
            return Err(Error::invalid("need at least one shape and one sample per class"));
        }
        Ok(cfg)
    }

    pub fn model_config(&self, class_count: usize, part_count: usize) -> Result<ModelConfig> {
        let mut cfg = match self.preset {
            Preset::Toy => ModelConfig::toy(self.task, class_count, part_count),
            Preset::Full => match self.task {
                Task::Classify => ModelConfig::classify(class_count),
                Task::Segment => ModelConfig::segment(class_count, part_count),
            },
        };
        cfg.encoding = self.encoding;
        cfg.fusion = self.fusion;
        cfg.use_graph_agg = self.ablate != Ablate::Ga;
        cfg.use_keypoint = self.ablate != Ablate::Kpd;
        cfg.normalize_scale = self.normalize_scale;
        if let Some(k) = self.k {
            cfg.k_neighbors = k;
        }
        if let Some(k) = self.response_k {
            cfg.response_k = k;
        }
        if let Some(n) = self.normalize_response {
            cfg.normalize_response = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let base = match self.preset {
            Preset::Toy => TrainConfig::toy(),
            Preset::Full => TrainConfig::default(),
        };
        let cfg = TrainConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            lr0: self.lr.unwrap_or(base.lr0),
            seed: self.seed,
            ..base
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Points per cloud for training data.
    pub fn train_points(&self) -> usize {
        self.points.unwrap_or(match self.preset {
            Preset::Toy => 64,
            Preset::Full => 1024,
        })
    }

    /// The full dataset, before splitting.
    pub fn dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            Some(path) => load_manifest(path, self.train_points(), self.seed),
            None => synthetic_dataset(&self.shapes, self.per_class, self.train_points(), self.noise, self.seed),
        }
    }

    /// Stratified 80/20 train/test split of [`dataset`](Self::dataset).
    pub fn split_dataset(&self) -> Result<(Dataset, Dataset)> {
        let data = self.dataset()?;
        if self.task == Task::Segment && data.samples.iter().any(|s| s.part_labels().is_none()) {
            return Err(Error::invalid("segmentation needs part labels on every sample"));
        }
        Ok(data.split(0.8, self.seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(text: &str) -> BTreeMap<String, String> {
        parse_config_text(text).unwrap()
    }

    #[test]
    fn parses_comments_and_rejects_unknown_keys() {
        let p = pairs("# run\nseed = 4 # inline\n\nencoding=ppf\n");
        assert_eq!(p["seed"], "4");
        assert_eq!(p["encoding"], "ppf");
        assert!(matches!(parse_config_text("colour = red\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_config_text("seed 4\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn seed_precedence() {
        assert_eq!(RunConfig::from_pairs(&pairs("seed=3"), Some("9")).unwrap().seed, 3);
        assert_eq!(RunConfig::from_pairs(&pairs(""), Some("9")).unwrap().seed, 9);
        assert_eq!(RunConfig::from_pairs(&pairs(""), None).unwrap().seed, 0);
        assert!(RunConfig::from_pairs(&pairs(""), Some("x")).is_err());
    }

    #[test]
    fn ablation_and_overrides_reach_the_model() {
        let run = RunConfig::from_pairs(&pairs("ablate=ga\nk=5\nfusion=mul\nencoding=raw_xyz"), None).unwrap();
        let m = run.model_config(5, 9).unwrap();
        assert!(!m.use_graph_agg && m.use_keypoint);
        assert_eq!(m.k_neighbors, 5);
        assert_eq!(m.fusion, Fusion::Mul);
        assert_eq!(m.encoding, Encoding::RawXyz);
        let kpd = RunConfig::from_pairs(&pairs("ablate=kpd"), None).unwrap();
        assert!(!kpd.model_config(5, 9).unwrap().use_keypoint);
        assert!(RunConfig::from_pairs(&pairs("ablate=all"), None).is_err());
    }

    #[test]
    fn rotate_values() {
        assert_eq!(RunConfig::from_pairs(&pairs("rotate=7"), None).unwrap().rotate, Some(7));
        assert!(RunConfig::from_pairs(&pairs("rotate=true"), None).unwrap().rotate.is_some());
        assert_eq!(RunConfig::from_pairs(&pairs("rotate=false"), None).unwrap().rotate, None);
    }
}
