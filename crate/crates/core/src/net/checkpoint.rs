//! Plain-text checkpoints: configuration, progress, parameters and optimizer moments.
//!
//! ```text
//! srinet-checkpoint 1
//! config <key> <value>        (model configuration)
//! train <key> <value>         (training configuration)
//! epoch <next epoch>
//! adam_step <t>
//! param|moment1|moment2 <name> <rows> <cols>
//! <rows lines of cols values>
//! ```
//!
//! Floats are written in shortest round-trip form, so save then load is exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::net::model::{Model, ModelConfig};
use crate::net::train::{Adam, TrainConfig, Trainer};

const MAGIC: &str = "srinet-checkpoint";
const VERSION: u32 = 1;

fn train_pairs(cfg: &TrainConfig) -> Vec<(&'static str, String)> {
    vec![
        ("lr0", cfg.lr0.to_string()),
        ("decay", cfg.decay.to_string()),
        ("decay_every", cfg.decay_every.to_string()),
        ("lr_floor", cfg.lr_floor.to_string()),
        ("beta1", cfg.beta1.to_string()),
        ("beta2", cfg.beta2.to_string()),
        ("adam_eps", cfg.adam_eps.to_string()),
        ("epochs", cfg.epochs.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("jitter_sigma", cfg.jitter_sigma.to_string()),
        ("jitter_clip", cfg.jitter_clip.to_string()),
        ("seed", cfg.seed.to_string()),
    ]
}

fn train_from_pairs(pairs: &BTreeMap<String, String>) -> Result<TrainConfig> {
    fn get<T: std::str::FromStr>(pairs: &BTreeMap<String, String>, k: &str) -> Result<T> {
        pairs
            .get(k)
            .ok_or_else(|| Error::invalid(format!("checkpoint lacks training key '{k}'")))?
            .parse()
            .map_err(|_| Error::invalid(format!("bad training value for '{k}'")))
    }
    Ok(TrainConfig {
        lr0: get(pairs, "lr0")?,
        decay: get(pairs, "decay")?,
        decay_every: get(pairs, "decay_every")?,
        lr_floor: get(pairs, "lr_floor")?,
        beta1: get(pairs, "beta1")?,
        beta2: get(pairs, "beta2")?,
        adam_eps: get(pairs, "adam_eps")?,
        epochs: get(pairs, "epochs")?,
        batch_size: get(pairs, "batch_size")?,
        jitter_sigma: get(pairs, "jitter_sigma")?,
        jitter_clip: get(pairs, "jitter_clip")?,
        seed: get(pairs, "seed")?,
    })
}

fn write_tensor(out: &mut String, kind: &str, name: &str, t: &Array2<f64>) {
    let _ = writeln!(out, "{kind} {name} {} {}", t.nrows(), t.ncols());
    for row in t.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
}

pub fn checkpoint_string(trainer: &Trainer, train: &TrainConfig) -> String {
    let mut out = format!("{MAGIC} {VERSION}\n");
    for (k, v) in trainer.model.config.to_pairs() {
        let _ = writeln!(out, "config {k} {v}");
    }
    for (k, v) in train_pairs(train) {
        let _ = writeln!(out, "train {k} {v}");
    }
    let _ = writeln!(out, "epoch {}", trainer.next_epoch);
    let _ = writeln!(out, "adam_step {}", trainer.adam.t);
    let names = trainer.model.tensor_names();
    let params = trainer.model.tensors();
    for (kind, set) in [
        ("param", params),
        ("moment1", trainer.adam.m.iter().collect()),
        ("moment2", trainer.adam.v.iter().collect()),
    ] {
        for (name, t) in names.iter().zip(set) {
            write_tensor(&mut out, kind, name, t);
        }
    }
    out
}

pub fn save_checkpoint(path: &Path, trainer: &Trainer, train: &TrainConfig) -> Result<()> {
    std::fs::write(path, checkpoint_string(trainer, train)).map_err(|e| Error::io(path, e))
}

pub fn parse_checkpoint(text: &str) -> Result<(Trainer, TrainConfig)> {
    let err = |line: usize, message: String| Error::Parse { line, message };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));

    match lines.next() {
        Some((_, h)) if h == format!("{MAGIC} {VERSION}") => {}
        Some((n, h)) => return Err(err(n, format!("unsupported checkpoint header '{h}'"))),
        None => return Err(err(1, "empty checkpoint".into())),
    }

    let mut config = BTreeMap::new();
    let mut train = BTreeMap::new();
    let mut epoch = None;
    let mut adam_step = None;
    let mut tensors: BTreeMap<(String, String), Array2<f64>> = BTreeMap::new();

    while let Some((n, line)) = lines.next() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields[0] {
            "config" | "train" if fields.len() == 3 => {
                let map = if fields[0] == "config" { &mut config } else { &mut train };
                map.insert(fields[1].to_string(), fields[2].to_string());
            }
            "epoch" | "adam_step" if fields.len() == 2 => {
                let v: u64 = fields[1]
                    .parse()
                    .map_err(|_| err(n, format!("bad integer '{}'", fields[1])))?;
                if fields[0] == "epoch" {
                    epoch = Some(v as usize);
                } else {
                    adam_step = Some(v);
                }
            }
            "param" | "moment1" | "moment2" if fields.len() == 4 => {
                let dims: Vec<usize> = fields[2..]
                    .iter()
                    .map(|d| d.parse().map_err(|_| err(n, format!("bad dimension '{d}'"))))
                    .collect::<Result<_>>()?;
                let mut values = Vec::with_capacity(dims[0] * dims[1]);
                for _ in 0..dims[0] {
                    let (rn, row) = lines
                        .next()
                        .ok_or_else(|| err(n, format!("truncated tensor {}", fields[1])))?;
                    let before = values.len();
                    for tok in row.split_whitespace() {
                        values.push(tok.parse::<f64>().map_err(|_| err(rn, format!("bad number '{tok}'")))?);
                    }
                    if values.len() - before != dims[1] {
                        return Err(err(rn, format!("expected {} values", dims[1])));
                    }
                }
                let t = Array2::from_shape_vec((dims[0], dims[1]), values).expect("shape checked");
                tensors.insert((fields[0].to_string(), fields[1].to_string()), t);
            }
            _ => return Err(err(n, format!("unexpected line '{line}'"))),
        }
    }

    let model_cfg = ModelConfig::from_pairs(&config)?;
    let train_cfg = train_from_pairs(&train)?;
    let mut model = Model::new(model_cfg, 0)?;
    let mut adam = Adam::new(&model);
    adam.t = adam_step.ok_or_else(|| Error::invalid("checkpoint lacks adam_step"))?;
    let names = model.tensor_names();
    let mut take = |kind: &str, name: &str, dest: &mut Array2<f64>| -> Result<()> {
        let t = tensors
            .remove(&(kind.to_string(), name.to_string()))
            .ok_or_else(|| Error::invalid(format!("checkpoint lacks {kind} {name}")))?;
        if t.dim() != dest.dim() {
            return Err(Error::invalid(format!(
                "{kind} {name} has shape {:?}, model expects {:?}",
                t.dim(),
                dest.dim()
            )));
        }
        *dest = t;
        Ok(())
    };
    for (name, dest) in names.iter().zip(model.tensors_mut()) {
        take("param", name, dest)?;
    }
    for ((name, m), v) in names.iter().zip(adam.m.iter_mut()).zip(adam.v.iter_mut()) {
        take("moment1", name, m)?;
        take("moment2", name, v)?;
    }
    if let Some((kind, name)) = tensors.keys().next() {
        return Err(Error::invalid(format!("unknown tensor {kind} {name}")));
    }
    Ok((
        Trainer {
            model,
            adam,
            next_epoch: epoch.ok_or_else(|| Error::invalid("checkpoint lacks epoch"))?,
        },
        train_cfg,
    ))
}

pub fn load_checkpoint(path: &Path) -> Result<(Trainer, TrainConfig)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text)
}
