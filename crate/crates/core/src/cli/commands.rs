//! Command implementations. Every output depends only on the inputs and the seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Zip};

use crate::cli::{Outcome, RunConfig};
use crate::data::{load_cloud, synth_shape, write_ply_colored, Coloring, ShapeKind};
use crate::data::synth::SYNTH_PART_COUNT;
use crate::error::{Error, Result};
use crate::geom::{center_cloud, normalize_scale, random_rotation, select_axes, PointCloud};
use crate::graph::{graph_aggregate_forward, knn_graph};
use crate::keypoint::{estimate_normals_with, keypoint_response, DEFAULT_RESPONSE_K};
use crate::mix_seed;
use crate::net::checkpoint::{load_checkpoint, save_checkpoint};
use crate::net::{encode, evaluate, Encoding, Model, Trainer};

pub const FEATURE_HEADER: &str = "c1,c2,c3,r";
pub const PPF_HEADER: &str = "cos_nref_d,cos_n_d,cos_nref_n,d";
pub const XYZ_HEADER: &str = "x,y,z";
pub const AXES_HEADER: &str = "axis,x,y,z";
pub const METRICS_HEADER: &str = "epoch,split,loss,accuracy,iou";
pub const INVARIANCE_HEADER: &str = "check,max_deviation,tolerance,status";
pub const RESPONSE_HEADER: &str = "x,y,z,response";

/// Points sampled from a mesh when `--points` is not given.
pub const DEFAULT_MESH_POINTS: usize = 1024;

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `feats.csv` -> `feats.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn load_input(run: &RunConfig, input: &Path) -> Result<PointCloud> {
    let cloud = load_cloud(input, run.points.unwrap_or(DEFAULT_MESH_POINTS), run.seed)?;
    Ok(match run.rotate {
        Some(r) => cloud.rotated(&random_rotation(r)),
        None => cloud,
    })
}

fn csv_rows(header: &str, rows: &Array2<f64>) -> String {
    let mut out = format!("{header}\n");
    for row in rows.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.10}")).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

pub fn extract(run: &RunConfig, input: &Path, output: &Path) -> Result<Outcome> {
    let cloud = load_input(run, input)?;
    let mut cfg = run.model_config(2, 2)?;
    cfg.use_graph_agg = false;
    cfg.use_keypoint = false;
    // only used to estimate normals for point pair features
    cfg.response_k = run.k.unwrap_or(DEFAULT_RESPONSE_K);
    let encoded = encode(&cfg, &cloud)?;
    let header = match cfg.encoding {
        Encoding::Projection => FEATURE_HEADER,
        Encoding::Ppf => PPF_HEADER,
        Encoding::RawXyz => XYZ_HEADER,
    };
    write_file(output, &csv_rows(header, &encoded.points))?;

    if cfg.encoding != Encoding::RawXyz {
        let (centered, _) = center_cloud(&cloud)?;
        let scaled = if cfg.normalize_scale { normalize_scale(&centered)? } else { centered };
        let axes = select_axes(&scaled, cfg.axis_eps)?;
        let mut text = format!("{AXES_HEADER}\n");
        for (i, a) in axes.axes().iter().enumerate() {
            let _ = writeln!(text, "a{},{:.10},{:.10},{:.10}", i + 1, a.x, a.y, a.z);
        }
        write_file(&sibling(output, "axes.csv"), &text)?;
    }
    println!("wrote {} x {} features to {}", encoded.points.nrows(), encoded.points.ncols(), output.display());
    Ok(Outcome::Success)
}

pub fn keypoints(run: &RunConfig, input: &Path, output: &Path) -> Result<Outcome> {
    let cloud = load_input(run, input)?;
    let k = run.k.unwrap_or(DEFAULT_RESPONSE_K);
    let graph = knn_graph(&cloud.points, k)?;
    let normals = match &cloud.normals {
        Some(ns) => ns.clone(),
        None if k < 3 => return Err(Error::invalid("estimating normals needs k >= 3")),
        None => estimate_normals_with(&cloud.points, &graph)?,
    };
    let response = keypoint_response(&normals, &graph)?;
    write_ply_colored(&cloud, Coloring::Scalars(&response.values), output)?;

    let mut text = format!("{RESPONSE_HEADER}\n");
    for (p, r) in cloud.points.iter().zip(&response.values) {
        let _ = writeln!(text, "{:.10},{:.10},{:.10},{:.10}", p.x, p.y, p.z, r);
    }
    write_file(&sibling(output, "response.csv"), &text)?;
    println!("wrote {} responses to {}", response.values.len(), output.display());
    Ok(Outcome::Success)
}

fn max_abs_diff<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>, b: &ndarray::Array<f64, D>) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    let mut worst: f64 = 0.0;
    Zip::from(a).and(b).for_each(|x, y| worst = worst.max((x - y).abs()));
    worst
}

/// One line of the invariance report.
#[derive(Clone, Debug, PartialEq)]
pub struct InvarianceCheck {
    pub name: &'static str,
    pub max_deviation: f64,
    pub tolerance: f64,
}

impl InvarianceCheck {
    pub fn passed(&self) -> bool {
        self.max_deviation < self.tolerance
    }
}

/// Largest change of every invariant quantity over `trials` random
/// (synthetic cloud, rotation) pairs, for one randomly initialized model.
pub fn invariance_report(run: &RunConfig, trials: usize) -> Result<Vec<InvarianceCheck>> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let cfg = run.model_config(ShapeKind::ALL.len(), SYNTH_PART_COUNT)?;
    let model = Model::new(cfg.clone(), run.seed)?;
    let points = run.points.unwrap_or(64);
    let mut checks = vec![
        InvarianceCheck { name: "features", max_deviation: 0.0, tolerance: 1e-7 },
        InvarianceCheck { name: "neighborhoods", max_deviation: 0.0, tolerance: 1e-7 },
        InvarianceCheck { name: "response", max_deviation: 0.0, tolerance: 1e-7 },
        InvarianceCheck { name: "side_branch", max_deviation: 0.0, tolerance: 1e-5 },
        InvarianceCheck { name: "logits", max_deviation: 0.0, tolerance: 1e-5 },
    ];
    let mut bump = |i: usize, d: f64| checks[i].max_deviation = checks[i].max_deviation.max(d);
    for t in 0..trials as u64 {
        let kind = run.shapes[t as usize % run.shapes.len()];
        let sample = synth_shape(kind, points, mix_seed(run.seed, 2 * t), run.noise)?;
        let rotation = random_rotation(mix_seed(run.seed, 2 * t + 1));
        let a = encode(&cfg, &sample.cloud)?;
        let b = encode(&cfg, &sample.cloud.rotated(&rotation))?;
        bump(0, max_abs_diff(&a.points, &b.points));
        if let (Some(ha), Some(hb)) = (&a.neighborhoods, &b.neighborhoods) {
            bump(1, max_abs_diff(ha, hb));
            if let Some(agg) = &model.side_agg {
                let (sa, _) = graph_aggregate_forward(agg, ha)?;
                let (sb, _) = graph_aggregate_forward(agg, hb)?;
                bump(3, max_abs_diff(&sa, &sb));
            }
        }
        if let (Some(ra), Some(rb)) = (&a.response, &b.response) {
            let d = ra.iter().zip(rb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            bump(2, d);
        }
        bump(4, max_abs_diff(&model.logits(&a)?, &model.logits(&b)?));
    }
    Ok(checks)
}

pub fn invariance_test(run: &RunConfig, output: Option<&Path>) -> Result<Outcome> {
    let checks = invariance_report(run, run.trials)?;
    let mut text = format!("{INVARIANCE_HEADER}\n");
    for c in &checks {
        let status = if c.passed() { "pass" } else { "FAIL" };
        let _ = writeln!(text, "{},{:.3e},{:.0e},{status}", c.name, c.max_deviation, c.tolerance);
    }
    print!("{text}");
    if let Some(path) = output {
        write_file(path, &text)?;
    }
    Ok(if checks.iter().all(InvarianceCheck::passed) {
        Outcome::Success
    } else {
        Outcome::PropertyFailure
    })
}

fn metrics_row(epoch: usize, split: &str, loss: f64, accuracy: f64, iou: Option<f64>) -> String {
    let iou = iou.map(|v| format!("{v:.6}")).unwrap_or_default();
    format!("{epoch},{split},{loss:.6},{accuracy:.6},{iou}\n")
}

pub fn train(run: &RunConfig, output: &Path, resume: Option<&Path>) -> Result<Outcome> {
    let (train_set, test_set) = run.split_dataset()?;
    let (mut trainer, cfg) = match resume {
        Some(path) => {
            let (trainer, mut cfg) = load_checkpoint(path)?;
            if let Some(e) = run.epochs {
                cfg.epochs = e;
            }
            (trainer, cfg)
        }
        None => {
            let model = Model::new(run.model_config(train_set.class_count, train_set.part_count)?, run.seed)?;
            (Trainer::new(model), run.train_config()?)
        }
    };
    let mc = &trainer.model.config;
    if mc.class_count < train_set.class_count || mc.part_count < train_set.part_count {
        return Err(Error::invalid("checkpoint was built for fewer classes or parts than the dataset has"));
    }

    std::fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    let metrics_path = output.join("metrics.csv");
    let ckpt_path = output.join("model.ckpt");
    let mut metrics = format!("{METRICS_HEADER}\n");
    if resume.is_some() {
        // keep rows of epochs the checkpoint already covers
        if let Ok(old) = std::fs::read_to_string(&metrics_path) {
            for line in old.lines().skip(1) {
                let epoch = line.split(',').next().and_then(|e| e.parse::<usize>().ok());
                if epoch.is_some_and(|e| e < trainer.next_epoch) {
                    metrics.push_str(line);
                    metrics.push('\n');
                }
            }
        }
    }
    write_file(&metrics_path, &metrics)?;

    while trainer.next_epoch < cfg.epochs {
        let m = trainer.run_epoch(&train_set, &cfg)?;
        let test = evaluate(&trainer.model, &test_set, false, run.seed)?;
        metrics.push_str(&metrics_row(m.epoch, "train", m.loss, m.accuracy, m.iou));
        metrics.push_str(&metrics_row(m.epoch, "test", test.loss, test.accuracy, test.mean_iou));
        write_file(&metrics_path, &metrics)?;
        save_checkpoint(&ckpt_path, &trainer, &cfg)?;
        println!(
            "epoch {:>3}  lr {:.2e}  loss {:.4}  train acc {:.4}  test acc {:.4}",
            m.epoch, m.lr, m.loss, m.accuracy, test.accuracy
        );
    }
    if !ckpt_path.exists() {
        save_checkpoint(&ckpt_path, &trainer, &cfg)?;
    }
    Ok(Outcome::Success)
}

pub fn eval(run: &RunConfig, checkpoint: &Path, output: Option<&Path>) -> Result<Outcome> {
    let (trainer, _) = load_checkpoint(checkpoint)?;
    let run = RunConfig {
        task: trainer.model.config.task,
        ..run.clone()
    };
    let (_, test_set) = run.split_dataset()?;
    let report = evaluate(&trainer.model, &test_set, run.rotate.is_some(), run.rotate.unwrap_or(run.seed))?;
    let split = if run.rotate.is_some() { "test_rotated" } else { "test" };
    let text = format!(
        "{METRICS_HEADER}\n{}",
        metrics_row(trainer.next_epoch.saturating_sub(1), split, report.loss, report.accuracy, report.mean_iou)
    );
    match output {
        Some(path) => {
            write_file(path, &text)?;
            println!("{split} accuracy {:.4}", report.accuracy);
        }
        None => print!("{text}"),
    }
    Ok(Outcome::Success)
}
