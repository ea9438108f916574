//! Acceptance suite: one pass/fail line per criterion, nonzero exit on any failure.
//!
//! Toy-scale training runs share one 5-class synthetic set (100 clouds per
//! class, 64 points, 80/20 split) and the 60-epoch toy schedule.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srinet::cli::commands::invariance_report;
use srinet::cli::config::RunConfig;
use srinet::data::{sample_surface, synthetic_dataset, Dataset, ShapeKind, TriangleMesh};
use srinet::geom::{gram_factor, gram_matrix, project_point, reconstruct_point, AxisFrame, ProjectionFeature, Vec3};
use srinet::keypoint::{estimate_normals, keypoint_response};
use srinet::knn_graph;
use srinet::net::gradcheck::gradient_check;
use srinet::net::train::prediction_agreement;
use srinet::net::{encode, evaluate, Encoding, Model, ModelConfig, Task, TrainConfig, Trainer};
use srinet::Fusion;

const SEEDS: [u64; 3] = [0, 1, 2];
const EPOCHS: usize = 60;

#[derive(Default)]
struct Report {
    passed: usize,
    failed: usize,
}

impl Report {
    fn line(&mut self, id: usize, name: &str, pass: bool, detail: String) {
        println!("criterion {id:>2} [{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if pass {
            self.passed += 1;
        } else {
            self.failed += 1;
        }
    }
}

// ---- 1: strict invariance ----

fn invariance(report: &mut Report) {
    let run = RunConfig::from_pairs(&BTreeMap::new(), None).unwrap();
    let start = Instant::now();
    let checks = invariance_report(&run, 1000).unwrap();
    let elapsed = start.elapsed();
    let get = |name: &str| checks.iter().find(|c| c.name == name).unwrap().max_deviation;
    let (features, logits) = (get("features"), get("logits"));
    let pass = features < 1e-7 && logits < 1e-5 && elapsed < Duration::from_secs(60);
    report.line(
        1,
        "strict invariance",
        pass,
        format!("1000 pairs, features {features:.2e} (<1e-7), logits {logits:.2e} (<1e-5), {:.1}s (<60s)", elapsed.as_secs_f64()),
    );
}

// ---- 2: uniqueness ----

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm() > 0.1 && v.norm() <= 1.0 {
            return v.normalize();
        }
    }
}

/// Recovers `x` from the features alone: factor the Gram matrix of
/// `(x/|x|, a1, a2, a3)` and align the factor's axis columns with the true axes.
fn gram_reconstruction(axes: &AxisFrame, f: &ProjectionFeature) -> Vec3 {
    let a = axes.axes();
    let mut m = Matrix4::identity();
    for i in 0..3 {
        m[(0, i + 1)] = f.cos[i];
        m[(i + 1, 0)] = f.cos[i];
        for j in 0..3 {
            m[(i + 1, j + 1)] = a[i].dot(&a[j]);
        }
    }
    let c = gram_factor(&m);
    // orthogonal Procrustes via the polar factor Q = (B Bᵀ)^(-1/2) B of B = A Cₐᵀ
    let b: Matrix3x4<f64> = Matrix3::from_columns(a) * c.columns(1, 3).transpose();
    let eig = (b * b.transpose()).symmetric_eigen();
    let inv_root = Vector3::from_iterator(eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()));
    let q = &eig.eigenvectors * Matrix3::from_diagonal(&inv_root) * eig.eigenvectors.transpose() * b;
    q * c.column(0) * f.norm
}

fn uniqueness(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_inverse, mut worst_oracle, mut worst_gram, mut pairs) = (0.0f64, 0.0f64, 0.0f64, 0);
    while pairs < 10_000 {
        let (a1, a2) = (random_unit(&mut rng), random_unit(&mut rng));
        let a3 = random_unit(&mut rng);
        if Matrix3::from_columns(&[a1, a2, a3]).determinant().abs() < 0.1 {
            continue;
        }
        let axes = AxisFrame::new(a1, a2, a3).unwrap();
        let x = random_unit(&mut rng) * rng.random_range(0.01..3.0);
        let f = project_point(&axes, &x);
        let back = reconstruct_point(&axes, &f).unwrap();
        let oracle = gram_reconstruction(&axes, &f);
        let g = gram_matrix(&back, &axes).unwrap() - gram_matrix(&x, &axes).unwrap();
        worst_inverse = worst_inverse.max((back - x).amax());
        worst_oracle = worst_oracle.max((oracle - back).amax());
        worst_gram = worst_gram.max(g.amax());
        pairs += 1;
    }
    let pass = worst_inverse < 1e-8 && worst_oracle < 1e-8 && worst_gram < 1e-8;
    report.line(
        2,
        "uniqueness",
        pass,
        format!(
            "{pairs} pairs, reconstruct∘project {worst_inverse:.2e}, Gram/SVD oracle {worst_oracle:.2e}, Gram residual {worst_gram:.2e} (all <1e-8)"
        ),
    );
}

// ---- 3–7: toy training runs ----

struct Run {
    test_nr: f64,
    test_ar: f64,
    agreement: f64,
    train_acc: f64,
    seconds: f64,
}

fn train_run(train: &Dataset, test: &Dataset, tweak: impl Fn(&mut ModelConfig), seed: u64) -> Run {
    let mut cfg = ModelConfig::toy(Task::Classify, 5, 9);
    tweak(&mut cfg);
    let start = Instant::now();
    let mut trainer = Trainer::new(Model::new(cfg, seed).unwrap());
    trainer.fit(train, &TrainConfig { epochs: EPOCHS, seed, ..TrainConfig::toy() }).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let nr = evaluate(&trainer.model, test, false, 0).unwrap();
    let ar = evaluate(&trainer.model, test, true, 1000 + seed).unwrap();
    Run {
        test_nr: nr.accuracy,
        test_ar: ar.accuracy,
        agreement: prediction_agreement(&nr, &ar),
        train_acc: evaluate(&trainer.model, train, false, 0).unwrap().accuracy,
        seconds,
    }
}

fn mean(runs: &[Run]) -> f64 {
    runs.iter().map(|r| r.test_nr).sum::<f64>() / runs.len() as f64
}

fn accuracies(runs: &[Run]) -> String {
    let each: Vec<String> = runs.iter().map(|r| format!("{:.3}", r.test_nr)).collect();
    format!("{:.4} [{}]", mean(runs), each.join(" "))
}

fn over_seeds(train: &Dataset, test: &Dataset, tweak: impl Fn(&mut ModelConfig)) -> Vec<Run> {
    SEEDS.iter().map(|&s| train_run(train, test, &tweak, s)).collect()
}

fn comparison(report: &mut Report, id: usize, name: &str, (a_name, a): (&str, &[Run]), others: &[(&str, &[Run])]) {
    let pass = others.iter().all(|(_, b)| mean(a) >= mean(b));
    let mut detail = format!("{a_name} {}", accuracies(a));
    for (n, b) in others {
        detail += &format!(" vs {n} {}", accuracies(b));
    }
    report.line(id, name, pass, format!("{detail}; mean over seeds {SEEDS:?}"));
}

fn training(report: &mut Report) {
    let data = synthetic_dataset(&ShapeKind::ALL, 100, 64, 0.01, 1).unwrap();
    let (train, test) = data.split(0.8, 2);

    let full = over_seeds(&train, &test, |_| {});
    let r = &full[0];
    let gap = (r.test_nr - r.test_ar).abs();
    let pass = gap <= 0.01 && r.agreement >= 0.99 && r.test_nr > 0.9 && r.seconds < 1800.0;
    report.line(
        3,
        "equality protocol",
        pass,
        format!(
            "{} train / {} test clouds, {EPOCHS} epochs: NR {:.3}, AR {:.3} (gap ≤0.01), agreement {:.3} (≥0.99), accuracy >0.9, train accuracy {:.3}, {:.0}s (<1800s)",
            train.len(),
            test.len(),
            r.test_nr,
            r.test_ar,
            r.agreement,
            r.train_acc,
            r.seconds
        ),
    );

    let raw = train_run(&train, &test, |c| c.encoding = Encoding::RawXyz, 0);
    let drop = raw.test_nr - raw.test_ar;
    report.line(
        4,
        "negative control",
        drop >= 0.2,
        format!("raw_xyz NR {:.3}, AR {:.3}, drop {drop:.3} (≥0.2)", raw.test_nr, raw.test_ar),
    );

    let no_ga = over_seeds(&train, &test, |c| c.use_graph_agg = false);
    let no_kpd = over_seeds(&train, &test, |c| c.use_keypoint = false);
    comparison(report, 5, "ablation direction", ("full", &full), &[("no-GA", &no_ga), ("no-KPD", &no_kpd)]);

    let ppf = over_seeds(&train, &test, |c| c.encoding = Encoding::Ppf);
    comparison(report, 6, "encoding comparison", ("projection", &full), &[("ppf", &ppf)]);

    let mul = over_seeds(&train, &test, |c| c.fusion = Fusion::Mul);
    comparison(report, 7, "fusion comparison", ("sum", &full), &[("mul", &mul)]);
}

// ---- 8: gradients ----

fn random_batch(model: &Model, size: usize, points: usize, seed: u64) -> Vec<(srinet::net::EncodedCloud, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size)
        .map(|_| {
            let pts: Vec<Vec3> = (0..points)
                .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.7..0.7), rng.random_range(-0.4..0.4)))
                .collect();
            let input = encode(&model.config, &srinet::geom::PointCloud::new(pts)).unwrap();
            let labels = match model.config.task {
                Task::Classify => vec![rng.random_range(0..model.config.class_count)],
                Task::Segment => (0..points).map(|_| rng.random_range(0..model.config.part_count)).collect(),
            };
            (input, labels)
        })
        .collect()
}

fn gradients(report: &mut Report) {
    let mut worst = 0.0f64;
    let (mut tensors, mut kinks) = (0, 0);
    let mut variants: Vec<(ModelConfig, usize, usize)> = vec![
        (ModelConfig::toy(Task::Classify, 5, 9), 2, 48),
        (ModelConfig::toy(Task::Segment, 5, 9), 1, 32),
    ];
    let mut mul = ModelConfig::toy(Task::Classify, 5, 9);
    mul.fusion = Fusion::Mul;
    variants.push((mul, 2, 48));
    let mut ppf = ModelConfig::toy(Task::Classify, 5, 9);
    ppf.encoding = Encoding::Ppf;
    variants.push((ppf, 2, 48));
    for seed in 0..4u64 {
        for (cfg, size, points) in &variants {
            let model = Model::new(cfg.clone(), seed).unwrap();
            let batch = random_batch(&model, *size, *points, seed + 100);
            let r = gradient_check(&model, &batch, seed).unwrap();
            worst = worst.max(r.max_rel_error());
            tensors += r.tensors.len();
            kinks += r.kinks();
        }
    }
    report.line(
        8,
        "gradient suite",
        worst < 1e-4,
        format!(
            "{tensors} tensors checked (classify/segment/mul/ppf, 4 seeds), max relative error {worst:.2e} (<1e-4), {kinks} entries within one step of a kink"
        ),
    );
}

// ---- 9: keypoints ----

fn mean_near(points: &[Vec3], values: &[f64], anchors: &[Vec3], radius: f64) -> f64 {
    let picked: Vec<f64> = points
        .iter()
        .zip(values)
        .filter(|(p, _)| anchors.iter().any(|a| (*p - a).amax() <= radius))
        .map(|(_, &v)| v)
        .collect();
    picked.iter().sum::<f64>() / picked.len().max(1) as f64
}

fn keypoints(report: &mut Report) {
    let cloud = sample_surface(&TriangleMesh::cube(0.5), 6000, 9).unwrap();
    let corners: Vec<Vec3> = (0..8)
        .map(|i| Vec3::new(if i & 1 == 0 { -0.5 } else { 0.5 }, if i & 2 == 0 { -0.5 } else { 0.5 }, if i & 4 == 0 { -0.5 } else { 0.5 }))
        .collect();
    let faces: Vec<Vec3> = (0..6)
        .map(|i| {
            let mut c = Vec3::zeros();
            c[i / 2] = if i % 2 == 0 { -0.5 } else { 0.5 };
            c
        })
        .collect();
    let graph = knn_graph(&cloud.points, 16).unwrap();
    let mut means = Vec::new();
    for normals in [cloud.normals.clone().unwrap(), estimate_normals(&cloud.points, 16).unwrap()] {
        let r = keypoint_response(&normals, &graph).unwrap().values;
        let at_corners = mean_near(&cloud.points, &r, &corners, 0.1);
        let at_faces = mean_near(&cloud.points, &r, &faces, 0.1);
        means.push((at_corners, at_faces));
    }
    let pass = means.iter().all(|&(c, f)| c > 0.0 && c >= 2.0 * f);
    let show = |(c, f): (f64, f64)| format!("corners {c:.3} vs faces {f:.2e}");
    report.line(
        9,
        "keypoint property",
        pass,
        format!(
            "cube, 6000 points, k=16, mean response (corners ≥ 2× faces): mesh normals {}; estimated normals {}",
            show(means[0]),
            show(means[1])
        ),
    );
}

// ---- 10: determinism ----

fn cube_off(dir: &Path) -> std::path::PathBuf {
    let mut mesh = TriangleMesh::cube(0.5);
    for (i, v) in mesh.vertices.iter_mut().enumerate() {
        v.x *= 1.0 + 0.3 * (i as f64 / 8.0);
        v.z *= 1.0 + 0.05 * i as f64;
    }
    let path = dir.join("shape.off");
    std::fs::write(&path, srinet::data::off::write_off(&mesh)).unwrap();
    path
}

fn determinism(report: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let input = cube_off(dir.path());
    let input = input.to_str().unwrap();
    let commands: Vec<(&str, Vec<&str>, Vec<&str>)> = vec![
        ("extract", vec!["extract", "--input", input, "--points", "512", "--output"], vec!["out.csv", "out.axes.csv"]),
        ("extract ppf", vec!["extract", "--input", input, "--encoding", "ppf", "--output"], vec!["out.csv", "out.axes.csv"]),
        ("keypoints", vec!["keypoints", "--input", input, "--points", "2000", "--output"], vec!["out.response.csv"]),
        ("invariance-test", vec!["invariance-test", "--trials", "10", "--output"], vec!["out.csv"]),
        ("train", vec!["train", "--epochs", "1", "--output"], vec!["out/metrics.csv"]),
    ];
    let mut failures = Vec::new();
    for (name, args, files) in &commands {
        let mut outputs = Vec::new();
        for attempt in ["a", "b"] {
            let root = dir.path().join(format!("{}-{attempt}", name.replace(' ', "_")));
            std::fs::create_dir_all(&root).unwrap();
            let target = if *name == "train" { root.join("out") } else { root.join("out.csv") };
            let status = Command::new(env!("CARGO_BIN_EXE_srinet"))
                .args(args)
                .arg(&target)
                .args(["--seed", "11"])
                .env_remove("SRINET_SEED")
                .output()
                .unwrap();
            if !status.status.success() {
                failures.push(format!("{name} exited {:?}", status.status.code()));
            }
            let bytes: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(root.join(f)).unwrap_or_default()).collect();
            outputs.push(bytes);
        }
        if outputs[0] != outputs[1] || outputs[0].iter().any(|b| b.is_empty()) {
            failures.push(format!("{name} CSVs differ or are missing"));
        }
    }
    let names: Vec<&str> = commands.iter().map(|c| c.0).collect();
    let detail = if failures.is_empty() {
        format!("byte-identical CSVs across two runs of: {}", names.join(", "))
    } else {
        failures.join("; ")
    };
    report.line(10, "determinism", failures.is_empty(), detail);
}

fn main() -> ExitCode {
    let mut report = Report::default();
    invariance(&mut report);
    uniqueness(&mut report);
    training(&mut report);
    gradients(&mut report);
    keypoints(&mut report);
    determinism(&mut report);
    let total = report.passed + report.failed;
    if report.failed == 0 {
        println!("acceptance: all {total} criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} of {total} criteria failed", report.failed);
        ExitCode::FAILURE
    }
}
