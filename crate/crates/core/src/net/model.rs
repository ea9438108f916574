//! The two-branch network: configuration, input encoding, forward and backward.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{
    center_cloud, normalize_scale, point_pair_feature, project_cloud, select_axes_indexed,
    PointCloud, DEFAULT_AXIS_EPS,
};
use crate::graph::{
    graph_aggregate_backward, graph_aggregate_forward, knn_graph, neighborhood_features,
    GraphAggCache, GraphAggParams, TRANSFORM_HIDDEN,
};
use crate::keypoint::{estimate_normals_with, keypoint_response, Fusion, DEFAULT_RESPONSE_K};
use crate::net::layers::{
    global_max_pool, global_max_pool_backward, mlp_backward, mlp_forward, Dense, DenseCache,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Classify,
    Segment,
}

/// How raw coordinates are turned into per-point network input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Encoding {
    /// Cosines against the cloud's own axes plus the norm (rotation invariant).
    Projection,
    /// Cosine point pair features against the farthest point (rotation invariant).
    Ppf,
    /// Centered, scaled coordinates (not rotation invariant).
    RawXyz,
}

impl Encoding {
    pub fn channels(self) -> usize {
        match self {
            Encoding::Projection | Encoding::Ppf => 4,
            Encoding::RawXyz => 3,
        }
    }
}

macro_rules! string_enum {
    ($ty:ty, $($variant:path => $name:literal),+) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::invalid(format!(
                        concat!("unknown ", stringify!($ty), " '{}'"),
                        other
                    ))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name,)+ })
            }
        }
    };
}

string_enum!(Task, Task::Classify => "classify", Task::Segment => "segment");
string_enum!(Encoding, Encoding::Projection => "projection", Encoding::Ppf => "ppf", Encoding::RawXyz => "raw_xyz");

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub task: Task,
    pub encoding: Encoding,
    /// Main branch shared widths; the last entry is the width after fusing both branches.
    pub backbone: Vec<usize>,
    /// Side branch widths: graph aggregation output, then shared layers.
    pub side: Vec<usize>,
    /// Hidden widths of the classifier, or of the segmentation head.
    pub head: Vec<usize>,
    pub k_neighbors: usize,
    pub transform_hidden: usize,
    pub fusion: Fusion,
    pub class_count: usize,
    pub part_count: usize,
    pub use_graph_agg: bool,
    pub use_keypoint: bool,
    pub response_k: usize,
    pub normalize_response: bool,
    pub normalize_scale: bool,
    pub axis_eps: f64,
}

impl ModelConfig {
    /// Full-size classifier defaults.
    pub fn classify(class_count: usize) -> Self {
        ModelConfig {
            task: Task::Classify,
            encoding: Encoding::Projection,
            backbone: vec![64, 64, 128, 1024],
            side: vec![64, 128],
            head: vec![512, 256],
            k_neighbors: 25,
            transform_hidden: TRANSFORM_HIDDEN,
            fusion: Fusion::Sum,
            class_count,
            part_count: 2,
            use_graph_agg: true,
            use_keypoint: true,
            response_k: DEFAULT_RESPONSE_K,
            normalize_response: false,
            normalize_scale: true,
            axis_eps: DEFAULT_AXIS_EPS,
        }
    }

    /// Full-size segmentation defaults.
    pub fn segment(class_count: usize, part_count: usize) -> Self {
        ModelConfig {
            task: Task::Segment,
            head: vec![256, 128],
            k_neighbors: 64,
            part_count,
            ..Self::classify(class_count)
        }
    }

    /// Small widths for desk-scale experiments on clouds of a few dozen points.
    pub fn toy(task: Task, class_count: usize, part_count: usize) -> Self {
        ModelConfig {
            task,
            backbone: vec![32, 32, 64, 64],
            side: vec![32, 64],
            head: vec![64, 32],
            k_neighbors: 12,
            transform_hidden: 16,
            response_k: 12,
            // raw responses reach k and swamp the fused features at these widths
            normalize_response: true,
            part_count,
            ..Self::classify(class_count)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.backbone.is_empty() || self.side.is_empty() || self.head.is_empty() {
            return Err(Error::invalid("layer widths must be nonempty"));
        }
        if self.backbone.iter().chain(&self.side).chain(&self.head).any(|&w| w == 0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if self.class_count < 2 || self.part_count < 2 {
            return Err(Error::invalid("class and part counts must be at least 2"));
        }
        if self.k_neighbors == 0 || self.response_k == 0 || self.transform_hidden == 0 {
            return Err(Error::invalid("neighbor counts must be positive"));
        }
        Ok(())
    }

    fn output_width(&self) -> usize {
        match self.task {
            Task::Classify => self.class_count,
            Task::Segment => self.part_count,
        }
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let list = |v: &[usize]| v.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("task".into(), self.task.to_string()),
            ("encoding".into(), self.encoding.to_string()),
            ("backbone".into(), list(&self.backbone)),
            ("side".into(), list(&self.side)),
            ("head".into(), list(&self.head)),
            ("k".into(), self.k_neighbors.to_string()),
            ("transform_hidden".into(), self.transform_hidden.to_string()),
            ("fusion".into(), self.fusion.to_string()),
            ("classes".into(), self.class_count.to_string()),
            ("parts".into(), self.part_count.to_string()),
            ("graph_agg".into(), self.use_graph_agg.to_string()),
            ("keypoint".into(), self.use_keypoint.to_string()),
            ("response_k".into(), self.response_k.to_string()),
            ("normalize_response".into(), self.normalize_response.to_string()),
            ("normalize_scale".into(), self.normalize_scale.to_string()),
            ("axis_eps".into(), format!("{:e}", self.axis_eps)),
        ]
    }

    /// Inverse of [`to_pairs`](Self::to_pairs); every key must be present.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            pairs
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::invalid(format!("model config lacks '{k}'")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::invalid(format!("bad value for '{k}'")))
        };
        let flag = |k: &str| -> Result<bool> {
            get(k)?
                .parse()
                .map_err(|_| Error::invalid(format!("bad value for '{k}'")))
        };
        let cfg = ModelConfig {
            task: get("task")?.parse()?,
            encoding: get("encoding")?.parse()?,
            backbone: parse_widths(get("backbone")?)?,
            side: parse_widths(get("side")?)?,
            head: parse_widths(get("head")?)?,
            k_neighbors: num("k")?,
            transform_hidden: num("transform_hidden")?,
            fusion: get("fusion")?.parse()?,
            class_count: num("classes")?,
            part_count: num("parts")?,
            use_graph_agg: flag("graph_agg")?,
            use_keypoint: flag("keypoint")?,
            response_k: num("response_k")?,
            normalize_response: flag("normalize_response")?,
            normalize_scale: flag("normalize_scale")?,
            axis_eps: get("axis_eps")?
                .parse()
                .map_err(|_| Error::invalid("bad value for 'axis_eps'"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn parse_widths(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad width list '{s}'")))
        })
        .collect()
}

/// Parameter-free network input derived from one cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedCloud {
    /// `N x C` per-point features for the main branch.
    pub points: Array2<f64>,
    /// `N x K x C` neighborhood features for the side branch.
    pub neighborhoods: Option<Array3<f64>>,
    /// Key point response per point.
    pub response: Option<Vec<f64>>,
}

impl EncodedCloud {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    /// Same shapes, every entry zero.
    pub fn zeros_like(&self) -> Self {
        EncodedCloud {
            points: Array2::zeros(self.points.raw_dim()),
            neighborhoods: self.neighborhoods.as_ref().map(|n| Array3::zeros(n.raw_dim())),
            response: self.response.as_ref().map(|r| vec![0.0; r.len()]),
        }
    }
}

/// Centers, optionally rescales and encodes a cloud for `config`.
pub fn encode(config: &ModelConfig, cloud: &PointCloud) -> Result<EncodedCloud> {
    cloud.validate()?;
    let (centered, _) = center_cloud(cloud)?;
    let cloud = if config.normalize_scale {
        normalize_scale(&centered)?
    } else {
        centered
    };
    let n = cloud.len();
    let needs_normals = config.use_keypoint || config.encoding == Encoding::Ppf;
    let mut graph_k = 0;
    if config.use_graph_agg {
        graph_k = config.k_neighbors;
    }
    if needs_normals {
        graph_k = graph_k.max(config.response_k);
        if cloud.normals.is_none() {
            graph_k = graph_k.max(3);
        }
    }
    let graph = if graph_k > 0 {
        Some(knn_graph(&cloud.points, graph_k)?)
    } else {
        None
    };
    let normals = match (&cloud.normals, needs_normals, &graph) {
        (Some(ns), _, _) => Some(ns.clone()),
        (None, true, Some(g)) => Some(estimate_normals_with(&cloud.points, g)?),
        _ => None,
    };

    let ga_graph = if config.use_graph_agg {
        graph.as_ref().map(|g| g.truncated(config.k_neighbors))
    } else {
        None
    };

    let (points, neighborhoods) = match config.encoding {
        Encoding::Projection => {
            let sel = select_axes_indexed(&cloud, config.axis_eps)?;
            (
                project_cloud(&sel.frame, &cloud),
                ga_graph.map(|g| neighborhood_features(&sel.frame, &g)),
            )
        }
        Encoding::Ppf => {
            let sel = select_axes_indexed(&cloud, config.axis_eps)?;
            let ns = normals.as_ref().expect("normals computed for ppf");
            let (r, nr) = (cloud.points[sel.first], ns[sel.first]);
            let mut pts = Array2::zeros((n, 4));
            for i in 0..n {
                let f = point_pair_feature(&cloud.points[i], &ns[i], &r, &nr);
                pts.row_mut(i).assign(&ndarray::arr1(&f));
            }
            let hoods = ga_graph.map(|g| {
                let mut out = Array3::zeros((n, g.k(), 4));
                for i in 0..n {
                    for (j, &q) in g.neighbors(i).iter().enumerate() {
                        let f = point_pair_feature(&cloud.points[q], &ns[q], &cloud.points[i], &ns[i]);
                        out.slice_mut(s![i, j, ..]).assign(&ndarray::arr1(&f));
                    }
                }
                out
            });
            (pts, hoods)
        }
        Encoding::RawXyz => {
            let mut pts = Array2::zeros((n, 3));
            for (i, p) in cloud.points.iter().enumerate() {
                pts.row_mut(i).assign(&ndarray::arr1(&[p.x, p.y, p.z]));
            }
            let hoods = ga_graph.map(|g| {
                let mut out = Array3::zeros((n, g.k(), 3));
                for i in 0..n {
                    for (j, d) in g.offsets(i).iter().enumerate() {
                        out.slice_mut(s![i, j, ..]).assign(&ndarray::arr1(&[d.x, d.y, d.z]));
                    }
                }
                out
            });
            (pts, hoods)
        }
    };

    let response = if config.use_keypoint {
        let g = graph
            .as_ref()
            .expect("graph built when keypoints are on")
            .truncated(config.response_k);
        let r = keypoint_response(normals.as_ref().expect("normals"), &g)?;
        Some(if config.normalize_response { r.normalized() } else { r }.values)
    } else {
        None
    };

    Ok(EncodedCloud {
        points,
        neighborhoods,
        response,
    })
}

/// All learned parameters. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub backbone: Vec<Dense>,
    pub side_agg: Option<GraphAggParams>,
    pub side_mlp: Vec<Dense>,
    pub fuse: Dense,
    pub head: Vec<Dense>,
}

/// Intermediates of one forward pass.
pub struct ForwardCache {
    rows: usize,
    main: Vec<DenseCache>,
    main_width: usize,
    side: Option<(GraphAggCache, Vec<DenseCache>)>,
    fuse: DenseCache,
    response: Option<Vec<f64>>,
    pool_arg: Vec<usize>,
    head: Vec<DenseCache>,
    concat_width: usize,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.encoding.channels();
        let (main_widths, fused) = config.backbone.split_at(config.backbone.len() - 1);
        let mut backbone = Vec::new();
        let mut width = c;
        for &w in main_widths {
            backbone.push(Dense::new(width, w, true, &mut rng));
            width = w;
        }
        let main_width = width;

        let (side_agg, side_mlp, side_width) = if config.use_graph_agg {
            let agg = GraphAggParams::new(
                config.k_neighbors,
                c,
                config.side[0],
                config.transform_hidden,
                &mut rng,
            );
            let mut layers = Vec::new();
            let mut width = config.side[0];
            for &w in &config.side[1..] {
                layers.push(Dense::new(width, w, true, &mut rng));
                width = w;
            }
            (Some(agg), layers, width)
        } else {
            (None, Vec::new(), 0)
        };

        let concat = main_width + side_width;
        let fuse = Dense::new(concat, fused[0], true, &mut rng);
        let head_in = match config.task {
            Task::Classify => fused[0],
            Task::Segment => fused[0] + concat,
        };
        let mut head = Vec::new();
        let mut width = head_in;
        for &w in &config.head {
            head.push(Dense::new(width, w, true, &mut rng));
            width = w;
        }
        head.push(Dense::new(width, config.output_width(), false, &mut rng));

        Ok(Model {
            config,
            backbone,
            side_agg,
            side_mlp,
            fuse,
            head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Model {
            config: self.config.clone(),
            backbone: self.backbone.iter().map(Dense::zeros_like).collect(),
            side_agg: self.side_agg.as_ref().map(GraphAggParams::zeros_like),
            side_mlp: self.side_mlp.iter().map(Dense::zeros_like).collect(),
            fuse: self.fuse.zeros_like(),
            head: self.head.iter().map(Dense::zeros_like).collect(),
        }
    }

    /// Every parameter tensor, in a fixed order shared with the other accessors.
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out = Vec::new();
        for d in &self.backbone {
            out.extend([&d.w, &d.b]);
        }
        if let Some(a) = &self.side_agg {
            out.extend(a.tensors());
        }
        for d in self.side_mlp.iter().chain([&self.fuse]).chain(&self.head) {
            out.extend([&d.w, &d.b]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::new();
        for d in &mut self.backbone {
            out.extend([&mut d.w, &mut d.b]);
        }
        if let Some(a) = &mut self.side_agg {
            out.extend(a.tensors_mut());
        }
        for d in self
            .side_mlp
            .iter_mut()
            .chain(std::iter::once(&mut self.fuse))
            .chain(self.head.iter_mut())
        {
            out.extend([&mut d.w, &mut d.b]);
        }
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        let dense = |out: &mut Vec<String>, prefix: &str, n: usize| {
            for i in 0..n {
                out.push(format!("{prefix}.{i}.w"));
                out.push(format!("{prefix}.{i}.b"));
            }
        };
        dense(&mut out, "backbone", self.backbone.len());
        if self.side_agg.is_some() {
            out.extend(GraphAggParams::TENSOR_NAMES.iter().map(|n| format!("graph_agg.{n}")));
        }
        dense(&mut out, "side", self.side_mlp.len());
        out.push("fuse.w".into());
        out.push("fuse.b".into());
        dense(&mut out, "head", self.head.len());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Model, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(scale, b);
        }
    }

    /// Logits: `1 x classes` when classifying, `N x parts` when segmenting.
    pub fn forward(&self, input: &EncodedCloud) -> Result<(Array2<f64>, ForwardCache)> {
        let rows = input.len();
        if rows == 0 {
            return Err(Error::invalid("empty cloud"));
        }
        let (main, main_caches) = mlp_forward(&self.backbone, &input.points)?;
        let main_width = main.ncols();

        let (concat, side) = match &self.side_agg {
            Some(agg) => {
                let hoods = input
                    .neighborhoods
                    .as_ref()
                    .ok_or_else(|| Error::invalid("model needs neighborhood features"))?;
                let (agg_out, agg_cache) = graph_aggregate_forward(agg, hoods)?;
                let (side_out, side_caches) = mlp_forward(&self.side_mlp, &agg_out)?;
                (
                    concatenate(Axis(1), &[main.view(), side_out.view()]).expect("same rows"),
                    Some((agg_cache, side_caches)),
                )
            }
            None => (main, None),
        };
        let concat_width = concat.ncols();

        let (mut fused, fuse_cache) = self.fuse.forward(&concat)?;
        let response = if self.config.use_keypoint {
            let r = input
                .response
                .as_ref()
                .ok_or_else(|| Error::invalid("model needs key point responses"))?;
            if r.len() != rows {
                return Err(Error::invalid("response length does not match points"));
            }
            for (mut row, &v) in fused.rows_mut().into_iter().zip(r) {
                match self.config.fusion {
                    Fusion::Sum => row.mapv_inplace(|x| x + v),
                    Fusion::Mul => row.mapv_inplace(|x| x * v),
                }
            }
            Some(r.clone())
        } else {
            None
        };

        let (global, pool_arg) = global_max_pool(&fused)?;
        let head_in = match self.config.task {
            Task::Classify => global.insert_axis(Axis(0)),
            Task::Segment => {
                let tiled = global
                    .insert_axis(Axis(0))
                    .broadcast((rows, fused.ncols()))
                    .expect("broadcast rows")
                    .to_owned();
                concatenate(Axis(1), &[concat.view(), tiled.view()]).expect("same rows")
            }
        };
        let (logits, head_caches) = mlp_forward(&self.head, &head_in)?;
        Ok((
            logits,
            ForwardCache {
                rows,
                main: main_caches,
                main_width,
                side,
                fuse: fuse_cache,
                response,
                pool_arg,
                head: head_caches,
                concat_width,
            },
        ))
    }

    /// Gradients of all parameters given `d loss / d logits`.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Array2<f64>) -> Result<Model> {
        let (head_grads, d_head_in) = mlp_backward(&self.head, &cache.head, grad_logits)?;
        let (d_global, d_concat_direct) = match self.config.task {
            Task::Classify => (d_head_in.row(0).to_owned(), None),
            Task::Segment => (
                d_head_in.slice(s![.., cache.concat_width..]).sum_axis(Axis(0)),
                Some(d_head_in.slice(s![.., ..cache.concat_width]).to_owned()),
            ),
        };
        let mut d_fused = global_max_pool_backward(&cache.pool_arg, &d_global, cache.rows);
        if let (Some(r), Fusion::Mul) = (&cache.response, self.config.fusion) {
            for (mut row, &v) in d_fused.rows_mut().into_iter().zip(r) {
                row.mapv_inplace(|g| g * v);
            }
        }
        let (fuse_grad, mut d_concat) = self.fuse.backward(&cache.fuse, &d_fused)?;
        if let Some(direct) = d_concat_direct {
            d_concat += &direct;
        }

        let d_main = d_concat.slice(s![.., ..cache.main_width]).to_owned();
        let (backbone_grads, _) = mlp_backward(&self.backbone, &cache.main, &d_main)?;

        let (agg_grad, side_grads) = match (&self.side_agg, &cache.side) {
            (Some(agg), Some((agg_cache, side_caches))) => {
                let d_side = d_concat.slice(s![.., cache.main_width..]).to_owned();
                let (side_grads, d_agg) = mlp_backward(&self.side_mlp, side_caches, &d_side)?;
                let (agg_grad, _) = graph_aggregate_backward(agg, agg_cache, &d_agg)?;
                (Some(agg_grad), side_grads)
            }
            (None, None) => (None, Vec::new()),
            _ => return Err(Error::InvalidState("cache does not match model".into())),
        };

        Ok(Model {
            config: self.config.clone(),
            backbone: backbone_grads,
            side_agg: agg_grad,
            side_mlp: side_grads,
            fuse: fuse_grad,
            head: head_grads,
        })
    }

    pub fn logits(&self, input: &EncodedCloud) -> Result<Array2<f64>> {
        self.forward(input).map(|(l, _)| l)
    }

    /// Encodes `cloud` and runs the classifier.
    pub fn classify_forward(&self, cloud: &PointCloud) -> Result<Array2<f64>> {
        if self.config.task != Task::Classify {
            return Err(Error::invalid("model is not a classifier"));
        }
        self.logits(&encode(&self.config, cloud)?)
    }

    /// Encodes `cloud` and returns per-point part scores.
    pub fn segment_forward(&self, cloud: &PointCloud) -> Result<Array2<f64>> {
        if self.config.task != Task::Segment {
            return Err(Error::invalid("model is not a segmenter"));
        }
        self.logits(&encode(&self.config, cloud)?)
    }
}

pub fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}
