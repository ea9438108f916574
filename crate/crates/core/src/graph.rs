//! K-nearest-neighbor graphs and the graph aggregation layer.
//!
//! For every point the layer looks at its `K` neighbors (offsets from the
//! center), learns a `K x K` matrix that recombines the neighbor feature rows,
//! runs a graph convolution over the recombined rows and max-pools them into a
//! single descriptor for the center point.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geom::{project_point, AxisFrame, Vec3};

/// Exact K-nearest-neighbor lists, self excluded.
///
/// Row `i` is sorted by ascending distance to point `i`; equal distances are
/// ordered by ascending point index.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnGraph {
    k: usize,
    indices: Vec<usize>,
    offsets: Vec<Vec3>,
}

impl KnnGraph {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of center points.
    pub fn len(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    /// The first `k` neighbors of every row (rows stay sorted).
    pub fn truncated(&self, k: usize) -> KnnGraph {
        if k >= self.k() {
            return self.clone();
        }
        let n = self.len();
        let mut indices = Vec::with_capacity(n * k);
        let mut offsets = Vec::with_capacity(n * k);
        for i in 0..n {
            indices.extend_from_slice(&self.neighbors(i)[..k]);
            offsets.extend_from_slice(&self.offsets(i)[..k]);
        }
        KnnGraph {
            k,
            indices,
            offsets,
        }
    }

    /// `points[neighbors(i)[j]] - points[i]`.
    pub fn offsets(&self, i: usize) -> &[Vec3] {
        &self.offsets[i * self.k..(i + 1) * self.k]
    }
}

pub fn knn_graph(points: &[Vec3], k: usize) -> Result<KnnGraph> {
    let n = points.len();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!(
            "k = {k} needs 0 < k < number of points ({n})"
        )));
    }
    let mut indices = Vec::with_capacity(n * k);
    let mut offsets = Vec::with_capacity(n * k);
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    for (i, p) in points.iter().enumerate() {
        scratch.clear();
        scratch.extend(
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, q)| ((q - p).norm_squared(), j)),
        );
        if k < scratch.len() {
            scratch.select_nth_unstable_by(k - 1, by_distance);
        }
        let nearest = &mut scratch[..k];
        nearest.sort_by(by_distance);
        for &(_, j) in nearest.iter() {
            indices.push(j);
            offsets.push(points[j] - p);
        }
    }
    Ok(KnnGraph {
        k,
        indices,
        offsets,
    })
}

/// Projects every neighbor offset onto the (global) axis frame: `N x K x 4`.
pub fn neighborhood_features(axes: &AxisFrame, graph: &KnnGraph) -> Array3<f64> {
    let mut out = Array3::zeros((graph.len(), graph.k(), 4));
    for i in 0..graph.len() {
        for (j, d) in graph.offsets(i).iter().enumerate() {
            let f = project_point(axes, d).to_array();
            for c in 0..4 {
                out[[i, j, c]] = f[c];
            }
        }
    }
    out
}

/// Learned parameters of one graph aggregation layer.
///
/// The transform network is a shared pointwise layer (`c_in -> hidden`), a max
/// pool over the neighborhood and a dense layer to `K*K` entries that are added
/// to the identity. The dense layer starts at zero, so a fresh layer applies
/// the identity transform.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphAggParams {
    pub k: usize,
    pub pre_w: Array2<f64>,
    pub pre_b: Array2<f64>,
    pub post_w: Array2<f64>,
    pub post_b: Array2<f64>,
    pub w0: Array2<f64>,
    pub w1: Array2<f64>,
    pub bias: Array2<f64>,
}

/// Width of the transform network's pointwise layer.
pub const TRANSFORM_HIDDEN: usize = 32;

impl GraphAggParams {
    pub fn new<R: Rng>(k: usize, c_in: usize, c_out: usize, hidden: usize, rng: &mut R) -> Self {
        GraphAggParams {
            k,
            pre_w: he_init(c_in, hidden, rng),
            pre_b: Array2::zeros((1, hidden)),
            post_w: Array2::zeros((hidden, k * k)),
            post_b: Array2::zeros((1, k * k)),
            w0: he_init(c_in, c_out, rng),
            w1: scaled_init(c_in, c_out, (1.0 / (c_in * k.max(1)) as f64).sqrt(), rng),
            bias: Array2::zeros((1, c_out)),
        }
    }

    pub fn c_in(&self) -> usize {
        self.w0.nrows()
    }

    pub fn c_out(&self) -> usize {
        self.w0.ncols()
    }

    pub fn zeros_like(&self) -> Self {
        let z = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        GraphAggParams {
            k: self.k,
            pre_w: z(&self.pre_w),
            pre_b: z(&self.pre_b),
            post_w: z(&self.post_w),
            post_b: z(&self.post_b),
            w0: z(&self.w0),
            w1: z(&self.w1),
            bias: z(&self.bias),
        }
    }

    pub const TENSOR_NAMES: [&'static str; 7] =
        ["pre_w", "pre_b", "post_w", "post_b", "w0", "w1", "bias"];

    pub fn tensors(&self) -> [&Array2<f64>; 7] {
        [
            &self.pre_w,
            &self.pre_b,
            &self.post_w,
            &self.post_b,
            &self.w0,
            &self.w1,
            &self.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Array2<f64>; 7] {
        [
            &mut self.pre_w,
            &mut self.pre_b,
            &mut self.post_w,
            &mut self.post_b,
            &mut self.w0,
            &mut self.w1,
            &mut self.bias,
        ]
    }

    /// Hash of every parameter bit pattern; ties a cache to the parameters that made it.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for v in t.iter() {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

pub(crate) fn he_init<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    scaled_init(rows, cols, (2.0 / rows.max(1) as f64).sqrt(), rng)
}

pub(crate) fn scaled_init<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Array2<f64> {
    let normal = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
}

struct NeighborhoodCache {
    /// post-ReLU output of the transform network's pointwise layer
    hidden: Array2<f64>,
    pooled: Array1<f64>,
    pooled_arg: Vec<usize>,
    transform: Array2<f64>,
    mixed: Array2<f64>,
    pre_act: Array2<f64>,
    out_arg: Vec<usize>,
}

/// Intermediates retained by [`graph_aggregate_forward`].
pub struct GraphAggCache {
    fingerprint: u64,
    feats: Array3<f64>,
    hoods: Vec<NeighborhoodCache>,
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

/// Column-wise max over rows; ties go to the first row.
fn col_max(a: &Array2<f64>) -> (Array1<f64>, Vec<usize>) {
    let mut best = a.row(0).to_owned();
    let mut arg = vec![0; a.ncols()];
    for (r, row) in a.rows().into_iter().enumerate().skip(1) {
        for (c, &v) in row.iter().enumerate() {
            if v > best[c] {
                best[c] = v;
                arg[c] = r;
            }
        }
    }
    (best, arg)
}

fn check_shapes(params: &GraphAggParams, feats: &Array3<f64>) -> Result<()> {
    let (_, k, c) = feats.dim();
    if k != params.k || c != params.c_in() {
        return Err(Error::invalid(format!(
            "graph aggregation expects N x {} x {} features, got {:?}",
            params.k,
            params.c_in(),
            feats.dim()
        )));
    }
    if k == 0 {
        return Err(Error::invalid("empty neighborhoods"));
    }
    Ok(())
}

/// Forward pass over `N x K x C_in` neighborhood features, producing `N x C_out`.
pub fn graph_aggregate_forward(
    params: &GraphAggParams,
    feats: &Array3<f64>,
) -> Result<(Array2<f64>, GraphAggCache)> {
    check_shapes(params, feats)?;
    let (n, k, _) = feats.dim();
    let diff = &params.w0 - &params.w1;
    let mut out = Array2::zeros((n, params.c_out()));
    let mut hoods = Vec::with_capacity(n);
    for i in 0..n {
        let f = feats.slice(s![i, .., ..]);
        let mut hidden = f.dot(&params.pre_w) + &params.pre_b;
        relu_inplace(&mut hidden);
        let (pooled, pooled_arg) = col_max(&hidden);
        let flat = pooled.dot(&params.post_w) + &params.post_b.row(0);
        let mut transform = flat.into_shape_with_order((k, k)).expect("k*k entries");
        transform.diag_mut().mapv_inplace(|v| v + 1.0);
        let mixed = transform.dot(&f);
        let total = mixed.sum_axis(Axis(0));
        // h_j = w0 m_j + w1 (sum - m_j) + b
        let shared = total.dot(&params.w1) + &params.bias.row(0);
        let pre_act = mixed.dot(&diff) + &shared;
        let mut act = pre_act.clone();
        relu_inplace(&mut act);
        let (pooled_out, out_arg) = col_max(&act);
        out.row_mut(i).assign(&pooled_out);
        hoods.push(NeighborhoodCache {
            hidden,
            pooled,
            pooled_arg,
            transform,
            mixed,
            pre_act,
            out_arg,
        });
    }
    Ok((
        out,
        GraphAggCache {
            fingerprint: params.fingerprint(),
            feats: feats.clone(),
            hoods,
        },
    ))
}

/// Exact gradients of [`graph_aggregate_forward`] given `d loss / d out`.
///
/// Max pooling routes each gradient to the (first) argmax row.
pub fn graph_aggregate_backward(
    params: &GraphAggParams,
    cache: &GraphAggCache,
    grad_out: &Array2<f64>,
) -> Result<(GraphAggParams, Array3<f64>)> {
    if cache.fingerprint != params.fingerprint() {
        return Err(Error::InvalidState(
            "graph aggregation cache was produced with different parameters".into(),
        ));
    }
    let (n, k, c_in) = cache.feats.dim();
    if grad_out.dim() != (n, params.c_out()) {
        return Err(Error::InvalidState(format!(
            "gradient shape {:?} does not match cached output ({n}, {})",
            grad_out.dim(),
            params.c_out()
        )));
    }
    let diff = &params.w0 - &params.w1;
    let mut grads = params.zeros_like();
    let mut grad_feats = Array3::zeros((n, k, c_in));
    let hidden_width = params.pre_w.ncols();

    for (i, hood) in cache.hoods.iter().enumerate() {
        let f: ArrayView2<f64> = cache.feats.slice(s![i, .., ..]);
        let mut d_pre = Array2::<f64>::zeros((k, params.c_out()));
        for (c, &j) in hood.out_arg.iter().enumerate() {
            if hood.pre_act[[j, c]] > 0.0 {
                d_pre[[j, c]] = grad_out[[i, c]];
            }
        }
        let d_sum = d_pre.sum_axis(Axis(0));
        let total = hood.mixed.sum_axis(Axis(0));
        let mt_dpre = hood.mixed.t().dot(&d_pre);

        grads.w0 += &mt_dpre;
        // d w1 = (1 sum^T - M)^T dZ = sum (x) colsum(dZ) - M^T dZ
        let outer = total
            .view()
            .insert_axis(Axis(1))
            .dot(&d_sum.view().insert_axis(Axis(0)));
        grads.w1 += &(outer - &mt_dpre);
        grads.bias.row_mut(0).scaled_add(1.0, &d_sum);

        let broadcast = params.w1.dot(&d_sum);
        let d_mixed = d_pre.dot(&diff.t()) + &broadcast;

        let d_transform = d_mixed.dot(&f.t());
        let mut d_f = hood.transform.t().dot(&d_mixed);

        let d_flat = d_transform
            .into_shape_with_order(k * k)
            .expect("contiguous k*k");
        grads.post_w += &hood
            .pooled
            .view()
            .insert_axis(Axis(1))
            .dot(&d_flat.view().insert_axis(Axis(0)));
        grads.post_b.row_mut(0).scaled_add(1.0, &d_flat);
        let d_pooled = params.post_w.dot(&d_flat);

        let mut d_hidden = Array2::<f64>::zeros((k, hidden_width));
        for (h, &j) in hood.pooled_arg.iter().enumerate() {
            if hood.hidden[[j, h]] > 0.0 {
                d_hidden[[j, h]] = d_pooled[h];
            }
        }
        grads.pre_w += &f.t().dot(&d_hidden);
        grads.pre_b.row_mut(0).scaled_add(1.0, &d_hidden.sum_axis(Axis(0)));
        d_f += &d_hidden.dot(&params.pre_w.t());

        grad_feats.slice_mut(s![i, .., ..]).assign(&d_f);
    }
    Ok((grads, grad_feats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{random_rotation, select_axes, PointCloud, DEFAULT_AXIS_EPS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_points(seed: u64, n: usize) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn randomized_params(seed: u64, k: usize, c_in: usize, c_out: usize) -> GraphAggParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = GraphAggParams::new(k, c_in, c_out, 5, &mut rng);
        p.post_w = scaled_init(5, k * k, 0.3, &mut rng);
        p.post_b = scaled_init(1, k * k, 0.1, &mut rng);
        p.pre_b = scaled_init(1, 5, 0.1, &mut rng);
        p.bias = scaled_init(1, c_out, 0.1, &mut rng);
        p
    }

    fn random_feats(seed: u64, n: usize, k: usize, c: usize) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn((n, k, c), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn knn_collinear_hand_case() {
        let pts: Vec<Vec3> = [0.0, 1.0, 2.0, 4.0].iter().map(|&x| Vec3::new(x, 0.0, 0.0)).collect();
        let g = knn_graph(&pts, 1).unwrap();
        let rows: Vec<usize> = (0..4).map(|i| g.neighbors(i)[0]).collect();
        assert_eq!(rows, vec![1, 0, 1, 2]);
        assert_eq!(g.offsets(3)[0], Vec3::new(-2.0, 0.0, 0.0));
    }

    #[test]
    fn knn_rejects_large_k() {
        assert!(knn_graph(&random_points(1, 5), 5).is_err());
    }

    #[test]
    fn knn_matches_brute_force_oracle() {
        let pts = random_points(2, 50);
        let g = knn_graph(&pts, 8).unwrap();
        for i in 0..pts.len() {
            let mut all: Vec<(f64, usize)> = (0..pts.len())
                .filter(|&j| j != i)
                .map(|j| ((pts[j] - pts[i]).norm(), j))
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let want: Vec<usize> = all.iter().take(8).map(|x| x.1).collect();
            assert_eq!(g.neighbors(i), want.as_slice());
            assert!(!g.neighbors(i).contains(&i));
        }
    }

    #[test]
    fn knn_rotation_invariant_indices() {
        let pts = random_points(3, 60);
        let r = random_rotation(5);
        let rotated: Vec<Vec3> = pts.iter().map(|p| r.apply(p)).collect();
        assert_eq!(knn_graph(&pts, 6).unwrap().indices, knn_graph(&rotated, 6).unwrap().indices);
    }

    #[test]
    fn neighborhood_duplicate_point_is_zero() {
        let pts = vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0)];
        let g = knn_graph(&pts, 1).unwrap();
        let f = neighborhood_features(&AxisFrame::standard(), &g);
        assert_eq!(f.slice(s![0, 0, ..]).to_vec(), vec![0.0; 4]);
    }

    #[test]
    fn neighborhood_hand_case() {
        let s2 = 2f64.sqrt();
        let axes = AxisFrame::new(Vec3::x(), Vec3::new(1.0, 1.0, 0.0) / s2, Vec3::z()).unwrap();
        let pts = vec![Vec3::zeros(), Vec3::new(1.0, 1.0, 0.0)];
        let f = neighborhood_features(&axes, &knn_graph(&pts, 1).unwrap());
        let row = f.slice(s![0, 0, ..]).to_vec();
        let want = [1.0 / s2, 1.0, 0.0, s2];
        for c in 0..4 {
            assert!((row[c] - want[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn neighborhood_features_rotation_invariant() {
        let cloud = PointCloud::new(random_points(4, 40));
        let r = random_rotation(9);
        let rotated = cloud.rotated(&r);
        let a = neighborhood_features(&select_axes(&cloud, DEFAULT_AXIS_EPS).unwrap(), &knn_graph(&cloud.points, 7).unwrap());
        let b = neighborhood_features(&select_axes(&rotated, DEFAULT_AXIS_EPS).unwrap(), &knn_graph(&rotated.points, 7).unwrap());
        assert!((&a - &b).iter().all(|d| d.abs() < 1e-7));
    }

    #[test]
    fn fresh_transform_is_identity_and_k1_reduces_to_center_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = GraphAggParams::new(1, 4, 3, 8, &mut rng);
        p.w1.fill(0.0);
        p.bias = scaled_init(1, 3, 0.5, &mut rng);
        let feats = random_feats(1, 6, 1, 4);
        let (out, _) = graph_aggregate_forward(&p, &feats).unwrap();
        for i in 0..6 {
            let f: ndarray::ArrayView2<f64> = feats.slice(s![i, .., ..]);
            let want = (f.dot(&p.w0) + &p.bias).mapv(|v| v.max(0.0));
            for c in 0..3 {
                assert!((out[[i, c]] - want[[0, c]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_transform_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = GraphAggParams::new(5, 4, 6, 8, &mut rng);
        let feats = random_feats(2, 3, 5, 4);
        let mut shuffled = feats.clone();
        let order = [3, 0, 4, 1, 2];
        for i in 0..3 {
            for (dst, &src) in order.iter().enumerate() {
                shuffled.slice_mut(s![i, dst, ..]).assign(&feats.slice(s![i, src, ..]));
            }
        }
        let (a, _) = graph_aggregate_forward(&p, &feats).unwrap();
        let (b, _) = graph_aggregate_forward(&p, &shuffled).unwrap();
        assert!((&a - &b).iter().all(|d| d.abs() < 1e-12));
    }

    /// Straightforward loop version of the layer.
    fn dense_loop_oracle(p: &GraphAggParams, feats: &Array3<f64>) -> Array2<f64> {
        let (n, k, c_in) = feats.dim();
        let hidden = p.pre_w.ncols();
        let c_out = p.w0.ncols();
        let mut out = Array2::zeros((n, c_out));
        for i in 0..n {
            let mut pooled = vec![f64::NEG_INFINITY; hidden];
            for j in 0..k {
                for h in 0..hidden {
                    let mut z = p.pre_b[[0, h]];
                    for c in 0..c_in {
                        z += feats[[i, j, c]] * p.pre_w[[c, h]];
                    }
                    pooled[h] = pooled[h].max(z.max(0.0));
                }
            }
            let mut t = vec![vec![0.0; k]; k];
            for a in 0..k {
                for b in 0..k {
                    let mut v = p.post_b[[0, a * k + b]];
                    for h in 0..hidden {
                        v += pooled[h] * p.post_w[[h, a * k + b]];
                    }
                    t[a][b] = v + if a == b { 1.0 } else { 0.0 };
                }
            }
            let mut mixed = vec![vec![0.0; c_in]; k];
            for a in 0..k {
                for c in 0..c_in {
                    for b in 0..k {
                        mixed[a][c] += t[a][b] * feats[[i, b, c]];
                    }
                }
            }
            for o in 0..c_out {
                let mut best = f64::NEG_INFINITY;
                for j in 0..k {
                    let mut h = p.bias[[0, o]];
                    for c in 0..c_in {
                        h += p.w0[[c, o]] * mixed[j][c];
                        for jj in 0..k {
                            if jj != j {
                                h += p.w1[[c, o]] * mixed[jj][c];
                            }
                        }
                    }
                    best = best.max(h.max(0.0));
                }
                out[[i, o]] = best;
            }
        }
        out
    }

    #[test]
    fn forward_matches_loop_oracle() {
        let p = randomized_params(7, 4, 3, 5);
        let feats = random_feats(8, 6, 4, 3);
        let (out, _) = graph_aggregate_forward(&p, &feats).unwrap();
        let want = dense_loop_oracle(&p, &feats);
        assert!((&out - &want).iter().all(|d| d.abs() < 1e-10));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = randomized_params(1, 3, 4, 2);
        let feats = random_feats(2, 4, 3, 4);
        let (out, cache) = graph_aggregate_forward(&p, &feats).unwrap();
        let (g, gf) = graph_aggregate_backward(&p, &cache, &Array2::zeros(out.raw_dim())).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
        assert!(gf.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn w1_gradient_vanishes_for_single_neighbor() {
        let p = randomized_params(3, 1, 4, 3);
        let feats = random_feats(4, 5, 1, 4);
        let (out, cache) = graph_aggregate_forward(&p, &feats).unwrap();
        let (g, _) = graph_aggregate_backward(&p, &cache, &Array2::ones(out.raw_dim())).unwrap();
        assert!(g.w1.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut p = randomized_params(3, 2, 4, 3);
        let feats = random_feats(4, 5, 2, 4);
        let (out, cache) = graph_aggregate_forward(&p, &feats).unwrap();
        p.w0[[0, 0]] += 1.0;
        let r = graph_aggregate_backward(&p, &cache, &Array2::ones(out.raw_dim()));
        assert!(matches!(r, Err(Error::InvalidState(_))));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = randomized_params(3, 2, 4, 3);
        assert!(matches!(graph_aggregate_forward(&p, &random_feats(1, 3, 3, 4)), Err(Error::InvalidInput(_))));
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let k = 4;
        let p = randomized_params(11, k, 3, 5);
        let feats = random_feats(12, 6, k, 3);
        let upstream = random_feats(13, 1, 6, 5).index_axis_move(Axis(0), 0);
        let loss = |p: &GraphAggParams, f: &Array3<f64>| {
            let (o, _) = graph_aggregate_forward(p, f).unwrap();
            (&o * &upstream).sum()
        };
        let (_, cache) = graph_aggregate_forward(&p, &feats).unwrap();
        let (g, gf) = graph_aggregate_backward(&p, &cache, &upstream).unwrap();
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for t in 0..7 {
            for _ in 0..3 {
                let (r, c) = {
                    let shape = p.tensors()[t].dim();
                    (rng.random_range(0..shape.0), rng.random_range(0..shape.1))
                };
                let mut plus = p.clone();
                plus.tensors_mut()[t][[r, c]] += h;
                let mut minus = p.clone();
                minus.tensors_mut()[t][[r, c]] -= h;
                let numeric = (loss(&plus, &feats) - loss(&minus, &feats)) / (2.0 * h);
                let analytic = g.tensors()[t][[r, c]];
                assert!(rel_err(analytic, numeric) < 1e-4, "{} [{r},{c}]: {analytic} vs {numeric}", GraphAggParams::TENSOR_NAMES[t]);
            }
        }
        for _ in 0..6 {
            let idx = [rng.random_range(0..6), rng.random_range(0..k), rng.random_range(0..3)];
            let mut plus = feats.clone();
            plus[idx] += h;
            let mut minus = feats.clone();
            minus[idx] -= h;
            let numeric = (loss(&p, &plus) - loss(&p, &minus)) / (2.0 * h);
            assert!(rel_err(gf[idx], numeric) < 1e-4, "feats {idx:?}: {} vs {numeric}", gf[idx]);
        }
    }
}
