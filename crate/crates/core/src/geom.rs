//! Point projection features and the geometric primitives around them.
//!
//! A centered cloud is described relative to three axes picked from the cloud
//! itself: the farthest point, the nearest (non-collinear) point, and their
//! cross product. Each point becomes `(cos<a1,x>, cos<a2,x>, cos<a3,x>, |x|)`.
//! Every quantity involved is an inner product or a norm, so the encoding is
//! unchanged when the whole cloud is rotated.

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3, Vector4};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// `N x C` feature matrix; with `C = 4` it holds one projection feature per row.
pub type FeatureMatrix = Array2<f64>;

/// Relative tie tolerance used by [`select_axes`] unless told otherwise.
pub const DEFAULT_AXIS_EPS: f64 = 1e-6;

/// Norms at or below this are treated as the origin.
pub const ZERO_NORM: f64 = 1e-12;

const NORMAL_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    pub label: Option<usize>,
    pub part_labels: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        PointCloud {
            points,
            normals: None,
            label: None,
            part_labels: None,
        }
    }

    pub fn from_slices(points: &[[f64; 3]]) -> Self {
        Self::new(points.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect())
    }

    /// Attaches normals, checking count and unit length.
    pub fn with_normals(mut self, normals: Vec<Vec3>) -> Result<Self> {
        check_normals(&normals, self.points.len())?;
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(n) = &self.normals {
            check_normals(n, self.points.len())?;
        }
        if let Some(p) = &self.part_labels {
            if p.len() != self.points.len() {
                return Err(Error::invalid(format!(
                    "{} part labels for {} points",
                    p.len(),
                    self.points.len()
                )));
            }
        }
        Ok(())
    }

    /// Rotates points and normals together.
    pub fn rotated(&self, rotation: &Rotation) -> Self {
        PointCloud {
            points: self.points.iter().map(|p| rotation.apply(p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| rotation.apply(n)).collect()),
            label: self.label,
            part_labels: self.part_labels.clone(),
        }
    }

    /// Reorders every per-point array by `order` (`out[i] = self[order[i]]`).
    pub fn permuted(&self, order: &[usize]) -> Self {
        PointCloud {
            points: order.iter().map(|&i| self.points[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| order.iter().map(|&i| ns[i]).collect()),
            label: self.label,
            part_labels: self
                .part_labels
                .as_ref()
                .map(|ls| order.iter().map(|&i| ls[i]).collect()),
        }
    }
}

fn check_normals(normals: &[Vec3], n: usize) -> Result<()> {
    if normals.len() != n {
        return Err(Error::invalid(format!(
            "{} normals for {} points",
            normals.len(),
            n
        )));
    }
    if let Some((i, v)) = normals
        .iter()
        .enumerate()
        .find(|(_, v)| (v.norm() - 1.0).abs() > NORMAL_TOL)
    {
        return Err(Error::invalid(format!(
            "normal {i} has norm {}, expected 1",
            v.norm()
        )));
    }
    Ok(())
}

/// Three unit, linearly independent axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisFrame {
    axes: [Vec3; 3],
}

impl AxisFrame {
    pub fn new(a1: Vec3, a2: Vec3, a3: Vec3) -> Result<Self> {
        for (k, a) in [a1, a2, a3].iter().enumerate() {
            if (a.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("axis {} is not unit", k + 1)));
            }
        }
        let frame = AxisFrame { axes: [a1, a2, a3] };
        if frame.rows().determinant().abs() <= 1e-6 {
            return Err(Error::degenerate("axes are not linearly independent"));
        }
        Ok(frame)
    }

    /// Normalizes the three vectors before validating them.
    pub fn from_directions(a1: Vec3, a2: Vec3, a3: Vec3) -> Result<Self> {
        let unit = |v: Vec3| {
            let n = v.norm();
            if n <= ZERO_NORM {
                Err(Error::invalid("zero-length axis"))
            } else {
                Ok(v / n)
            }
        };
        Self::new(unit(a1)?, unit(a2)?, unit(a3)?)
    }

    pub fn standard() -> Self {
        AxisFrame {
            axes: [Vec3::x(), Vec3::y(), Vec3::z()],
        }
    }

    pub fn axis(&self, k: usize) -> &Vec3 {
        &self.axes[k]
    }

    pub fn axes(&self) -> &[Vec3; 3] {
        &self.axes
    }

    /// Matrix whose rows are the axes.
    pub fn rows(&self) -> Matrix3<f64> {
        Matrix3::from_rows(&[
            self.axes[0].transpose(),
            self.axes[1].transpose(),
            self.axes[2].transpose(),
        ])
    }

    pub fn rotated(&self, rotation: &Rotation) -> Self {
        AxisFrame {
            axes: self.axes.map(|a| rotation.apply(&a)),
        }
    }
}

/// Axes plus the indices of the cloud points that produced the first two.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisSelection {
    pub frame: AxisFrame,
    pub first: usize,
    pub second: usize,
}

/// Three cosines and a norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionFeature {
    pub cos: [f64; 3],
    pub norm: f64,
}

impl ProjectionFeature {
    pub fn new(c1: f64, c2: f64, c3: f64, r: f64) -> Self {
        ProjectionFeature {
            cos: [c1, c2, c3],
            norm: r,
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.cos[0], self.cos[1], self.cos[2], self.norm]
    }
}

/// A proper rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        if ortho > 1e-9 || (m.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("matrix is not a proper rotation"));
        }
        Ok(Rotation(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }
}

/// Uniformly distributed rotation, deterministic per seed.
pub fn random_rotation(seed: u64) -> Rotation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        if quat.norm() > 1e-6 {
            let unit = UnitQuaternion::from_quaternion(quat);
            return Rotation(*unit.to_rotation_matrix().matrix());
        }
    }
}

/// Moves the centroid to the origin. Normals and labels are untouched.
pub fn center_cloud(cloud: &PointCloud) -> Result<(PointCloud, Vec3)> {
    if cloud.is_empty() {
        return Err(Error::invalid("cannot center an empty cloud"));
    }
    let centroid = cloud.points.iter().sum::<Vec3>() / cloud.len() as f64;
    let mut out = cloud.clone();
    out.points.iter_mut().for_each(|p| *p -= centroid);
    Ok((out, centroid))
}

/// Divides coordinates by the largest point norm.
pub fn normalize_scale(cloud: &PointCloud) -> Result<PointCloud> {
    let max = cloud.points.iter().map(|p| p.norm()).fold(0.0, f64::max);
    if max <= ZERO_NORM {
        return Err(Error::invalid("cannot normalize an all-zero cloud"));
    }
    let mut out = cloud.clone();
    out.points.iter_mut().for_each(|p| *p /= max);
    Ok(out)
}

pub fn select_axes(cloud: &PointCloud, eps: f64) -> Result<AxisFrame> {
    select_axes_indexed(cloud, eps).map(|s| s.frame)
}

/// Picks the axis frame of a centered cloud.
///
/// `eps` is relative to the largest point norm. Norms within it count as tied;
/// ties are broken only by rotation-invariant quantities (the cosine with the
/// opposite extreme point), and an unresolvable tie is reported as
/// [`Error::Degenerate`] instead of being broken by coordinates.
pub fn select_axes_indexed(cloud: &PointCloud, eps: f64) -> Result<AxisSelection> {
    let norms: Vec<f64> = cloud.points.iter().map(|p| p.norm()).collect();
    let max = norms.iter().copied().fold(0.0, f64::max);
    let tol = eps * max;

    let mut ascending: Vec<usize> = (0..norms.len())
        .filter(|&i| norms[i] > tol.max(ZERO_NORM))
        .collect();
    if ascending.len() < 2 {
        return Err(Error::invalid(
            "axis selection needs at least two points away from the origin",
        ));
    }
    ascending.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]).then(a.cmp(&b)));

    // consecutive runs of tied norms, smallest first
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &i in &ascending {
        match groups.last_mut() {
            Some(g) if norms[i] - norms[g[0]] <= tol => g.push(i),
            _ => groups.push(vec![i]),
        }
    }

    let unit = |i: usize| cloud.points[i] / norms[i];
    let col_tol = eps.max(1e-6);

    let top = groups.last().expect("at least one group");
    let first = if top.len() == 1 {
        top[0]
    } else {
        if groups.len() < 2 || groups[0].len() != 1 {
            return Err(Error::degenerate(
                "maximum-norm points tie and no unique minimum-norm point breaks the tie",
            ));
        }
        let reference = unit(groups[0][0]);
        pick_unique(top, |i| -unit(i).dot(&reference).abs(), eps).ok_or_else(|| {
            Error::degenerate("tied maximum-norm points are symmetric about the minimum-norm point")
        })?
    };
    let a1 = unit(first);

    let mut second = None;
    for group in &groups {
        let usable: Vec<usize> = group
            .iter()
            .copied()
            .filter(|&i| i != first && a1.cross(&unit(i)).norm() > col_tol)
            .collect();
        match usable.len() {
            0 => continue,
            1 => second = Some(usable[0]),
            _ => {
                second = Some(
                    pick_unique(&usable, |i| a1.cross(&unit(i)).norm(), eps).ok_or_else(|| {
                        Error::degenerate("tied minimum-norm points cannot be told apart")
                    })?,
                )
            }
        }
        break;
    }
    let second = second
        .ok_or_else(|| Error::degenerate("every candidate second axis is collinear with the first"))?;

    let a2 = unit(second);
    let cross = a1.cross(&a2);
    let frame = AxisFrame::new(a1, a2, cross / cross.norm())?;
    Ok(AxisSelection {
        frame,
        first,
        second,
    })
}

/// Index maximizing `score`, or `None` if the best two are within `tol`.
fn pick_unique(candidates: &[usize], score: impl Fn(usize) -> f64, tol: f64) -> Option<usize> {
    let mut scored: Vec<(f64, usize)> = candidates.iter().map(|&i| (score(i), i)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    match scored.as_slice() {
        [(_, i)] => Some(*i),
        [(s0, i), (s1, _), ..] if s0 - s1 > tol => Some(*i),
        _ => None,
    }
}

/// The projection of `x` onto the frame. The origin maps to all zeros.
pub fn project_point(axes: &AxisFrame, x: &Vec3) -> ProjectionFeature {
    let r = x.norm();
    if r <= ZERO_NORM {
        return ProjectionFeature::new(0.0, 0.0, 0.0, 0.0);
    }
    let a = axes.axes();
    let cos = |k: usize| (a[k].dot(x) / r).clamp(-1.0, 1.0);
    ProjectionFeature::new(cos(0), cos(1), cos(2), r)
}

/// One projection row per point, in input order.
pub fn project_cloud(axes: &AxisFrame, cloud: &PointCloud) -> FeatureMatrix {
    let mut out = Array2::zeros((cloud.len(), 4));
    for (mut row, p) in out.rows_mut().into_iter().zip(&cloud.points) {
        let f = project_point(axes, p).to_array();
        row.iter_mut().zip(f).for_each(|(o, v)| *o = v);
    }
    out
}

/// Recovers the point whose projection onto `axes` is `f`.
pub fn reconstruct_point(axes: &AxisFrame, f: &ProjectionFeature) -> Result<Vec3> {
    if f.norm <= ZERO_NORM {
        return Ok(Vec3::zeros());
    }
    let direction = axes
        .rows()
        .lu()
        .solve(&Vec3::from(f.cos))
        .ok_or_else(|| Error::degenerate("axes are singular"))?;
    let n = direction.norm();
    if (n - 1.0).abs() > 1e-4 {
        return Err(Error::InconsistentFeature { norm: n });
    }
    Ok(direction * f.norm)
}

/// Gram matrix of the columns `(x/|x|, a1, a2, a3)`.
pub fn gram_matrix(x: &Vec3, axes: &AxisFrame) -> Result<Matrix4<f64>> {
    let r = x.norm();
    if r <= ZERO_NORM {
        return Err(Error::invalid("gram matrix of the zero vector"));
    }
    let cols = [x / r, axes.axes()[0], axes.axes()[1], axes.axes()[2]];
    Ok(Matrix4::from_fn(|i, j| cols[i].dot(&cols[j])))
}

/// Symmetric factor `C = U S^{1/2} U^T` of a Gram matrix, so that `C^T C = M`.
///
/// Used to cross-check [`reconstruct_point`]: the columns of `C` carry the same
/// inner products as `(x/|x|, a1, a2, a3)`. `M` is symmetric positive
/// semidefinite, so its SVD is its eigendecomposition; the symmetric eigen
/// solver is used because the general SVD loses accuracy on these rank-3
/// matrices.
pub fn gram_factor(m: &Matrix4<f64>) -> Matrix4<f64> {
    let eig = m.symmetric_eigen();
    let root = Vector4::from_iterator(eig.eigenvalues.iter().map(|s| s.max(0.0).sqrt()));
    &eig.eigenvectors * Matrix4::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// Cosine point pair feature of `x` relative to `reference`:
/// `(cos<n_ref,d>, cos<n_x,d>, cos<n_ref,n_x>, |d|)` with `d = x - reference`.
pub fn point_pair_feature(x: &Vec3, n_x: &Vec3, reference: &Vec3, n_ref: &Vec3) -> [f64; 4] {
    let d = x - reference;
    let len = d.norm();
    let normals = n_ref.dot(n_x);
    if len <= ZERO_NORM {
        return [0.0, 0.0, normals, 0.0];
    }
    [n_ref.dot(&d) / len, n_x.dot(&d) / len, normals, len]
}
