//! Normal estimation and the key point response.
//!
//! The response of a point sums the sines of the angles between its normal and
//! its neighbors' normals, so it is near zero on flat regions and large on
//! edges and corners.

use nalgebra::{Matrix3, SymmetricEigen};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::graph::{knn_graph, KnnGraph};

/// Default neighborhood size for responses.
pub const DEFAULT_RESPONSE_K: usize = 16;

/// Per-point responses, each in `[0, K]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseVector {
    pub values: Vec<f64>,
    pub k: usize,
}

impl ResponseVector {
    /// Rescales to `[0, 1]` by dividing by `K`.
    pub fn normalized(&self) -> Self {
        ResponseVector {
            values: self.values.iter().map(|v| v / self.k as f64).collect(),
            k: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fusion {
    Sum,
    Mul,
}

impl std::str::FromStr for Fusion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Fusion::Sum),
            "mul" => Ok(Fusion::Mul),
            other => Err(Error::invalid(format!("unknown fusion mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for Fusion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Fusion::Sum => "sum",
            Fusion::Mul => "mul",
        })
    }
}

/// PCA normals over each point and its `k` nearest neighbors.
///
/// The sign is chosen so the normal points away from the cloud centroid, or
/// away from the local centroid when the point sits level with the former.
pub fn estimate_normals(points: &[Vec3], k: usize) -> Result<Vec<Vec3>> {
    if k < 3 {
        return Err(Error::invalid("normal estimation needs k >= 3"));
    }
    let graph = knn_graph(points, k)?;
    estimate_normals_with(points, &graph)
}

pub fn estimate_normals_with(points: &[Vec3], graph: &KnnGraph) -> Result<Vec<Vec3>> {
    let mut normals = Vec::with_capacity(points.len());
    let center = points.iter().sum::<Vec3>() / points.len().max(1) as f64;
    for (i, p) in points.iter().enumerate() {
        let hood: Vec<Vec3> = std::iter::once(*p)
            .chain(graph.neighbors(i).iter().map(|&j| points[j]))
            .collect();
        let centroid = hood.iter().sum::<Vec3>() / hood.len() as f64;
        let cov = hood.iter().fold(Matrix3::zeros(), |acc, q| {
            let d = q - centroid;
            acc + d * d.transpose()
        }) / hood.len() as f64;
        let scale = hood.iter().map(|q| q.norm()).fold(1.0, f64::max);
        if cov.trace() <= 1e-24 * scale * scale {
            return Err(Error::degenerate(format!(
                "neighborhood of point {i} has no spread"
            )));
        }
        let eig = SymmetricEigen::new(cov);
        let smallest = eig.eigenvalues.imin();
        let mut n: Vec3 = eig.eigenvectors.column(smallest).into_owned().normalize();
        let outward = p - center;
        let side = if n.dot(&outward).abs() > 1e-9 * outward.norm().max(scale) {
            n.dot(&outward)
        } else {
            n.dot(&(p - centroid))
        };
        if side < 0.0 {
            n = -n;
        }
        normals.push(n);
    }
    Ok(normals)
}

/// `values[r] = sum over neighbors i of |n_i x n_r|`.
pub fn keypoint_response(normals: &[Vec3], graph: &KnnGraph) -> Result<ResponseVector> {
    if normals.len() != graph.len() {
        return Err(Error::invalid(format!(
            "{} normals for a graph over {} points",
            normals.len(),
            graph.len()
        )));
    }
    if let Some(i) = normals.iter().position(|n| (n.norm() - 1.0).abs() > 1e-6) {
        return Err(Error::invalid(format!("normal {i} is not unit length")));
    }
    let values = normals
        .iter()
        .enumerate()
        .map(|(r, nr)| {
            graph
                .neighbors(r)
                .iter()
                .map(|&i| normals[i].cross(nr).norm().min(1.0))
                .sum()
        })
        .collect();
    Ok(ResponseVector {
        values,
        k: graph.k(),
    })
}

/// Adds (`Sum`) or multiplies (`Mul`) each point's response into every channel.
pub fn attach_response(feats: &Array2<f64>, responses: &[f64], mode: Fusion) -> Result<Array2<f64>> {
    if feats.nrows() != responses.len() {
        return Err(Error::invalid(format!(
            "{} responses for {} feature rows",
            responses.len(),
            feats.nrows()
        )));
    }
    let mut out = feats.clone();
    for (mut row, &v) in out.rows_mut().into_iter().zip(responses) {
        match mode {
            Fusion::Sum => row.mapv_inplace(|x| x + v),
            Fusion::Mul => row.mapv_inplace(|x| x * v),
        }
    }
    Ok(out)
}
