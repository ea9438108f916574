use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{PointCloud, Rotation, Vec3};

/// Faces with area at or below this are dropped by [`TriangleMesh::cleaned`].
pub const MIN_FACE_AREA: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if let Some((f, _)) = faces
            .iter()
            .enumerate()
            .find(|(_, face)| face.iter().any(|&v| v >= vertices.len()))
        {
            return Err(Error::invalid(format!(
                "face {f} references a vertex outside 0..{}",
                vertices.len()
            )));
        }
        Ok(TriangleMesh { vertices, faces })
    }

    /// Axis-aligned cube `[-h, h]^3` with outward-wound faces.
    pub fn cube(half: f64) -> Self {
        let vertices = (0..8)
            .map(|i| {
                Vec3::new(
                    if i & 1 == 0 { -half } else { half },
                    if i & 2 == 0 { -half } else { half },
                    if i & 4 == 0 { -half } else { half },
                )
            })
            .collect();
        let quads = [
            [0, 2, 3, 1],
            [4, 5, 7, 6],
            [0, 1, 5, 4],
            [2, 6, 7, 3],
            [0, 4, 6, 2],
            [1, 3, 7, 5],
        ];
        let faces = quads
            .iter()
            .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
            .collect();
        TriangleMesh { vertices, faces }
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.corners(f);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn face_normal(&self, f: usize) -> Option<Vec3> {
        let [a, b, c] = self.corners(f);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        (len > 2.0 * MIN_FACE_AREA).then(|| n / len)
    }

    fn corners(&self, f: usize) -> [Vec3; 3] {
        self.faces[f].map(|v| self.vertices[v])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Drops zero-area faces.
    pub fn cleaned(&self) -> Self {
        TriangleMesh {
            vertices: self.vertices.clone(),
            faces: (0..self.faces.len())
                .filter(|&f| self.face_area(f) > MIN_FACE_AREA)
                .map(|f| self.faces[f])
                .collect(),
        }
    }

    pub fn rotated(&self, rotation: &Rotation) -> Self {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| rotation.apply(v)).collect(),
            faces: self.faces.clone(),
        }
    }
}

/// Area-weighted uniform surface samples with face normals.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    let (cloud, _) = sample_surface_with_faces(mesh, n, seed)?;
    Ok(cloud)
}

/// Like [`sample_surface`], also returning the source face of every sample.
pub fn sample_surface_with_faces(
    mesh: &TriangleMesh,
    n: usize,
    seed: u64,
) -> Result<(PointCloud, Vec<usize>)> {
    let areas: Vec<f64> = (0..mesh.faces.len())
        .map(|f| {
            let a = mesh.face_area(f);
            if a > MIN_FACE_AREA {
                a
            } else {
                0.0
            }
        })
        .collect();
    if areas.iter().all(|&a| a == 0.0) {
        return Err(Error::invalid("mesh has no face with positive area"));
    }
    let picker = WeightedIndex::new(&areas).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut faces = Vec::with_capacity(n);
    for _ in 0..n {
        let f = picker.sample(&mut rng);
        let [a, b, c] = mesh.corners(f);
        let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        points.push(a + (b - a) * u + (c - a) * v);
        normals.push(mesh.face_normal(f).expect("positive-area face"));
        faces.push(f);
    }
    let mut cloud = PointCloud::new(points);
    cloud.normals = Some(normals);
    Ok((cloud, faces))
}
