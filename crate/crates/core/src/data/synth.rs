//! Analytic shapes with exact normals and part labels, plus jitter.

use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};

use crate::data::DatasetSample;
use crate::error::{Error, Result};
use crate::geom::{PointCloud, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Sphere,
    Box,
    Cylinder,
    Cone,
    Torus,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [
        ShapeKind::Sphere,
        ShapeKind::Box,
        ShapeKind::Cylinder,
        ShapeKind::Cone,
        ShapeKind::Torus,
    ];

    pub fn class_id(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).expect("listed")
    }

    /// Global part ids belonging to this shape.
    pub fn parts(self) -> &'static [usize] {
        match self {
            ShapeKind::Sphere => &[0],
            ShapeKind::Box => &[1, 2, 3],
            ShapeKind::Cylinder => &[4, 5],
            ShapeKind::Cone => &[6, 7],
            ShapeKind::Torus => &[8],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Box => "box",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Cone => "cone",
            ShapeKind::Torus => "torus",
        }
    }
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown shape kind '{s}'")))
    }
}

/// Total number of distinct part ids over all synthetic shapes.
pub const SYNTH_PART_COUNT: usize = 9;

/// Cylinder part ids.
pub const CYLINDER_BODY: usize = 4;
pub const CYLINDER_CAP: usize = 5;

/// Shape dimensions. Unused fields are ignored by a given kind.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeParams {
    /// Sphere radius, cylinder/cone base radius, torus tube radius.
    pub radius: f64,
    /// Cylinder/cone height, torus ring radius.
    pub height: f64,
    /// Box half extents.
    pub half: [f64; 3],
}

impl ShapeParams {
    /// Randomized dimensions so that a class is not a single rigid template.
    pub fn random<R: Rng>(kind: ShapeKind, rng: &mut R) -> Self {
        let mut p = ShapeParams {
            radius: 1.0,
            height: 1.0,
            half: [0.5; 3],
        };
        match kind {
            ShapeKind::Sphere => p.radius = rng.random_range(0.8..1.2),
            ShapeKind::Box => p.half = std::array::from_fn(|_| rng.random_range(0.3..0.7)),
            ShapeKind::Cylinder => {
                p.radius = rng.random_range(0.35..0.6);
                p.height = rng.random_range(1.2..2.0);
            }
            ShapeKind::Cone => {
                p.radius = rng.random_range(0.5..0.9);
                p.height = rng.random_range(1.0..1.8);
            }
            ShapeKind::Torus => {
                p.height = rng.random_range(0.7..1.0);
                p.radius = rng.random_range(0.2..0.35);
            }
        }
        p
    }
}

/// A sample of `kind` with dimensions drawn from `seed`.
pub fn synth_shape(kind: ShapeKind, n: usize, seed: u64, noise: f64) -> Result<DatasetSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ShapeParams::random(kind, &mut rng);
    synth_shape_with(kind, &params, n, rng.random(), noise)
}

/// Samples `n` surface points of `kind`, uniform by area, with analytic normals.
///
/// `noise` is the standard deviation of a displacement along the normal.
pub fn synth_shape_with(
    kind: ShapeKind,
    params: &ShapeParams,
    n: usize,
    seed: u64,
    noise: f64,
) -> Result<DatasetSample> {
    if n < 64 {
        return Err(Error::invalid("synthetic shapes need at least 64 points"));
    }
    if !(noise >= 0.0) {
        return Err(Error::invalid("noise must be nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut parts = Vec::with_capacity(n);
    for _ in 0..n {
        let (p, nrm, part) = match kind {
            ShapeKind::Sphere => sphere_point(params.radius, &mut rng),
            ShapeKind::Box => box_point(params.half, &mut rng),
            ShapeKind::Cylinder => cylinder_point(params.radius, params.height, &mut rng),
            ShapeKind::Cone => cone_point(params.radius, params.height, &mut rng),
            ShapeKind::Torus => torus_point(params.height, params.radius, &mut rng),
        };
        let offset = if noise > 0.0 {
            noise * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        points.push(p + nrm * offset);
        normals.push(nrm);
        parts.push(part);
    }
    let mut cloud = PointCloud::new(points);
    cloud.normals = Some(normals);
    cloud.label = Some(kind.class_id());
    cloud.part_labels = Some(parts);
    Ok(DatasetSample {
        cloud,
        class_id: kind.class_id(),
    })
}

fn unit_vector<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn sphere_point<R: Rng>(r: f64, rng: &mut R) -> (Vec3, Vec3, usize) {
    let n = unit_vector(rng);
    (n * r, n, 0)
}

fn box_point<R: Rng>(half: [f64; 3], rng: &mut R) -> (Vec3, Vec3, usize) {
    let areas = [half[1] * half[2], half[0] * half[2], half[0] * half[1]];
    let axis = WeightedIndex::new(areas).expect("positive extents").sample(rng);
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let mut p = Vec3::new(
        rng.random_range(-half[0]..half[0]),
        rng.random_range(-half[1]..half[1]),
        rng.random_range(-half[2]..half[2]),
    );
    p[axis] = sign * half[axis];
    let mut n = Vec3::zeros();
    n[axis] = sign;
    (p, n, 1 + axis)
}

fn disk_point<R: Rng>(r: f64, rng: &mut R) -> (f64, f64) {
    let rho = r * rng.random::<f64>().sqrt();
    let theta = rng.random_range(0.0..2.0 * PI);
    (rho * theta.cos(), rho * theta.sin())
}

fn cylinder_point<R: Rng>(r: f64, h: f64, rng: &mut R) -> (Vec3, Vec3, usize) {
    let side = 2.0 * PI * r * h;
    let caps = 2.0 * PI * r * r;
    if rng.random::<f64>() * (side + caps) < side {
        let theta = rng.random_range(0.0..2.0 * PI);
        let z = rng.random_range(-h / 2.0..h / 2.0);
        let n = Vec3::new(theta.cos(), theta.sin(), 0.0);
        (Vec3::new(r * n.x, r * n.y, z), n, CYLINDER_BODY)
    } else {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let (x, y) = disk_point(r, rng);
        (Vec3::new(x, y, sign * h / 2.0), Vec3::new(0.0, 0.0, sign), CYLINDER_CAP)
    }
}

fn cone_point<R: Rng>(r: f64, h: f64, rng: &mut R) -> (Vec3, Vec3, usize) {
    let slant = (r * r + h * h).sqrt();
    let lateral = PI * r * slant;
    let base = PI * r * r;
    if rng.random::<f64>() * (lateral + base) < base {
        let (x, y) = disk_point(r, rng);
        (Vec3::new(x, y, 0.0), -Vec3::z(), 6)
    } else {
        // distance from apex grows like sqrt(u) for uniform area
        let t = rng.random::<f64>().sqrt();
        let theta = rng.random_range(0.0..2.0 * PI);
        let (c, s) = (theta.cos(), theta.sin());
        let p = Vec3::new(r * t * c, r * t * s, h * (1.0 - t));
        let n = Vec3::new(h * c, h * s, r) / slant;
        (p, n, 7)
    }
}

fn torus_point<R: Rng>(ring: f64, tube: f64, rng: &mut R) -> (Vec3, Vec3, usize) {
    let theta = rng.random_range(0.0..2.0 * PI);
    let phi = loop {
        let phi = rng.random_range(0.0..2.0 * PI);
        // area element is proportional to ring + tube*cos(phi)
        if rng.random::<f64>() * (ring + tube) <= ring + tube * phi.cos() {
            break phi;
        }
    };
    let n = Vec3::new(phi.cos() * theta.cos(), phi.cos() * theta.sin(), phi.sin());
    let p = Vec3::new(ring * theta.cos(), ring * theta.sin(), 0.0) + n * tube;
    (p, n, 8)
}

/// Adds clipped Gaussian noise to every coordinate. Normals are kept.
pub fn jitter(cloud: &PointCloud, sigma: f64, clip: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma >= 0.0) || !(clip >= 0.0) {
        return Err(Error::invalid("jitter sigma and clip must be nonnegative"));
    }
    if sigma == 0.0 {
        return Ok(cloud.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = cloud.clone();
    for p in out.points.iter_mut() {
        for c in 0..3 {
            p[c] += normal.sample(&mut rng).clamp(-clip, clip);
        }
    }
    Ok(out)
}
