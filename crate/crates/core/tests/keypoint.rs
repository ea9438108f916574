use srinet::data::{sample_surface, TriangleMesh};
use srinet::geom::Vec3;
use srinet::keypoint::{estimate_normals, keypoint_response};
use srinet::knn_graph;

/// Mean response of points within `radius` (max-norm) of any anchor.
fn mean_near(points: &[Vec3], values: &[f64], anchors: &[Vec3], radius: f64) -> f64 {
    let picked: Vec<f64> = points
        .iter()
        .zip(values)
        .filter(|(p, _)| anchors.iter().any(|a| (*p - a).amax() <= radius))
        .map(|(_, &v)| v)
        .collect();
    assert!(picked.len() >= 20, "only {} points near anchors", picked.len());
    picked.iter().sum::<f64>() / picked.len() as f64
}

fn cube_anchors() -> (Vec<Vec3>, Vec<Vec3>) {
    let mut corners = Vec::new();
    for x in [-0.5, 0.5] {
        for y in [-0.5, 0.5] {
            for z in [-0.5, 0.5] {
                corners.push(Vec3::new(x, y, z));
            }
        }
    }
    let mut faces = Vec::new();
    for axis in 0..3 {
        for s in [-0.5, 0.5] {
            let mut c = Vec3::zeros();
            c[axis] = s;
            faces.push(c);
        }
    }
    (corners, faces)
}

#[test]
fn cube_corners_respond_more_than_face_centers() {
    let cloud = sample_surface(&TriangleMesh::cube(0.5), 6000, 3).unwrap();
    let (corners, faces) = cube_anchors();
    let estimated = estimate_normals(&cloud.points, 16).unwrap();
    for normals in [cloud.normals.clone().unwrap(), estimated] {
        let graph = knn_graph(&cloud.points, 16).unwrap();
        let r = keypoint_response(&normals, &graph).unwrap().values;
        let at_corners = mean_near(&cloud.points, &r, &corners, 0.1);
        let at_faces = mean_near(&cloud.points, &r, &faces, 0.1);
        assert!(at_corners > 0.0);
        assert!(at_corners >= 2.0 * at_faces, "corners {at_corners}, faces {at_faces}");
    }
}
