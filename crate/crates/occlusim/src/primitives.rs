//! Procedural primitive meshes.
//!
//! Handy for toy shape databases, documentation examples, and oracle tests
//! with analytically known geometry. All primitives are watertight, centered
//! at the origin, and wound counterclockwise seen from outside.

use crate::geom::Vec3;
use crate::mesh::TriangleMesh;

/// Axis-aligned box with the given full extents.
pub fn box_mesh(extents: Vec3) -> TriangleMesh {
    let h = extents * 0.5;
    let v = |i: usize| {
        Vec3::new(
            if i & 1 == 0 { -h.x } else { h.x },
            if i & 2 == 0 { -h.y } else { h.y },
            if i & 4 == 0 { -h.z } else { h.z },
        )
    };
    let vertices: Vec<Vec3> = (0..8).map(v).collect();
    let faces = vec![
        // -z
        [0, 2, 3],
        [0, 3, 1],
        // +z
        [4, 5, 7],
        [4, 7, 6],
        // -y
        [0, 1, 5],
        [0, 5, 4],
        // +y
        [2, 6, 7],
        [2, 7, 3],
        // -x
        [0, 4, 6],
        [0, 6, 2],
        // +x
        [1, 3, 7],
        [1, 7, 5],
    ];
    TriangleMesh::new(vertices, faces, None).expect("box is valid")
}

/// Cube with side length `side`.
pub fn cube(side: f64) -> TriangleMesh {
    box_mesh(Vec3::new(side, side, side))
}

/// Latitude/longitude sphere. `segments` is the azimuth count (≥ 3),
/// `rings` the latitude band count (≥ 2).
pub fn uv_sphere(radius: f64, segments: usize, rings: usize) -> TriangleMesh {
    assert!(segments >= 3 && rings >= 2);
    let mut vertices = vec![Vec3::new(0.0, radius, 0.0)];
    for r in 1..rings {
        let phi = std::f64::consts::PI * r as f64 / rings as f64;
        let (sp, cp) = phi.sin_cos();
        for s in 0..segments {
            let theta = std::f64::consts::TAU * s as f64 / segments as f64;
            let (st, ct) = theta.sin_cos();
            vertices.push(Vec3::new(radius * sp * ct, radius * cp, radius * sp * st));
        }
    }
    vertices.push(Vec3::new(0.0, -radius, 0.0));
    let bottom = vertices.len() - 1;

    let ring_start = |r: usize| 1 + (r - 1) * segments;
    let mut faces = Vec::new();
    for s in 0..segments {
        let s1 = (s + 1) % segments;
        faces.push([0, ring_start(1) + s1, ring_start(1) + s]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            let s1 = (s + 1) % segments;
            let a = ring_start(r) + s;
            let b = ring_start(r) + s1;
            let c = ring_start(r + 1) + s;
            let d = ring_start(r + 1) + s1;
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }
    for s in 0..segments {
        let s1 = (s + 1) % segments;
        faces.push([bottom, ring_start(rings - 1) + s, ring_start(rings - 1) + s1]);
    }
    TriangleMesh::new(vertices, faces, None).expect("sphere is valid")
}

/// Capped cylinder along +Y.
pub fn cylinder(radius: f64, height: f64, segments: usize) -> TriangleMesh {
    assert!(segments >= 3);
    let h = height / 2.0;
    let mut vertices = Vec::new();
    for &y in &[-h, h] {
        for s in 0..segments {
            let theta = std::f64::consts::TAU * s as f64 / segments as f64;
            let (st, ct) = theta.sin_cos();
            vertices.push(Vec3::new(radius * ct, y, radius * st));
        }
    }
    let top_center = vertices.len();
    vertices.push(Vec3::new(0.0, h, 0.0));
    let bottom_center = vertices.len();
    vertices.push(Vec3::new(0.0, -h, 0.0));

    let mut faces = Vec::new();
    for s in 0..segments {
        let s1 = (s + 1) % segments;
        let (b0, b1) = (s, s1);
        let (t0, t1) = (segments + s, segments + s1);
        faces.push([b0, t0, t1]);
        faces.push([b0, t1, b1]);
        faces.push([top_center, segments + s, segments + s1]);
        faces.push([bottom_center, s1, s]);
    }
    TriangleMesh::new(vertices, faces, None).expect("cylinder is valid")
}

/// Cone along +Y with apex up and a disk cap at the base.
pub fn cone(radius: f64, height: f64, segments: usize) -> TriangleMesh {
    assert!(segments >= 3);
    let h = height / 2.0;
    let mut vertices = Vec::new();
    for s in 0..segments {
        let theta = std::f64::consts::TAU * s as f64 / segments as f64;
        let (st, ct) = theta.sin_cos();
        vertices.push(Vec3::new(radius * ct, -h, radius * st));
    }
    let apex = vertices.len();
    vertices.push(Vec3::new(0.0, h, 0.0));
    let base_center = vertices.len();
    vertices.push(Vec3::new(0.0, -h, 0.0));

    let mut faces = Vec::new();
    for s in 0..segments {
        let s1 = (s + 1) % segments;
        faces.push([apex, s, s1]);
        faces.push([base_center, s1, s]);
    }
    TriangleMesh::new(vertices, faces, None).expect("cone is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_bbox_matches_extents() {
        let m = box_mesh(Vec3::new(2.0, 1.0, 0.5));
        let (lo, hi) = m.bbox();
        assert_eq!(hi - lo, Vec3::new(2.0, 1.0, 0.5));
        assert_eq!(m.faces().len(), 12);
    }

    #[test]
    fn cube_surface_area() {
        let m = cube(2.0);
        let total: f64 = m.face_areas().iter().sum();
        assert!((total - 24.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_area_approaches_analytic() {
        let m = uv_sphere(1.0, 64, 32);
        let total: f64 = m.face_areas().iter().sum();
        let analytic = 4.0 * std::f64::consts::PI;
        assert!((total - analytic).abs() / analytic < 0.01, "{total}");
    }

    #[test]
    fn cylinder_vertices_on_radius() {
        let m = cylinder(0.5, 2.0, 24);
        let (lo, hi) = m.bbox();
        assert!((hi.y - 1.0).abs() < 1e-12 && (lo.y + 1.0).abs() < 1e-12);
        assert!((hi.x - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cone_has_apex() {
        let m = cone(0.5, 1.0, 16);
        let (lo, hi) = m.bbox();
        assert!((hi.y - 0.5).abs() < 1e-12 && (lo.y + 0.5).abs() < 1e-12);
    }
}
