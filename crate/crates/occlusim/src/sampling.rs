//! Surface point sampling: face-area-weighted sampling (FAS) and farthest
//! point sampling (FPS), both with per-point normals.
//!
//! Every sampler is a pure function of `(mesh, n, seed)`. Ties in the FPS
//! greedy selection always break toward the lowest pool index, so the same
//! inputs give bit-identical clouds on every platform.

use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geom::Vec3;
use crate::mesh::TriangleMesh;

#[derive(Error, Debug)]
pub enum SamplingError {
    #[error("sample count must be at least 1")]
    ZeroCount,
    #[error("mesh surface area is zero; nothing to sample")]
    ZeroSurfaceArea,
    #[error("FPS pool size {pool} is smaller than requested count {count}")]
    PoolTooSmall { pool: usize, count: usize },
    #[error("point and normal counts differ: {points} vs {normals}")]
    LengthMismatch { points: usize, normals: usize },
    #[error("normal {index} is not unit length")]
    NonUnitNormal { index: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed point cloud file {path}: {message}")]
    Format { path: PathBuf, message: String },
}

/// Points with parallel unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    normals: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self, SamplingError> {
        if points.len() != normals.len() {
            return Err(SamplingError::LengthMismatch {
                points: points.len(),
                normals: normals.len(),
            });
        }
        for (i, n) in normals.iter().enumerate() {
            if (n.norm() - 1.0).abs() > 1e-6 {
                return Err(SamplingError::NonUnitNormal { index: i });
            }
        }
        Ok(PointCloud { points, normals })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Smallest pairwise distance; `None` when the cloud has fewer than two
    /// points. Quadratic; intended for diagnostics and tests.
    pub fn min_pairwise_distance(&self) -> Option<f64> {
        if self.points.len() < 2 {
            return None;
        }
        let mut best = f64::INFINITY;
        for i in 0..self.points.len() {
            for j in i + 1..self.points.len() {
                best = best.min(self.points[i].distance(self.points[j]));
            }
        }
        Some(best)
    }
}

struct AreaTable {
    cumulative: Vec<f64>,
    total: f64,
}

impl AreaTable {
    fn build(mesh: &TriangleMesh) -> Result<Self, SamplingError> {
        let mut cumulative = Vec::with_capacity(mesh.faces().len());
        let mut total = 0.0;
        for area in mesh.face_areas() {
            total += area;
            cumulative.push(total);
        }
        if total <= 0.0 {
            return Err(SamplingError::ZeroSurfaceArea);
        }
        Ok(AreaTable { cumulative, total })
    }

    fn pick(&self, u: f64) -> usize {
        let target = u * self.total;
        let idx = self.cumulative.partition_point(|&c| c <= target);
        idx.min(self.cumulative.len() - 1)
    }
}

/// Face-area-weighted sampling: choose a face with probability proportional
/// to its area, then a uniform barycentric point on it. The point's normal
/// is the face normal. Degenerate faces carry zero weight.
pub fn sample_fas(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud, SamplingError> {
    if n == 0 {
        return Err(SamplingError::ZeroCount);
    }
    let table = AreaTable::build(mesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    while points.len() < n {
        let u: f64 = rng.gen();
        let face = table.pick(u);
        let Some(normal) = mesh.face_normal(face) else {
            // Zero-area face hit on an exact cumulative boundary; redraw.
            continue;
        };
        let [a, b, c] = mesh.triangle(face);
        let r1: f64 = rng.gen();
        let r2: f64 = rng.gen();
        let su = r1.sqrt();
        let w0 = 1.0 - su;
        let w1 = su * (1.0 - r2);
        let w2 = su * r2;
        points.push(a * w0 + b * w1 + c * w2);
        normals.push(normal);
    }
    PointCloud::new(points, normals)
}

/// Farthest point sampling over a FAS pool of `pool` points (default 8·n via
/// [`sample_fps`]). The first selection is the pool point farthest from the
/// pool centroid; each subsequent selection maximizes the minimum distance
/// to the already-selected set, ties toward the lowest pool index.
pub fn sample_fps_with_pool(
    mesh: &TriangleMesh,
    n: usize,
    seed: u64,
    pool: usize,
) -> Result<PointCloud, SamplingError> {
    if n == 0 {
        return Err(SamplingError::ZeroCount);
    }
    if pool < n {
        return Err(SamplingError::PoolTooSmall { pool, count: n });
    }
    let pool_cloud = sample_fas(mesh, pool, seed)?;
    let pts = pool_cloud.points();

    let centroid = pts.iter().fold(Vec3::ZERO, |acc, &p| acc + p) / pts.len() as f64;
    let mut start = 0;
    let mut best = -1.0;
    for (i, p) in pts.iter().enumerate() {
        let d = p.distance_squared(centroid);
        if d > best {
            best = d;
            start = i;
        }
    }

    let mut selected = Vec::with_capacity(n);
    selected.push(start);
    // min squared distance from each pool point to the selected set
    let mut min_d2: Vec<f64> = pts.iter().map(|p| p.distance_squared(pts[start])).collect();
    while selected.len() < n {
        let mut next = 0;
        let mut best = -1.0;
        for (i, &d) in min_d2.iter().enumerate() {
            if d > best {
                best = d;
                next = i;
            }
        }
        selected.push(next);
        let np = pts[next];
        for (i, d) in min_d2.iter_mut().enumerate() {
            let cand = pts[i].distance_squared(np);
            if cand < *d {
                *d = cand;
            }
        }
    }

    let points = selected.iter().map(|&i| pts[i]).collect();
    let normals = selected.iter().map(|&i| pool_cloud.normals()[i]).collect();
    PointCloud::new(points, normals)
}

/// [`sample_fps_with_pool`] with the default pool of `8 * n` points.
pub fn sample_fps(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud, SamplingError> {
    sample_fps_with_pool(mesh, n, seed, 8 * n)
}

/// Which surface sampler to run; used by CLI flags and the stability study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    Fas,
    Fps,
}

impl Sampler {
    pub fn sample(
        &self,
        mesh: &TriangleMesh,
        n: usize,
        seed: u64,
    ) -> Result<PointCloud, SamplingError> {
        match self {
            Sampler::Fas => sample_fas(mesh, n, seed),
            Sampler::Fps => sample_fps(mesh, n, seed),
        }
    }
}

impl std::str::FromStr for Sampler {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fas" => Ok(Sampler::Fas),
            "fps" => Ok(Sampler::Fps),
            other => Err(format!("unknown sampler {other:?} (expected fas or fps)")),
        }
    }
}

impl std::fmt::Display for Sampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Sampler::Fas => write!(f, "fas"),
            Sampler::Fps => write!(f, "fps"),
        }
    }
}

/// Binary layout: `u64` little-endian point count, then per point six
/// little-endian `f32` values `x y z nx ny nz`.
pub fn write_cloud_binary(cloud: &PointCloud, path: &Path) -> Result<(), SamplingError> {
    let io_err = |source| SamplingError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(&(cloud.len() as u64).to_le_bytes()).map_err(io_err)?;
    for (p, n) in cloud.points().iter().zip(cloud.normals()) {
        for v in [p.x, p.y, p.z, n.x, n.y, n.z] {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn read_cloud_binary(path: &Path) -> Result<PointCloud, SamplingError> {
    let io_err = |source| SamplingError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut r = std::io::BufReader::new(file);
    let mut count_buf = [0u8; 8];
    r.read_exact(&mut count_buf).map_err(io_err)?;
    let count = u64::from_le_bytes(count_buf) as usize;
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    let mut rec = [0u8; 24];
    for i in 0..count {
        r.read_exact(&mut rec).map_err(|_| SamplingError::Format {
            path: path.to_path_buf(),
            message: format!("truncated at record {i} of {count}"),
        })?;
        let f = |k: usize| f32::from_le_bytes(rec[k * 4..k * 4 + 4].try_into().unwrap()) as f64;
        points.push(Vec3::new(f(0), f(1), f(2)));
        normals.push(Vec3::new(f(3), f(4), f(5)));
    }
    PointCloud::new(points, normals)
}

/// Text layout: one point per line, `x y z nx ny nz` separated by spaces.
pub fn write_cloud_text(cloud: &PointCloud, path: &Path) -> Result<(), SamplingError> {
    let io_err = |source| SamplingError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    for (p, n) in cloud.points().iter().zip(cloud.normals()) {
        writeln!(w, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_cloud_text(path: &Path) -> Result<PointCloud, SamplingError> {
    let io_err = |source| SamplingError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let r = std::io::BufReader::new(file);
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for (line_idx, line) in r.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
        let vals = vals.map_err(|e| SamplingError::Format {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", line_idx + 1),
        })?;
        if vals.len() != 6 {
            return Err(SamplingError::Format {
                path: path.to_path_buf(),
                message: format!("line {}: expected 6 values, got {}", line_idx + 1, vals.len()),
            });
        }
        points.push(Vec3::new(vals[0], vals[1], vals[2]));
        normals.push(Vec3::new(vals[3], vals[4], vals[5]));
    }
    PointCloud::new(points, normals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::point_triangle_distance;
    use crate::mesh::TriangleMesh;

    fn single_triangle() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Vec3::ZERO,
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap()
    }

    /// Two coplanar triangles with areas 4.5 and 0.5 (ratio 9:1).
    fn two_triangles_9_to_1() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Vec3::ZERO,
                Vec3::new(3.0, 0.0, 0.0),
                Vec3::new(0.0, 3.0, 0.0),
                Vec3::new(10.0, 0.0, 0.0),
                Vec3::new(11.0, 0.0, 0.0),
                Vec3::new(10.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn fas_single_triangle_points_inside() {
        let mesh = single_triangle();
        let cloud = sample_fas(&mesh, 4, 11).unwrap();
        assert_eq!(cloud.len(), 4);
        let [a, b, c] = mesh.triangle(0);
        let n = mesh.face_normal(0).unwrap();
        for (p, pn) in cloud.points().iter().zip(cloud.normals()) {
            assert!(point_triangle_distance(*p, a, b, c) < 1e-12);
            assert!(pn.distance(n) < 1e-12);
        }
    }

    #[test]
    fn fas_respects_area_weights() {
        // Binomial(10000, 0.9): mean 9000, sigma = sqrt(10000*0.9*0.1) = 30.
        // The spec band [8700, 9300] is ±10 sigma; we assert that band.
        let mesh = two_triangles_9_to_1();
        let cloud = sample_fas(&mesh, 10_000, 42).unwrap();
        let on_big = cloud
            .points()
            .iter()
            .filter(|p| p.x < 5.0)
            .count();
        assert!((8700..=9300).contains(&on_big), "count {on_big}");
    }

    #[test]
    fn fas_deterministic() {
        let mesh = two_triangles_9_to_1();
        let a = sample_fas(&mesh, 257, 7).unwrap();
        let b = sample_fas(&mesh, 257, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fps_equal_pool_is_permutation() {
        let mesh = single_triangle();
        let n = 16;
        let pool = sample_fas(&mesh, n, 3).unwrap();
        let fps = sample_fps_with_pool(&mesh, n, 3, n).unwrap();
        let mut a: Vec<_> = pool.points().iter().map(|p| format!("{p:?}")).collect();
        let mut b: Vec<_> = fps.points().iter().map(|p| format!("{p:?}")).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn fps_cube_corners_picks_diameter() {
        // Pool = 8 cube corners (via a degenerate trick: we bypass FAS by
        // running the greedy step directly on a synthetic pool).
        let corners: Vec<Vec3> = (0..8)
            .map(|i| {
                Vec3::new(
                    if i & 1 == 0 { 0.0 } else { 1.0 },
                    if i & 2 == 0 { 0.0 } else { 1.0 },
                    if i & 4 == 0 { 0.0 } else { 1.0 },
                )
            })
            .collect();
        let selected = greedy_fps_oracle(&corners, 2);
        let a = corners[selected[0]];
        let b = corners[selected[1]];
        assert!((a.distance(b) - 3f64.sqrt()).abs() < 1e-12);
    }

    /// Brute-force greedy FPS over explicit points: at every step scan all
    /// candidates for the argmax of min-distance. Independent of the
    /// incremental implementation.
    pub(crate) fn greedy_fps_oracle(points: &[Vec3], n: usize) -> Vec<usize> {
        let centroid = points.iter().fold(Vec3::ZERO, |a, &p| a + p) / points.len() as f64;
        let mut start = 0;
        let mut best = -1.0;
        for (i, p) in points.iter().enumerate() {
            let d = p.distance_squared(centroid);
            if d > best {
                best = d;
                start = i;
            }
        }
        let mut selected = vec![start];
        while selected.len() < n {
            let mut next = 0;
            let mut best = -1.0;
            for (i, p) in points.iter().enumerate() {
                let d = selected
                    .iter()
                    .map(|&s| p.distance_squared(points[s]))
                    .fold(f64::INFINITY, f64::min);
                if d > best {
                    best = d;
                    next = i;
                }
            }
            selected.push(next);
        }
        selected
    }

    #[test]
    fn fps_matches_exhaustive_oracle() {
        let mesh = crate::primitives::cube(1.0);
        let n = 64;
        let pool = 256;
        let fps = sample_fps_with_pool(&mesh, n, 5, pool).unwrap();
        let pool_cloud = sample_fas(&mesh, pool, 5).unwrap();
        let oracle = greedy_fps_oracle(pool_cloud.points(), n);
        for (k, &idx) in oracle.iter().enumerate() {
            assert_eq!(
                fps.points()[k],
                pool_cloud.points()[idx],
                "selection {k} diverged"
            );
        }
    }

    #[test]
    fn fps_spreads_at_least_as_well_as_fas() {
        let mut ok = 0;
        for seed in 0..20u64 {
            let mesh = crate::primitives::box_mesh(Vec3::new(
                1.0 + (seed as f64) * 0.05,
                0.8,
                1.2,
            ));
            let fas = sample_fas(&mesh, 48, seed).unwrap();
            let fps = sample_fps(&mesh, 48, seed).unwrap();
            if fps.min_pairwise_distance() >= fas.min_pairwise_distance() {
                ok += 1;
            }
        }
        assert_eq!(ok, 20);
    }

    #[test]
    fn samples_lie_on_surface() {
        let mesh = crate::primitives::box_mesh(Vec3::new(1.7, 0.9, 1.3));
        let cloud = sample_fps(&mesh, 64, 9).unwrap();
        for p in cloud.points() {
            let d = (0..mesh.faces().len())
                .map(|f| {
                    let [a, b, c] = mesh.triangle(f);
                    point_triangle_distance(*p, a, b, c)
                })
                .fold(f64::INFINITY, f64::min);
            assert!(d <= 1e-9, "sample {p:?} is {d} off the surface");
        }
    }

    #[test]
    fn cloud_binary_round_trip() {
        let mesh = single_triangle();
        let cloud = sample_fas(&mesh, 33, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pcb");
        write_cloud_binary(&cloud, &path).unwrap();
        let loaded = read_cloud_binary(&path).unwrap();
        assert_eq!(loaded.len(), 33);
        for (a, b) in cloud.points().iter().zip(loaded.points()) {
            assert!(a.distance(*b) < 1e-6); // f32 storage
        }
    }

    #[test]
    fn cloud_text_round_trip_exact() {
        let mesh = single_triangle();
        let cloud = sample_fas(&mesh, 17, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        write_cloud_text(&cloud, &path).unwrap();
        let loaded = read_cloud_text(&path).unwrap();
        assert_eq!(cloud, loaded);
    }

    #[test]
    fn zero_area_mesh_rejected() {
        let mesh = TriangleMesh::new(
            vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap();
        assert!(matches!(
            sample_fas(&mesh, 10, 0),
            Err(SamplingError::ZeroSurfaceArea)
        ));
    }
}
