//! Triangle meshes, Wavefront OBJ I/O, canonical normalization, and the
//! on-disk shape database.
//!
//! Conventions: units are meters, the up axis is +Y, and the floor plane is
//! `y = 0`. Canonical normalization recenters the axis-aligned bounding box
//! at the origin and scales the largest extent to 1, so every normalized
//! shape fits in `[-0.5, 0.5]^3`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Mat3, Vec3};

#[derive(Error, Debug)]
pub enum MeshError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("mesh has no geometry")]
    EmptyMesh,
    #[error("face {face} references vertex {index} but mesh has {vertex_count} vertices")]
    FaceIndexOutOfRange {
        face: usize,
        index: usize,
        vertex_count: usize,
    },
    #[error("face {face} repeats a vertex index")]
    DegenerateFaceIndices { face: usize },
    #[error("vertex normal {index} is not unit length")]
    NonUnitNormal { index: usize },
    #[error("normal count {normals} does not match vertex count {vertices}")]
    NormalCountMismatch { normals: usize, vertices: usize },
    #[error("bounding box has zero extent on every axis")]
    DegenerateBbox,
    #[error("similarity transform must have positive scale, got {0}")]
    NonPositiveScale(f64),
    #[error("rotation matrix is not orthonormal with determinant +1")]
    InvalidRotation,
    #[error("shape database manifest error: {0}")]
    Manifest(String),
    #[error("unknown shape id {0:?}")]
    UnknownShape(String),
}

/// Indexed triangle geometry. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    vertex_normals: Option<Vec<Vec3>>,
}

impl TriangleMesh {
    /// Validates the structural invariants: indices in range, three distinct
    /// indices per face, and unit vertex normals when present.
    pub fn new(
        vertices: Vec<Vec3>,
        faces: Vec<[usize; 3]>,
        vertex_normals: Option<Vec<Vec3>>,
    ) -> Result<Self, MeshError> {
        if vertices.is_empty() || faces.is_empty() {
            return Err(MeshError::EmptyMesh);
        }
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                if i >= vertices.len() {
                    return Err(MeshError::FaceIndexOutOfRange {
                        face: fi,
                        index: i,
                        vertex_count: vertices.len(),
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::DegenerateFaceIndices { face: fi });
            }
        }
        if let Some(normals) = &vertex_normals {
            if normals.len() != vertices.len() {
                return Err(MeshError::NormalCountMismatch {
                    normals: normals.len(),
                    vertices: vertices.len(),
                });
            }
            for (i, n) in normals.iter().enumerate() {
                if (n.norm() - 1.0).abs() > 1e-6 {
                    return Err(MeshError::NonUnitNormal { index: i });
                }
            }
        }
        Ok(TriangleMesh {
            vertices,
            faces,
            vertex_normals,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_normals(&self) -> Option<&[Vec3]> {
        self.vertex_normals.as_deref()
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Per-face areas. Degenerate faces get area 0 and are kept.
    pub fn face_areas(&self) -> Vec<f64> {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                let u = self.vertices[b] - self.vertices[a];
                let v = self.vertices[c] - self.vertices[a];
                0.5 * u.cross(v).norm()
            })
            .collect()
    }

    /// Unit face normal from the winding order; `None` for degenerate faces.
    pub fn face_normal(&self, face: usize) -> Option<Vec3> {
        let [a, b, c] = self.triangle(face);
        (b - a).cross(c - a).normalized()
    }

    /// Axis-aligned bounding box (min corner, max corner).
    pub fn bbox(&self) -> (Vec3, Vec3) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for &v in &self.vertices[1..] {
            lo = lo.min_componentwise(v);
            hi = hi.max_componentwise(v);
        }
        (lo, hi)
    }

    /// Applies `p ↦ scale · R · p + t` to every vertex. Vertex normals are
    /// rotated only and re-normalized.
    pub fn apply_transform(&self, t: &SimilarityTransform) -> TriangleMesh {
        let vertices = self.vertices.iter().map(|&v| t.apply_point(v)).collect();
        let vertex_normals = self.vertex_normals.as_ref().map(|ns| {
            ns.iter()
                .map(|&n| t.rotation.apply(n).normalized().unwrap_or(n))
                .collect()
        });
        TriangleMesh {
            vertices,
            faces: self.faces.clone(),
            vertex_normals,
        }
    }
}

/// Scale rule for canonical normalization.
///
/// `MaxExtent` (the default) maps the largest bounding-box extent to 1;
/// `Diagonal` maps the bounding-box diagonal to 1. Both recenter the
/// bounding box at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NormalizationScale {
    #[default]
    MaxExtent,
    Diagonal,
}

/// Uniform scale, rotation, translation — applied in that order:
/// `p ↦ scale · R · p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl SimilarityTransform {
    pub const IDENTITY: SimilarityTransform = SimilarityTransform {
        scale: 1.0,
        rotation: Mat3::IDENTITY,
        translation: Vec3::ZERO,
    };

    pub fn new(scale: f64, rotation: Mat3, translation: Vec3) -> Result<Self, MeshError> {
        if !(scale > 0.0) {
            return Err(MeshError::NonPositiveScale(scale));
        }
        if !rotation.is_rotation(1e-9) {
            return Err(MeshError::InvalidRotation);
        }
        Ok(SimilarityTransform {
            scale,
            rotation,
            translation,
        })
    }

    /// Yaw about +Y followed by a translation, at unit scale. This is the
    /// object-placement pose used by scene layouts.
    pub fn pose(yaw: f64, translation: Vec3) -> SimilarityTransform {
        SimilarityTransform {
            scale: 1.0,
            rotation: Mat3::yaw(yaw),
            translation,
        }
    }

    pub fn apply_point(&self, p: Vec3) -> Vec3 {
        self.rotation.apply(p) * self.scale + self.translation
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let rt = self.rotation.transpose();
        SimilarityTransform {
            scale: 1.0 / self.scale,
            rotation: rt,
            translation: rt.apply(self.translation) * (-1.0 / self.scale),
        }
    }
}

/// Recenter the bounding box at the origin and scale per `rule`.
/// Returns the normalized mesh and the transform that was applied.
pub fn normalize_canonical_with(
    mesh: &TriangleMesh,
    rule: NormalizationScale,
) -> Result<(TriangleMesh, SimilarityTransform), MeshError> {
    let (lo, hi) = mesh.bbox();
    let extent = hi - lo;
    let denom = match rule {
        NormalizationScale::MaxExtent => extent.x.max(extent.y).max(extent.z),
        NormalizationScale::Diagonal => extent.norm(),
    };
    if denom <= 0.0 {
        return Err(MeshError::DegenerateBbox);
    }
    let center = (lo + hi) * 0.5;
    let scale = 1.0 / denom;
    let transform = SimilarityTransform {
        scale,
        rotation: Mat3::IDENTITY,
        translation: center * -scale,
    };
    Ok((mesh.apply_transform(&transform), transform))
}

/// [`normalize_canonical_with`] under the default max-extent rule.
pub fn normalize_canonical(
    mesh: &TriangleMesh,
) -> Result<(TriangleMesh, SimilarityTransform), MeshError> {
    normalize_canonical_with(mesh, NormalizationScale::MaxExtent)
}

/// One shape in a database: mesh plus category label and the length of the
/// shortest horizontal bounding-box edge (used as the placement distance
/// unit during scene layout).
#[derive(Debug, Clone)]
pub struct ShapeRecord {
    pub shape_id: String,
    pub category: String,
    pub mesh: TriangleMesh,
    pub short_side: f64,
}

impl ShapeRecord {
    pub fn new(shape_id: String, category: String, mesh: TriangleMesh) -> Result<Self, MeshError> {
        if category.is_empty() {
            return Err(MeshError::Manifest(format!(
                "shape {shape_id:?} has an empty category"
            )));
        }
        let (lo, hi) = mesh.bbox();
        let short_side = (hi.x - lo.x).min(hi.z - lo.z);
        if !(short_side > 0.0) {
            return Err(MeshError::DegenerateBbox);
        }
        Ok(ShapeRecord {
            shape_id,
            category,
            mesh,
            short_side,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    category: String,
}

/// A directory of OBJ files described by a `manifest.json` that maps
/// `shape_id → { file, category }`.
#[derive(Debug)]
pub struct ShapeDb {
    shapes: BTreeMap<String, ShapeRecord>,
}

impl ShapeDb {
    pub fn from_records(records: Vec<ShapeRecord>) -> Self {
        ShapeDb {
            shapes: records
                .into_iter()
                .map(|r| (r.shape_id.clone(), r))
                .collect(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self, MeshError> {
        let manifest_path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&manifest_path).map_err(|source| MeshError::Io {
            path: manifest_path.clone(),
            source,
        })?;
        let entries: BTreeMap<String, ManifestEntry> = serde_json::from_str(&text)
            .map_err(|e| MeshError::Manifest(format!("{}: {e}", manifest_path.display())))?;
        let mut shapes = BTreeMap::new();
        for (shape_id, entry) in entries {
            let mesh = load_obj(&dir.join(&entry.file))?;
            let record = ShapeRecord::new(shape_id.clone(), entry.category, mesh)?;
            shapes.insert(shape_id, record);
        }
        Ok(ShapeDb { shapes })
    }

    /// Writes every mesh plus the manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), MeshError> {
        std::fs::create_dir_all(dir).map_err(|source| MeshError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut entries = BTreeMap::new();
        for (id, record) in &self.shapes {
            let file = format!("{id}.obj");
            write_obj(&record.mesh, &dir.join(&file))?;
            entries.insert(
                id.clone(),
                ManifestEntry {
                    file,
                    category: record.category.clone(),
                },
            );
        }
        let manifest_path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&entries).expect("manifest serializes");
        std::fs::write(&manifest_path, json).map_err(|source| MeshError::Io {
            path: manifest_path,
            source,
        })
    }

    pub fn get(&self, shape_id: &str) -> Result<&ShapeRecord, MeshError> {
        self.shapes
            .get(shape_id)
            .ok_or_else(|| MeshError::UnknownShape(shape_id.to_string()))
    }

    pub fn contains(&self, shape_id: &str) -> bool {
        self.shapes.contains_key(shape_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.shapes.keys().map(|s| s.as_str())
    }

    pub fn records(&self) -> impl Iterator<Item = &ShapeRecord> {
        self.shapes.values()
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    /// Sorted list of distinct categories.
    pub fn categories(&self) -> Vec<String> {
        let mut cats: Vec<String> = self
            .shapes
            .values()
            .map(|r| r.category.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        cats.sort();
        cats
    }

    pub fn by_category(&self, category: &str) -> Vec<&ShapeRecord> {
        self.shapes
            .values()
            .filter(|r| r.category == category)
            .collect()
    }
}

/// Parses an ASCII Wavefront OBJ file.
///
/// Supports `v`, `vn`, and `f` records with `v`, `v/vt`, `v//vn`, and
/// `v/vt/vn` reference forms, 1-based and negative (relative) indices.
/// Faces with more than three corners are fan-triangulated around the first
/// corner. Vertex normals are attached only when the file pairs normal `i`
/// with vertex `i` for every corner; anything else leaves normals absent.
pub fn load_obj(path: &Path) -> Result<TriangleMesh, MeshError> {
    let file = std::fs::File::open(path).map_err(|source| MeshError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);

    let mut vertices: Vec<Vec3> = Vec::new();
    let mut normals: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    // (vertex, normal) pairs per corner; used to decide normal attachment.
    let mut aligned_normals = true;
    let mut saw_face_normal = false;

    let parse_err = |line: usize, message: String| MeshError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    for (line_idx, line) in reader.lines().enumerate() {
        let line_no = line_idx + 1;
        let line = line.map_err(|source| MeshError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tag = parts.next().unwrap();
        match tag {
            "v" => {
                let coords = parse_floats(&mut parts, 3)
                    .map_err(|m| parse_err(line_no, format!("vertex: {m}")))?;
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            "vn" => {
                let coords = parse_floats(&mut parts, 3)
                    .map_err(|m| parse_err(line_no, format!("normal: {m}")))?;
                normals.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            "f" => {
                let mut corners: Vec<(usize, Option<usize>)> = Vec::new();
                for token in parts {
                    let corner = parse_face_corner(token, vertices.len(), normals.len())
                        .map_err(|m| parse_err(line_no, m))?;
                    corners.push(corner);
                }
                if corners.len() < 3 {
                    return Err(parse_err(
                        line_no,
                        format!("face has {} corners, need at least 3", corners.len()),
                    ));
                }
                for (v, n) in &corners {
                    match n {
                        Some(n) => {
                            saw_face_normal = true;
                            if n != v {
                                aligned_normals = false;
                            }
                        }
                        None => aligned_normals = false,
                    }
                }
                for i in 1..corners.len() - 1 {
                    let tri = [corners[0].0, corners[i].0, corners[i + 1].0];
                    if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                        return Err(parse_err(line_no, "face repeats a vertex index".into()));
                    }
                    faces.push(tri);
                }
            }
            // vt, o, g, s, usemtl, mtllib: ignored.
            _ => {}
        }
    }

    if vertices.is_empty() || faces.is_empty() {
        return Err(MeshError::EmptyMesh);
    }
    let vertex_normals = if saw_face_normal && aligned_normals && normals.len() == vertices.len() {
        let renormed: Option<Vec<Vec3>> = normals.iter().map(|n| n.normalized()).collect();
        renormed
    } else {
        None
    };
    TriangleMesh::new(vertices, faces, vertex_normals)
}

fn parse_floats<'a>(
    parts: &mut impl Iterator<Item = &'a str>,
    n: usize,
) -> Result<Vec<f64>, String> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let token = parts
            .next()
            .ok_or_else(|| format!("expected {n} coordinates, found {i}"))?;
        out.push(
            token
                .parse::<f64>()
                .map_err(|_| format!("invalid float {token:?}"))?,
        );
    }
    Ok(out)
}

/// Resolves a 1-based or negative OBJ index against the current count.
fn resolve_index(raw: i64, count: usize, kind: &str) -> Result<usize, String> {
    let idx = if raw > 0 {
        raw - 1
    } else if raw < 0 {
        count as i64 + raw
    } else {
        return Err(format!("{kind} index 0 is not valid in OBJ"));
    };
    if idx < 0 || idx as usize >= count {
        return Err(format!(
            "{kind} index {raw} out of range (have {count} {kind}s)"
        ));
    }
    Ok(idx as usize)
}

fn parse_face_corner(
    token: &str,
    vertex_count: usize,
    normal_count: usize,
) -> Result<(usize, Option<usize>), String> {
    let mut fields = token.split('/');
    let v_field = fields.next().unwrap_or("");
    let raw_v: i64 = v_field
        .parse()
        .map_err(|_| format!("invalid face corner {token:?}"))?;
    let v = resolve_index(raw_v, vertex_count, "vertex")?;
    let _vt = fields.next(); // texture coordinates ignored
    let n = match fields.next() {
        Some("") | None => None,
        Some(n_field) => {
            let raw_n: i64 = n_field
                .parse()
                .map_err(|_| format!("invalid face corner {token:?}"))?;
            Some(resolve_index(raw_n, normal_count, "normal")?)
        }
    };
    if fields.next().is_some() {
        return Err(format!("invalid face corner {token:?}"));
    }
    Ok((v, n))
}

/// Writes the mesh as ASCII OBJ. Vertices and faces round-trip exactly
/// through [`load_obj`]: floats are printed with Rust's shortest
/// representation, which parses back to the same bits.
pub fn write_obj(mesh: &TriangleMesh, path: &Path) -> Result<(), MeshError> {
    let io_err = |source| MeshError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    let mut emit = |s: String| w.write_all(s.as_bytes()).map_err(io_err);
    for v in mesh.vertices() {
        emit(format!("v {} {} {}\n", v.x, v.y, v.z))?;
    }
    if let Some(normals) = mesh.vertex_normals() {
        for n in normals {
            emit(format!("vn {} {} {}\n", n.x, n.y, n.z))?;
        }
        for f in mesh.faces() {
            emit(format!(
                "f {}//{} {}//{} {}//{}\n",
                f[0] + 1,
                f[0] + 1,
                f[1] + 1,
                f[1] + 1,
                f[2] + 1,
                f[2] + 1
            ))?;
        }
    } else {
        for f in mesh.faces() {
            emit(format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1))?;
        }
    }
    w.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write as _;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn unit_cube() -> TriangleMesh {
        crate::primitives::cube(1.0)
    }

    fn cube_at(center: Vec3, side: f64) -> TriangleMesh {
        crate::primitives::cube(side).apply_transform(&SimilarityTransform::pose(0.0, center))
    }

    #[test]
    fn load_single_triangle() {
        let f = write_temp("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
        let mesh = load_obj(f.path()).unwrap();
        assert_eq!(mesh.vertices().len(), 3);
        assert_eq!(mesh.faces().len(), 1);
        assert!(mesh.vertex_normals().is_none());
    }

    #[test]
    fn quad_fan_triangulates() {
        let f = write_temp("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n");
        let mesh = load_obj(f.path()).unwrap();
        assert_eq!(mesh.faces(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn out_of_range_index_names_line() {
        let f = write_temp("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 5\n");
        let err = load_obj(f.path()).unwrap_err();
        match err {
            MeshError::Parse { line, message, .. } => {
                assert_eq!(line, 5);
                assert!(message.contains("out of range"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_geometry_rejected() {
        let f = write_temp("# nothing here\n");
        assert!(matches!(load_obj(f.path()), Err(MeshError::EmptyMesh)));
    }

    #[test]
    fn slash_forms_parse() {
        let f = write_temp(
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nvn 0 0 1\nvn 0 0 1\nf 1//1 2//2 3//3\n",
        );
        let mesh = load_obj(f.path()).unwrap();
        assert!(mesh.vertex_normals().is_some());
        let f2 = write_temp("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1 2/2 3/3\n");
        let mesh2 = load_obj(f2.path()).unwrap();
        assert!(mesh2.vertex_normals().is_none());
    }

    #[test]
    fn normalize_centered_cube() {
        let mesh = cube_at(Vec3::new(5.0, 5.0, 5.0), 1.0);
        let (normed, t) = normalize_canonical(&mesh).unwrap();
        let (lo, hi) = normed.bbox();
        assert!((lo.x + 0.5).abs() < 1e-12 && (hi.x - 0.5).abs() < 1e-12);
        assert!((t.scale - 1.0).abs() < 1e-12);
        let tr = t.translation;
        assert!((tr.x + 5.0).abs() < 1e-12 && (tr.y + 5.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_scales_max_extent() {
        let verts = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(2.0, 1.0, 0.0), Vec3::new(0.0, 1.0, 1.0)];
        let mesh = TriangleMesh::new(verts, vec![[0, 1, 2]], None).unwrap();
        let (normed, _) = normalize_canonical(&mesh).unwrap();
        let (lo, hi) = normed.bbox();
        let e = hi - lo;
        assert!((e.x - 1.0).abs() < 1e-12);
        assert!((e.y - 0.5).abs() < 1e-12);
        assert!((e.z - 0.5).abs() < 1e-12);
    }

    #[test]
    fn normalize_twice_is_identity() {
        let mesh = cube_at(Vec3::new(3.0, -2.0, 0.5), 2.5);
        let (once, _) = normalize_canonical(&mesh).unwrap();
        let (_, t2) = normalize_canonical(&once).unwrap();
        assert!((t2.scale - 1.0).abs() < 1e-9);
        assert!(t2.translation.norm() < 1e-9);
    }

    #[test]
    fn right_triangle_area() {
        let verts = vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let mesh = TriangleMesh::new(verts, vec![[0, 1, 2]], None).unwrap();
        assert!((mesh.face_areas()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identity_transform_is_noop() {
        let mesh = unit_cube();
        let out = mesh.apply_transform(&SimilarityTransform::IDENTITY);
        assert_eq!(mesh, out);
    }

    #[test]
    fn inverse_round_trip() {
        let mesh = cube_at(Vec3::new(1.0, 2.0, 3.0), 1.5);
        let t = SimilarityTransform::new(
            2.5,
            Mat3::yaw(0.7),
            Vec3::new(-1.0, 4.0, 0.25),
        )
        .unwrap();
        let back = mesh.apply_transform(&t).apply_transform(&t.inverse());
        for (a, b) in mesh.vertices().iter().zip(back.vertices()) {
            assert!(a.distance(*b) < 1e-9);
        }
    }

    #[test]
    fn obj_round_trip_exact() {
        let mesh = cube_at(Vec3::new(0.1234567890123, -7.5, 1e-9), 0.77);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.obj");
        write_obj(&mesh, &path).unwrap();
        let loaded = load_obj(&path).unwrap();
        assert_eq!(mesh.vertices(), loaded.vertices());
        assert_eq!(mesh.faces(), loaded.faces());
    }

    #[test]
    fn shape_db_round_trip() {
        let db = ShapeDb::from_records(vec![
            ShapeRecord::new("cube_a".into(), "chair".into(), unit_cube()).unwrap(),
            ShapeRecord::new("cube_b".into(), "table".into(), cube_at(Vec3::ZERO, 2.0)).unwrap(),
        ]);
        let dir = tempfile::tempdir().unwrap();
        db.save(dir.path()).unwrap();
        let loaded = ShapeDb::load(dir.path()).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.get("cube_a").unwrap().category, "chair");
        assert_eq!(loaded.categories(), vec!["chair", "table"]);
        assert!((loaded.get("cube_b").unwrap().short_side - 2.0).abs() < 1e-12);
    }
}
