//! Solid voxelization on the canonical `[-0.5, 0.5]³` grid and voxel IoU.
//!
//! Voxelization marks every cell overlapping the surface (exact
//! triangle-box separating-axis tests), then flood-fills the exterior from
//! the grid boundary; occupied cells are everything not reached. Open
//! surfaces therefore voxelize to their surface shell only, and
//! non-watertight meshes do not leak. A parity (ray-crossing) fill is
//! available as an alternative for watertight input.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geom::Vec3;
use crate::mesh::TriangleMesh;

pub const DEFAULT_RESOLUTION: usize = 128;

#[derive(Error, Debug)]
pub enum VoxelError {
    #[error("resolution must be at least 1")]
    ZeroResolution,
    #[error("mesh bbox {0:?}..{1:?} exceeds the canonical [-0.5, 0.5] grid; normalize first")]
    OutOfFrame(Vec3, Vec3),
    #[error("grids disagree on resolution or frame")]
    FrameMismatch,
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed voxel grid file {path}: {message}")]
    Format { path: PathBuf, message: String },
}

/// How interior cells are determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillMethod {
    /// Exterior flood fill from the grid boundary. Robust to open and
    /// non-watertight meshes.
    #[default]
    FloodFill,
    /// Ray-crossing parity along +x per cell row. Requires watertight input.
    Parity,
}

/// Cubic occupancy grid over `[-0.5, 0.5]³`, bit-packed.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    resolution: usize,
    origin: Vec3,
    cell_size: f64,
    bits: Vec<u64>,
}

impl VoxelGrid {
    fn empty(resolution: usize) -> Self {
        let cells = resolution * resolution * resolution;
        VoxelGrid {
            resolution,
            origin: Vec3::new(-0.5, -0.5, -0.5),
            cell_size: 1.0 / resolution as f64,
            bits: vec![0u64; cells.div_ceil(64)],
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.resolution * (y + self.resolution * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        let i = self.index(x, y, z);
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.index(x, y, z);
        if value {
            self.bits[i / 64] |= 1 << (i % 64);
        } else {
            self.bits[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn count_occupied(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// World-space center of a cell.
    pub fn cell_center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        self.origin
            + Vec3::new(
                (x as f64 + 0.5) * self.cell_size,
                (y as f64 + 0.5) * self.cell_size,
                (z as f64 + 0.5) * self.cell_size,
            )
    }
}

/// Bit-count intersection over union; 1 if both grids are empty. Grids must
/// share resolution and frame.
pub fn voxel_iou(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64, VoxelError> {
    if a.resolution != b.resolution || a.origin != b.origin || a.cell_size != b.cell_size {
        return Err(VoxelError::FrameMismatch);
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&wa, &wb) in a.bits.iter().zip(&b.bits) {
        inter += (wa & wb).count_ones() as usize;
        union += (wa | wb).count_ones() as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Solid voxelization at `resolution³` with the default flood-fill method.
pub fn voxelize_solid(mesh: &TriangleMesh, resolution: usize) -> Result<VoxelGrid, VoxelError> {
    voxelize_solid_with(mesh, resolution, FillMethod::FloodFill)
}

pub fn voxelize_solid_with(
    mesh: &TriangleMesh,
    resolution: usize,
    method: FillMethod,
) -> Result<VoxelGrid, VoxelError> {
    if resolution == 0 {
        return Err(VoxelError::ZeroResolution);
    }
    let (lo, hi) = mesh.bbox();
    let slack = 1e-9;
    if lo.x < -0.5 - slack
        || lo.y < -0.5 - slack
        || lo.z < -0.5 - slack
        || hi.x > 0.5 + slack
        || hi.y > 0.5 + slack
        || hi.z > 0.5 + slack
    {
        return Err(VoxelError::OutOfFrame(lo, hi));
    }
    let surface = surface_grid(mesh, resolution);
    let occupied = match method {
        FillMethod::FloodFill => {
            let exterior = exterior_fill(&surface);
            let mut grid = VoxelGrid::empty(resolution);
            for (slot, (&s, &e)) in grid
                .bits
                .iter_mut()
                .zip(surface.bits.iter().zip(&exterior.bits))
                .map(|(slot, pair)| (slot, pair))
            {
                *slot = s | !e;
            }
            // mask out padding bits beyond the cell count
            let cells = resolution * resolution * resolution;
            let tail = cells % 64;
            if tail != 0 {
                let last = grid.bits.len() - 1;
                grid.bits[last] &= (1u64 << tail) - 1;
            }
            grid
        }
        FillMethod::Parity => {
            let mut grid = parity_fill(mesh, resolution);
            for (slot, &s) in grid.bits.iter_mut().zip(&surface.bits) {
                *slot |= s;
            }
            grid
        }
    };
    Ok(occupied)
}

/// Cells overlapped by any triangle, via separating-axis triangle/box tests.
fn surface_grid(mesh: &TriangleMesh, resolution: usize) -> VoxelGrid {
    let mut grid = VoxelGrid::empty(resolution);
    let r = resolution as i64;
    let cell = grid.cell_size;
    let to_cell = |c: f64| -> i64 { ((c + 0.5) / cell).floor() as i64 };
    for face in 0..mesh.faces().len() {
        let [a, b, c] = mesh.triangle(face);
        let lo = a.min_componentwise(b).min_componentwise(c);
        let hi = a.max_componentwise(b).max_componentwise(c);
        let x0 = to_cell(lo.x).clamp(0, r - 1);
        let x1 = to_cell(hi.x).clamp(0, r - 1);
        let y0 = to_cell(lo.y).clamp(0, r - 1);
        let y1 = to_cell(hi.y).clamp(0, r - 1);
        let z0 = to_cell(lo.z).clamp(0, r - 1);
        let z1 = to_cell(hi.z).clamp(0, r - 1);
        let half = Vec3::new(cell / 2.0, cell / 2.0, cell / 2.0);
        for z in z0..=z1 {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let (xu, yu, zu) = (x as usize, y as usize, z as usize);
                    if grid.get(xu, yu, zu) {
                        continue;
                    }
                    let center = grid.cell_center(xu, yu, zu);
                    if tri_box_overlap(center, half, a, b, c) {
                        grid.set(xu, yu, zu, true);
                    }
                }
            }
        }
    }
    grid
}

/// BFS from every non-surface boundary cell through non-surface cells.
fn exterior_fill(surface: &VoxelGrid) -> VoxelGrid {
    let r = surface.resolution;
    let mut exterior = VoxelGrid::empty(r);
    let mut queue = std::collections::VecDeque::new();
    let push = |exterior: &mut VoxelGrid,
                    queue: &mut std::collections::VecDeque<(usize, usize, usize)>,
                    x: usize,
                    y: usize,
                    z: usize| {
        if !surface.get(x, y, z) && !exterior.get(x, y, z) {
            exterior.set(x, y, z, true);
            queue.push_back((x, y, z));
        }
    };
    for a in 0..r {
        for b in 0..r {
            push(&mut exterior, &mut queue, a, b, 0);
            push(&mut exterior, &mut queue, a, b, r - 1);
            push(&mut exterior, &mut queue, a, 0, b);
            push(&mut exterior, &mut queue, a, r - 1, b);
            push(&mut exterior, &mut queue, 0, a, b);
            push(&mut exterior, &mut queue, r - 1, a, b);
        }
    }
    while let Some((x, y, z)) = queue.pop_front() {
        let neighbors = [
            (x.wrapping_sub(1), y, z),
            (x + 1, y, z),
            (x, y.wrapping_sub(1), z),
            (x, y + 1, z),
            (x, y, z.wrapping_sub(1)),
            (x, y, z + 1),
        ];
        for (nx, ny, nz) in neighbors {
            if nx < r && ny < r && nz < r {
                push(&mut exterior, &mut queue, nx, ny, nz);
            }
        }
    }
    exterior
}

/// Ray-crossing parity along +x for each (y, z) cell row.
fn parity_fill(mesh: &TriangleMesh, resolution: usize) -> VoxelGrid {
    let mut grid = VoxelGrid::empty(resolution);
    let cell = grid.cell_size;
    for z in 0..resolution {
        for y in 0..resolution {
            // tiny irrational offsets steer the ray away from edges/vertices
            let oy = grid.origin.y + (y as f64 + 0.5 + 1.7e-7) * cell;
            let oz = grid.origin.z + (z as f64 + 0.5 + 2.9e-7) * cell;
            let origin = Vec3::new(-1.0, oy, oz);
            let mut crossings: Vec<f64> = Vec::new();
            for face in 0..mesh.faces().len() {
                let [a, b, c] = mesh.triangle(face);
                if let Some(t) = ray_x_triangle(origin, a, b, c) {
                    crossings.push(t);
                }
            }
            crossings.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for pair in crossings.chunks_exact(2) {
                let (enter, exit) = (origin.x + pair[0], origin.x + pair[1]);
                for x in 0..resolution {
                    let cx = grid.origin.x + (x as f64 + 0.5) * cell;
                    if cx >= enter && cx <= exit {
                        grid.set(x, y, z, true);
                    }
                }
            }
        }
    }
    grid
}

/// Möller–Trumbore for a ray along +x. Returns the ray parameter.
fn ray_x_triangle(origin: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Option<f64> {
    let dir = Vec3::new(1.0, 0.0, 0.0);
    let e1 = b - a;
    let e2 = c - a;
    let h = dir.cross(e2);
    let det = e1.dot(h);
    if det.abs() < 1e-15 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(h) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = dir.dot(q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(q) * inv;
    (t > 0.0).then_some(t)
}

/// Akenine-Möller triangle–AABB separating-axis overlap test.
fn tri_box_overlap(center: Vec3, half: Vec3, a: Vec3, b: Vec3, c: Vec3) -> bool {
    let v0 = a - center;
    let v1 = b - center;
    let v2 = c - center;
    let e0 = v1 - v0;
    let e1 = v2 - v1;
    let e2 = v0 - v2;

    let axis_test = |a_coord: f64,
                     b_coord: f64,
                     fa: f64,
                     fb: f64,
                     p0: f64,
                     p1: f64,
                     ha: f64,
                     hb: f64|
     -> bool {
        let _ = (a_coord, b_coord);
        let (min, max) = if p0 < p1 { (p0, p1) } else { (p1, p0) };
        let rad = fa * ha + fb * hb;
        !(min > rad || max < -rad)
    };

    // 9 cross-product axes
    let f = |e: Vec3| (e.x.abs(), e.y.abs(), e.z.abs());
    for (e, (va, vb)) in [(e0, (v0, v2)), (e1, (v0, v2)), (e2, (v0, v1))] {
        let (fex, fey, fez) = f(e);
        // axis = (1,0,0) x e
        let p_a = e.z * va.y - e.y * va.z;
        let p_b = e.z * vb.y - e.y * vb.z;
        if !axis_test(0.0, 0.0, fez, fey, p_a, p_b, half.y, half.z) {
            return false;
        }
        // axis = (0,1,0) x e
        let p_a = -e.z * va.x + e.x * va.z;
        let p_b = -e.z * vb.x + e.x * vb.z;
        if !axis_test(0.0, 0.0, fez, fex, p_a, p_b, half.x, half.z) {
            return false;
        }
        // axis = (0,0,1) x e
        let p_a = e.y * va.x - e.x * va.y;
        let p_b = e.y * vb.x - e.x * vb.y;
        if !axis_test(0.0, 0.0, fey, fex, p_a, p_b, half.x, half.y) {
            return false;
        }
    }

    // AABB overlap on the coordinate axes
    let min3 = |p: f64, q: f64, r: f64| p.min(q).min(r);
    let max3 = |p: f64, q: f64, r: f64| p.max(q).max(r);
    if min3(v0.x, v1.x, v2.x) > half.x || max3(v0.x, v1.x, v2.x) < -half.x {
        return false;
    }
    if min3(v0.y, v1.y, v2.y) > half.y || max3(v0.y, v1.y, v2.y) < -half.y {
        return false;
    }
    if min3(v0.z, v1.z, v2.z) > half.z || max3(v0.z, v1.z, v2.z) < -half.z {
        return false;
    }

    // triangle plane vs box
    let normal = e0.cross(e1);
    let d = -normal.dot(v0);
    let r = half.x * normal.x.abs() + half.y * normal.y.abs() + half.z * normal.z.abs();
    let s = d;
    (-r..=r).contains(&s)
}

/// Grid file layout (little endian): u32 resolution, 3×f64 origin, f64 cell
/// size, u64 run count, then u64 run lengths alternating empty-first over
/// the x-fastest linear cell order.
pub fn save_grid(grid: &VoxelGrid, path: &Path) -> Result<(), VoxelError> {
    let io_err = |source| VoxelError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(&(grid.resolution as u32).to_le_bytes()).map_err(io_err)?;
    for v in [grid.origin.x, grid.origin.y, grid.origin.z, grid.cell_size] {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    let cells = grid.resolution * grid.resolution * grid.resolution;
    let mut runs: Vec<u64> = Vec::new();
    let mut current = false;
    let mut run_len = 0u64;
    for i in 0..cells {
        let v = grid.bits[i / 64] >> (i % 64) & 1 == 1;
        if v == current {
            run_len += 1;
        } else {
            runs.push(run_len);
            current = v;
            run_len = 1;
        }
    }
    runs.push(run_len);
    w.write_all(&(runs.len() as u64).to_le_bytes()).map_err(io_err)?;
    for r in runs {
        w.write_all(&r.to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn load_grid(path: &Path) -> Result<VoxelGrid, VoxelError> {
    let io_err = |source| VoxelError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut r = std::io::BufReader::new(file);
    let mut u32b = [0u8; 4];
    let mut f64b = [0u8; 8];
    r.read_exact(&mut u32b).map_err(io_err)?;
    let resolution = u32::from_le_bytes(u32b) as usize;
    let mut fields = [0.0f64; 4];
    for slot in &mut fields {
        r.read_exact(&mut f64b).map_err(io_err)?;
        *slot = f64::from_le_bytes(f64b);
    }
    let mut grid = VoxelGrid::empty(resolution);
    grid.origin = Vec3::new(fields[0], fields[1], fields[2]);
    grid.cell_size = fields[3];
    r.read_exact(&mut f64b).map_err(io_err)?;
    let run_count = u64::from_le_bytes(f64b) as usize;
    let cells = resolution * resolution * resolution;
    let mut i = 0usize;
    let mut value = false;
    for _ in 0..run_count {
        r.read_exact(&mut f64b).map_err(io_err)?;
        let len = u64::from_le_bytes(f64b) as usize;
        if value {
            for k in i..i + len {
                if k >= cells {
                    return Err(VoxelError::Format {
                        path: path.to_path_buf(),
                        message: "runs exceed cell count".into(),
                    });
                }
                grid.bits[k / 64] |= 1 << (k % 64);
            }
        }
        i += len;
        value = !value;
    }
    if i != cells {
        return Err(VoxelError::Format {
            path: path.to_path_buf(),
            message: format!("runs cover {i} cells, expected {cells}"),
        });
    }
    Ok(grid)
}
