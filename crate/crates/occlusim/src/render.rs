//! Deterministic software z-buffer rasterizer and camera rig constructors.
//!
//! The rasterizer samples pixel centers, never culls back faces, and breaks
//! exact depth ties toward the lower instance id, so outputs are independent
//! of instance submission order. Shading is flat per face. Depth is
//! camera-space depth along the view axis (meters), 0 for background.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geom::{random_rotation, Vec3};
use crate::img::{DepthMap, GrayImage, InstanceMap, Mask, NormalMap};
use crate::mesh::{SimilarityTransform, TriangleMesh};

/// Default vertical field of view in degrees.
pub const DEFAULT_FOV_DEG: f64 = 60.0;
/// Default azimuth ring for per-shape multiview renderings.
pub const MULTIVIEW_VIEW_COUNT: usize = 12;
pub const MULTIVIEW_ELEVATION_DEG: f64 = 15.0;
pub const MULTIVIEW_DISTANCE: f64 = 1.5;
/// Geometry in front of the camera is kept beyond this view-axis depth.
const NEAR_PLANE: f64 = 1e-4;

#[derive(Error, Debug)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("instance id 0 is reserved for background")]
    ZeroInstanceId,
    #[error("duplicate instance id {0}")]
    DuplicateInstanceId(u16),
}

/// Pinhole camera. `width`/`height` are in pixels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    pub vertical_fov_deg: f64,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.position == self.look_at {
            return Err(RenderError::InvalidCamera(
                "position equals look_at".into(),
            ));
        }
        if !(self.vertical_fov_deg > 0.0 && self.vertical_fov_deg < 180.0) {
            return Err(RenderError::InvalidCamera(format!(
                "vertical fov {} out of (0, 180)",
                self.vertical_fov_deg
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(RenderError::InvalidCamera("zero resolution".into()));
        }
        let backward = (self.position - self.look_at).normalized().unwrap();
        if self.up.cross(backward).norm() < 1e-12 {
            return Err(RenderError::InvalidCamera(
                "up vector parallel to view direction".into(),
            ));
        }
        Ok(())
    }

    /// Unit view direction from the camera toward `look_at`.
    pub fn forward(&self) -> Vec3 {
        (self.look_at - self.position).normalized().unwrap()
    }

    /// Same pose and pixel-space focal length on a canvas enlarged by
    /// `factor` per side, centered on the original frame. With an odd
    /// factor, pixel `(x, y)` of the original maps to
    /// `(x + (factor-1)/2 * width, y + (factor-1)/2 * height)`.
    pub fn expanded(&self, factor: u32) -> Camera {
        let half_fov = (self.vertical_fov_deg / 2.0).to_radians();
        let new_fov = 2.0 * (factor as f64 * half_fov.tan()).atan().to_degrees();
        Camera {
            width: self.width * factor,
            height: self.height * factor,
            vertical_fov_deg: new_fov,
            ..*self
        }
    }

    fn basis(&self) -> CameraBasis {
        let backward = (self.position - self.look_at).normalized().unwrap();
        let right = self.up.cross(backward).normalized().unwrap();
        let up = backward.cross(right);
        CameraBasis {
            position: self.position,
            right,
            up,
            backward,
        }
    }
}

struct CameraBasis {
    position: Vec3,
    right: Vec3,
    up: Vec3,
    backward: Vec3,
}

impl CameraBasis {
    /// World point to camera space; the camera looks down -z.
    fn to_camera(&self, p: Vec3) -> Vec3 {
        let d = p - self.position;
        Vec3::new(self.right.dot(d), self.up.dot(d), self.backward.dot(d))
    }
}

/// Camera aimed at `look_at` from spherical coordinates around it.
pub fn orbit_camera(
    look_at: Vec3,
    azimuth_deg: f64,
    elevation_deg: f64,
    distance: f64,
    fov_deg: f64,
    width: u32,
    height: u32,
) -> Camera {
    let az = azimuth_deg.to_radians();
    let el = elevation_deg.to_radians();
    let offset = Vec3::new(
        distance * el.cos() * az.cos(),
        distance * el.sin(),
        distance * el.cos() * az.sin(),
    );
    Camera {
        position: look_at + offset,
        look_at,
        up: Vec3::new(0.0, 1.0, 0.0),
        vertical_fov_deg: fov_deg,
        width,
        height,
    }
}

/// All buffers share the camera resolution; the mask, `depth > 0`, and
/// `instance > 0` pixel sets are identical by construction.
#[derive(Debug, Clone)]
pub struct RenderOutputs {
    pub mask: Mask,
    pub depth: DepthMap,
    pub normal: NormalMap,
    pub instance: InstanceMap,
}

/// One mesh under a placement transform with a nonzero instance id.
pub struct RenderInstance<'a> {
    pub mesh: &'a TriangleMesh,
    pub transform: SimilarityTransform,
    pub instance_id: u16,
}

/// Perspective z-buffer rasterization of a set of placed instances.
pub fn rasterize(
    instances: &[RenderInstance<'_>],
    camera: &Camera,
) -> Result<RenderOutputs, RenderError> {
    camera.validate()?;
    let mut seen = std::collections::HashSet::new();
    for inst in instances {
        if inst.instance_id == 0 {
            return Err(RenderError::ZeroInstanceId);
        }
        if !seen.insert(inst.instance_id) {
            return Err(RenderError::DuplicateInstanceId(inst.instance_id));
        }
    }

    let basis = camera.basis();
    let (w, h) = (camera.width, camera.height);
    let focal = 1.0 / (camera.vertical_fov_deg.to_radians() / 2.0).tan();
    let aspect = w as f64 / h as f64;

    let mut frame = Frame {
        width: w,
        height: h,
        depth: vec![0.0f64; (w * h) as usize],
        instance: vec![0u16; (w * h) as usize],
        normal: vec![Vec3::ZERO; (w * h) as usize],
    };

    for inst in instances {
        let world = inst.mesh.apply_transform(&inst.transform);
        let cam_vertices: Vec<Vec3> = world.vertices().iter().map(|&v| basis.to_camera(v)).collect();
        for face in 0..world.faces().len() {
            let [ia, ib, ic] = world.faces()[face];
            let Some(world_normal) = world.face_normal(face) else {
                continue;
            };
            let tri = [cam_vertices[ia], cam_vertices[ib], cam_vertices[ic]];
            for clipped in clip_near(&tri) {
                frame.raster_triangle(&clipped, world_normal, inst.instance_id, focal, aspect);
            }
        }
    }

    let mask = Mask::from_data(w, h, frame.instance.iter().map(|&i| i > 0).collect()).unwrap();
    Ok(RenderOutputs {
        mask,
        depth: DepthMap::from_data(w, h, frame.depth).unwrap(),
        normal: NormalMap::from_data(w, h, frame.normal).unwrap(),
        instance: InstanceMap::from_data(w, h, frame.instance).unwrap(),
    })
}

/// Rasterizes a single mesh with instance id 1.
pub fn rasterize_single(
    mesh: &TriangleMesh,
    transform: &SimilarityTransform,
    camera: &Camera,
) -> Result<RenderOutputs, RenderError> {
    rasterize(
        &[RenderInstance {
            mesh,
            transform: *transform,
            instance_id: 1,
        }],
        camera,
    )
}

/// Untextured Lambertian rendering with a headlight: intensity is
/// `max(0, n · -view_direction)` quantized to 8 bits, on a white background.
pub fn render_grayscale(
    mesh: &TriangleMesh,
    transform: &SimilarityTransform,
    camera: &Camera,
) -> Result<GrayImage, RenderError> {
    let outputs = rasterize_single(mesh, transform, camera)?;
    Ok(shade_grayscale(&outputs, camera))
}

/// Headlight shading of already-rasterized outputs; see [`render_grayscale`].
pub fn shade_grayscale(outputs: &RenderOutputs, camera: &Camera) -> GrayImage {
    let light = -camera.forward();
    let mut img = GrayImage::new(outputs.mask.width(), outputs.mask.height());
    for y in 0..img.height() {
        for x in 0..img.width() {
            if outputs.instance.get(x, y) > 0 {
                let n = outputs.normal.get(x, y);
                let intensity = n.dot(light).max(0.0);
                img.set(x, y, (intensity * 255.0).round() as u8);
            }
        }
    }
    img
}

struct Frame {
    width: u32,
    height: u32,
    depth: Vec<f64>,
    instance: Vec<u16>,
    normal: Vec<Vec3>,
}

impl Frame {
    fn raster_triangle(
        &mut self,
        cam_tri: &[Vec3; 3],
        world_normal: Vec3,
        id: u16,
        focal: f64,
        aspect: f64,
    ) {
        let (w, h) = (self.width as f64, self.height as f64);
        // screen position + positive view depth per vertex
        let project = |v: Vec3| {
            let depth = -v.z;
            let x_ndc = focal / aspect * v.x / depth;
            let y_ndc = focal * v.y / depth;
            ((x_ndc + 1.0) * 0.5 * w, (1.0 - y_ndc) * 0.5 * h, depth)
        };
        let (x0, y0, d0) = project(cam_tri[0]);
        let (x1, y1, d1) = project(cam_tri[1]);
        let (x2, y2, d2) = project(cam_tri[2]);

        let edge = |ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64| {
            (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        };
        let area2 = edge(x0, y0, x1, y1, x2, y2);
        if area2 == 0.0 {
            return;
        }

        let min_x = x0.min(x1).min(x2);
        let max_x = x0.max(x1).max(x2);
        let min_y = y0.min(y1).min(y2);
        let max_y = y0.max(y1).max(y2);
        let px0 = ((min_x - 0.5).ceil().max(0.0)) as i64;
        let px1 = ((max_x - 0.5).floor()).min(w - 1.0) as i64;
        let py0 = ((min_y - 0.5).ceil().max(0.0)) as i64;
        let py1 = ((max_y - 0.5).floor()).min(h - 1.0) as i64;
        if px1 < px0 || py1 < py0 {
            return;
        }

        for py in py0..=py1 {
            for px in px0..=px1 {
                let cx = px as f64 + 0.5;
                let cy = py as f64 + 0.5;
                let w0 = edge(x1, y1, x2, y2, cx, cy);
                let w1 = edge(x2, y2, x0, y0, cx, cy);
                let w2 = edge(x0, y0, x1, y1, cx, cy);
                let inside = (w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0)
                    || (w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0);
                if !inside {
                    continue;
                }
                let l0 = w0 / area2;
                let l1 = w1 / area2;
                let l2 = w2 / area2;
                // 1/depth interpolates linearly in screen space
                let inv_d = l0 / d0 + l1 / d1 + l2 / d2;
                if inv_d <= 0.0 {
                    continue;
                }
                let depth = 1.0 / inv_d;
                let idx = (py as u32 * self.width + px as u32) as usize;
                let cur = self.depth[idx];
                let closer = cur == 0.0
                    || depth < cur
                    || (depth == cur && id < self.instance[idx]);
                if closer {
                    self.depth[idx] = depth;
                    self.instance[idx] = id;
                    self.normal[idx] = world_normal;
                }
            }
        }
    }
}

/// Clips a camera-space triangle against the near plane, producing 0–2
/// triangles entirely in front of the camera.
fn clip_near(tri: &[Vec3; 3]) -> Vec<[Vec3; 3]> {
    let inside = |v: &Vec3| v.z <= -NEAR_PLANE;
    let mut poly: Vec<Vec3> = Vec::with_capacity(4);
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let a_in = inside(&a);
        let b_in = inside(&b);
        if a_in {
            poly.push(a);
        }
        if a_in != b_in {
            let t = (-NEAR_PLANE - a.z) / (b.z - a.z);
            poly.push(a + (b - a) * t);
        }
    }
    match poly.len() {
        0..=2 => Vec::new(),
        3 => vec![[poly[0], poly[1], poly[2]]],
        _ => vec![[poly[0], poly[1], poly[2]], [poly[0], poly[2], poly[3]]],
    }
}

/// Cameras evenly spaced in azimuth on a fixed-elevation ring, all looking
/// at the origin.
pub fn shape_multiview_cameras(
    count: usize,
    elevation_deg: f64,
    distance: f64,
    resolution: (u32, u32),
) -> Vec<Camera> {
    assert!(count >= 1);
    (0..count)
        .map(|k| {
            orbit_camera(
                Vec3::ZERO,
                360.0 * k as f64 / count as f64,
                elevation_deg,
                distance,
                DEFAULT_FOV_DEG,
                resolution.0,
                resolution.1,
            )
        })
        .collect()
}

/// The 20 vertices of the canonical dodecahedron (circumradius √3).
pub fn dodecahedron_vertices() -> Vec<Vec3> {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let inv = 1.0 / phi;
    let mut v = Vec::with_capacity(20);
    for &x in &[-1.0, 1.0] {
        for &y in &[-1.0, 1.0] {
            for &z in &[-1.0, 1.0] {
                v.push(Vec3::new(x, y, z));
            }
        }
    }
    for &a in &[-1.0f64, 1.0] {
        for &b in &[-1.0f64, 1.0] {
            v.push(Vec3::new(0.0, a * inv, b * phi));
            v.push(Vec3::new(a * inv, b * phi, 0.0));
            v.push(Vec3::new(a * phi, 0.0, b * inv));
        }
    }
    v
}

/// Cameras on the vertices of `num_dodecahedra` independently random-rotated
/// dodecahedra, each scaled to `distance` from the origin and aimed at it.
/// Deterministic for a given seed.
pub fn dodecahedron_cameras(
    num_dodecahedra: usize,
    seed: u64,
    distance: f64,
    resolution: (u32, u32),
) -> Vec<Camera> {
    assert!(num_dodecahedra >= 1);
    let verts = dodecahedron_vertices();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cameras = Vec::with_capacity(num_dodecahedra * 20);
    for _ in 0..num_dodecahedra {
        let rot = random_rotation(&mut rng);
        for &v in &verts {
            let dir = rot.apply(v).normalized().unwrap();
            let position = dir * distance;
            let up = if dir.y.abs() > 1.0 - 1e-9 {
                Vec3::new(1.0, 0.0, 0.0)
            } else {
                Vec3::new(0.0, 1.0, 0.0)
            };
            cameras.push(Camera {
                position,
                look_at: Vec3::ZERO,
                up,
                vertical_fov_deg: DEFAULT_FOV_DEG,
                width: resolution.0,
                height: resolution.1,
            });
        }
    }
    cameras
}
