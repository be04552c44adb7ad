//! Light field descriptors over binary silhouettes.
//!
//! A shape is described by rendering its mask from every camera of a shared
//! rig (10 randomly rotated dodecahedra, 200 views) and extracting per view:
//!
//! - 35 Zernike moment magnitudes of the filled region, orders `n ≤ 10`,
//!   `m ≥ 0`, `n − m` even, with the constant `(0,0)` term omitted. The mask
//!   is centroid-centered and scaled so the farthest foreground pixel lands
//!   on the unit circle, making the magnitudes translation, scale, and
//!   rotation invariant.
//! - 10 Fourier descriptors of the outer contour of the largest foreground
//!   component: the contour is resampled to 128 equidistant complex points,
//!   and `|F_2..F_11| / |F_1|` normalizes out position and scale.
//!
//! Shape-to-shape distance is the mean L1 distance between concatenated
//! per-view feature vectors, view against view on the shared rig — no
//! rotation alignment search. The single-view variant compares the 45-dim
//! descriptors of two masks from one viewpoint.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::img::Mask;
use crate::mesh::TriangleMesh;
use crate::render::{dodecahedron_cameras, rasterize_single, Camera, RenderError};

pub const ZERNIKE_TERMS: usize = 35;
pub const FOURIER_TERMS: usize = 10;
pub const VIEW_FEATURE_DIM: usize = ZERNIKE_TERMS + FOURIER_TERMS;
pub const CONTOUR_SAMPLES: usize = 128;
pub const DEFAULT_NUM_DODECAHEDRA: usize = 10;
pub const DEFAULT_RIG_DISTANCE: f64 = 1.5;
pub const DEFAULT_RESOLUTION: u32 = 256;

#[derive(Error, Debug)]
pub enum LfdError {
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("outer contour has {0} pixels; need at least 12")]
    ContourTooShort(usize),
    #[error("contour fundamental frequency vanishes; descriptor undefined")]
    DegenerateContour,
    #[error("descriptors use different rigs (seed {a_seed}/{a_views} views vs seed {b_seed}/{b_views} views)")]
    RigMismatch {
        a_seed: u64,
        a_views: usize,
        b_seed: u64,
        b_views: usize,
    },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed descriptor file {path}: {message}")]
    Format { path: PathBuf, message: String },
}

/// The `(n, m)` index pairs of the 35 Zernike terms, n ascending then m
/// ascending; `(0, 0)` is omitted as constant.
pub fn zernike_index_pairs() -> Vec<(u32, u32)> {
    let mut pairs = Vec::with_capacity(ZERNIKE_TERMS);
    for n in 1..=10u32 {
        for m in (n % 2..=n).step_by(2) {
            pairs.push((n, m));
        }
    }
    debug_assert_eq!(pairs.len(), ZERNIKE_TERMS);
    pairs
}

/// Radial polynomial coefficients: `R_nm(ρ) = Σ_s coeff[s] · ρ^power[s]`.
fn radial_coefficients(n: u32, m: u32) -> Vec<(f64, u32)> {
    let fact = |k: u32| -> f64 { (1..=k).map(|x| x as f64).product::<f64>().max(1.0) };
    let upper = (n - m) / 2;
    (0..=upper)
        .map(|s| {
            let sign = if s % 2 == 0 { 1.0 } else { -1.0 };
            let num = fact(n - s);
            let den = fact(s) * fact((n + m) / 2 - s) * fact((n - m) / 2 - s);
            (sign * num / den, n - 2 * s)
        })
        .collect()
}

/// Zernike moment magnitudes `|Z_nm|` of the mask region, in
/// [`zernike_index_pairs`] order. The pixel density is normalized so the
/// region has unit mass.
pub fn zernike_moments(mask: &Mask) -> Result<Vec<f64>, LfdError> {
    let pixels: Vec<(u32, u32)> = mask.foreground().collect();
    if pixels.is_empty() {
        return Err(LfdError::EmptyMask);
    }
    let count = pixels.len() as f64;
    let (mut cx, mut cy) = (0.0, 0.0);
    for &(x, y) in &pixels {
        cx += x as f64;
        cy += y as f64;
    }
    cx /= count;
    cy /= count;
    let mut rmax: f64 = 0.0;
    for &(x, y) in &pixels {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        rmax = rmax.max((dx * dx + dy * dy).sqrt());
    }
    if rmax == 0.0 {
        rmax = 1.0; // single-pixel mask sits at the disk center
    }

    let pairs = zernike_index_pairs();
    let coeffs: Vec<Vec<(f64, u32)>> = pairs
        .iter()
        .map(|&(n, m)| radial_coefficients(n, m))
        .collect();

    let weight = 1.0 / count;
    let mut acc = vec![(0.0f64, 0.0f64); pairs.len()];
    let mut powers = [0.0f64; 11];
    let mut cos_m = [0.0f64; 11];
    let mut sin_m = [0.0f64; 11];
    for &(x, y) in &pixels {
        let dx = (x as f64 - cx) / rmax;
        let dy = (y as f64 - cy) / rmax;
        let rho = (dx * dx + dy * dy).sqrt();
        let theta = dy.atan2(dx);
        powers[0] = 1.0;
        for k in 1..11 {
            powers[k] = powers[k - 1] * rho;
        }
        // Chebyshev recurrence for cos(mθ), sin(mθ)
        let (s1, c1) = theta.sin_cos();
        cos_m[0] = 1.0;
        sin_m[0] = 0.0;
        cos_m[1] = c1;
        sin_m[1] = s1;
        for mth in 2..11 {
            cos_m[mth] = 2.0 * c1 * cos_m[mth - 1] - cos_m[mth - 2];
            sin_m[mth] = 2.0 * c1 * sin_m[mth - 1] - sin_m[mth - 2];
        }
        for (t, &(_, m)) in pairs.iter().enumerate() {
            let mut radial = 0.0;
            for &(c, p) in &coeffs[t] {
                radial += c * powers[p as usize];
            }
            let wr = weight * radial;
            // e^{-imθ} = cos(mθ) - i·sin(mθ)
            acc[t].0 += wr * cos_m[m as usize];
            acc[t].1 -= wr * sin_m[m as usize];
        }
    }

    Ok(pairs
        .iter()
        .zip(&acc)
        .map(|(&(n, _), &(re, im))| {
            let norm = (n + 1) as f64 / std::f64::consts::PI;
            norm * (re * re + im * im).sqrt()
        })
        .collect())
}

/// Largest 8-connected foreground component, as a pixel set in row-major
/// first-encountered order.
fn largest_component(mask: &Mask) -> Option<Vec<(u32, u32)>> {
    let (w, h) = (mask.width(), mask.height());
    let idx = |x: u32, y: u32| (y * w + x) as usize;
    let mut seen = vec![false; (w * h) as usize];
    let mut best: Option<Vec<(u32, u32)>> = None;
    for y0 in 0..h {
        for x0 in 0..w {
            if !mask.get(x0, y0) || seen[idx(x0, y0)] {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = std::collections::VecDeque::new();
            seen[idx(x0, y0)] = true;
            queue.push_back((x0, y0));
            while let Some((x, y)) = queue.pop_front() {
                comp.push((x, y));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let nx = x as i64 + dx;
                        let ny = y as i64 + dy;
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as u32, ny as u32);
                        if mask.get(nx, ny) && !seen[idx(nx, ny)] {
                            seen[idx(nx, ny)] = true;
                            queue.push_back((nx, ny));
                        }
                    }
                }
            }
            let better = match &best {
                None => true,
                Some(b) => comp.len() > b.len(),
            };
            if better {
                best = Some(comp);
            }
        }
    }
    best
}

/// Moore-neighbor trace of the outer contour of the component containing
/// `start`, where `start` is the uppermost-leftmost component pixel.
fn trace_contour(component: &[(u32, u32)], width: u32, height: u32) -> Vec<(u32, u32)> {
    let inside: std::collections::HashSet<(u32, u32)> = component.iter().copied().collect();
    let start = *component
        .iter()
        .min_by_key(|&&(x, y)| (y, x))
        .expect("component non-empty");
    if component.len() == 1 {
        return vec![start];
    }
    // clockwise Moore neighborhood starting west
    const NEIGHBORS: [(i64, i64); 8] = [
        (-1, 0),
        (-1, -1),
        (0, -1),
        (1, -1),
        (1, 0),
        (1, 1),
        (0, 1),
        (-1, 1),
    ];
    let in_bounds = |x: i64, y: i64| x >= 0 && y >= 0 && x < width as i64 && y < height as i64;
    let mut contour = Vec::new();
    let mut current = start;
    // entered from the west (the scan guarantees west of start is outside)
    let mut backtrack_dir = 0usize;
    loop {
        contour.push(current);
        let mut found = None;
        for step in 1..=8 {
            let dir = (backtrack_dir + step) % 8;
            let (dx, dy) = NEIGHBORS[dir];
            let nx = current.0 as i64 + dx;
            let ny = current.1 as i64 + dy;
            if in_bounds(nx, ny) && inside.contains(&(nx as u32, ny as u32)) {
                found = Some((dir, (nx as u32, ny as u32)));
                break;
            }
        }
        let Some((dir, next)) = found else {
            break; // isolated pixel
        };
        // new backtrack points at the previous pixel
        backtrack_dir = (dir + 4) % 8;
        current = next;
        if current == start && contour.len() > 1 {
            break;
        }
        if contour.len() > 4 * component.len() + 8 {
            break; // safety bound; cannot trigger for valid components
        }
    }
    contour
}

/// Fourier descriptors of the outer contour of the largest foreground
/// component: `|F_2..F_11| / |F_1|` over 128 arc-length-equidistant samples.
pub fn fourier_contour(mask: &Mask) -> Result<Vec<f64>, LfdError> {
    let component = largest_component(mask).ok_or(LfdError::EmptyMask)?;
    let contour = trace_contour(&component, mask.width(), mask.height());
    if contour.len() < 12 {
        return Err(LfdError::ContourTooShort(contour.len()));
    }

    // closed polyline through pixel centers, resampled by arc length
    let pts: Vec<(f64, f64)> = contour
        .iter()
        .map(|&(x, y)| (x as f64, y as f64))
        .collect();
    let seg = |i: usize| -> (f64, f64) {
        let a = pts[i];
        let b = pts[(i + 1) % pts.len()];
        (b.0 - a.0, b.1 - a.1)
    };
    let mut cumulative = vec![0.0f64];
    for i in 0..pts.len() {
        let (dx, dy) = seg(i);
        cumulative.push(cumulative[i] + (dx * dx + dy * dy).sqrt());
    }
    let total = *cumulative.last().unwrap();
    if total == 0.0 {
        return Err(LfdError::DegenerateContour);
    }
    let mut samples = Vec::with_capacity(CONTOUR_SAMPLES);
    let mut seg_idx = 0usize;
    for k in 0..CONTOUR_SAMPLES {
        let target = total * k as f64 / CONTOUR_SAMPLES as f64;
        while cumulative[seg_idx + 1] < target && seg_idx + 1 < pts.len() {
            seg_idx += 1;
        }
        let seg_len = cumulative[seg_idx + 1] - cumulative[seg_idx];
        let t = if seg_len == 0.0 {
            0.0
        } else {
            (target - cumulative[seg_idx]) / seg_len
        };
        let (dx, dy) = seg(seg_idx);
        samples.push((pts[seg_idx].0 + dx * t, pts[seg_idx].1 + dy * t));
    }

    // direct DFT of the 12 lowest frequencies
    let n = CONTOUR_SAMPLES as f64;
    let magnitude = |j: usize| -> f64 {
        let (mut re, mut im) = (0.0f64, 0.0f64);
        for (k, &(x, y)) in samples.iter().enumerate() {
            let phase = -std::f64::consts::TAU * j as f64 * k as f64 / n;
            let (s, c) = phase.sin_cos();
            re += x * c - y * s;
            im += x * s + y * c;
        }
        (re * re + im * im).sqrt()
    };
    let f1 = magnitude(1);
    if f1 < 1e-9 {
        return Err(LfdError::DegenerateContour);
    }
    Ok((2..=11).map(|j| magnitude(j) / f1).collect())
}

/// Region + contour features of one silhouette.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewFeatures {
    pub zernike: Vec<f64>,
    pub fourier: Vec<f64>,
}

impl ViewFeatures {
    pub fn zeros() -> Self {
        ViewFeatures {
            zernike: vec![0.0; ZERNIKE_TERMS],
            fourier: vec![0.0; FOURIER_TERMS],
        }
    }

    pub fn concatenated(&self) -> Vec<f64> {
        let mut v = self.zernike.clone();
        v.extend_from_slice(&self.fourier);
        v
    }
}

/// The concatenated 45-dim descriptor of a single mask.
pub fn mask_descriptor(mask: &Mask) -> Result<ViewFeatures, LfdError> {
    Ok(ViewFeatures {
        zernike: zernike_moments(mask)?,
        fourier: fourier_contour(mask)?,
    })
}

/// L1 distance between the concatenated descriptors of two masks from one
/// viewpoint.
pub fn vlfd_distance(mask_a: &Mask, mask_b: &Mask) -> Result<f64, LfdError> {
    let a = mask_descriptor(mask_a)?;
    let b = mask_descriptor(mask_b)?;
    Ok(l1(&a.concatenated(), &b.concatenated()))
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// The shared camera rig descriptors are computed on. Descriptors remember
/// the rig seed and refuse to compare across rigs.
#[derive(Debug, Clone)]
pub struct LfdRig {
    pub seed: u64,
    pub cameras: Vec<Camera>,
    pub resolution: u32,
}

impl LfdRig {
    pub fn new(num_dodecahedra: usize, seed: u64, distance: f64, resolution: u32) -> Self {
        LfdRig {
            seed,
            cameras: dodecahedron_cameras(
                num_dodecahedra,
                seed,
                distance,
                (resolution, resolution),
            ),
            resolution,
        }
    }

    /// The default 200-view rig: 10 dodecahedra at distance 1.5, 256².
    pub fn with_seed(seed: u64) -> Self {
        LfdRig::new(
            DEFAULT_NUM_DODECAHEDRA,
            seed,
            DEFAULT_RIG_DISTANCE,
            DEFAULT_RESOLUTION,
        )
    }
}

/// Per-view Zernike + Fourier features for one shape on a shared rig.
#[derive(Debug, Clone, PartialEq)]
pub struct LightFieldDescriptor {
    pub rig_seed: u64,
    pub views: Vec<ViewFeatures>,
}

/// Renders the mesh from every rig camera and extracts per-view features.
/// The mesh must already be canonically normalized. Views with an empty
/// silhouette — or one too small to carry a 12-pixel contour — record
/// all-zero features.
pub fn compute_lfd(mesh: &TriangleMesh, rig: &LfdRig) -> Result<LightFieldDescriptor, LfdError> {
    let views: Result<Vec<ViewFeatures>, LfdError> = rig
        .cameras
        .par_iter()
        .map(|camera| {
            let out = rasterize_single(mesh, &crate::mesh::SimilarityTransform::IDENTITY, camera)?;
            view_features_lenient(&out.mask)
        })
        .collect();
    Ok(LightFieldDescriptor {
        rig_seed: rig.seed,
        views: views?,
    })
}

fn view_features_lenient(mask: &Mask) -> Result<ViewFeatures, LfdError> {
    if mask.is_blank() {
        return Ok(ViewFeatures::zeros());
    }
    match mask_descriptor(mask) {
        Ok(f) => Ok(f),
        Err(LfdError::ContourTooShort(_)) | Err(LfdError::DegenerateContour) => {
            Ok(ViewFeatures::zeros())
        }
        Err(e) => Err(e),
    }
}

/// Mean over views of the L1 distance between concatenated feature vectors,
/// aligned view to view. Errors unless both descriptors come from the same
/// rig.
pub fn lfd_distance(
    a: &LightFieldDescriptor,
    b: &LightFieldDescriptor,
) -> Result<f64, LfdError> {
    if a.rig_seed != b.rig_seed || a.views.len() != b.views.len() {
        return Err(LfdError::RigMismatch {
            a_seed: a.rig_seed,
            a_views: a.views.len(),
            b_seed: b.rig_seed,
            b_views: b.views.len(),
        });
    }
    let total: f64 = a
        .views
        .iter()
        .zip(&b.views)
        .map(|(va, vb)| l1(&va.concatenated(), &vb.concatenated()))
        .sum();
    Ok(total / a.views.len() as f64)
}

/// Binary descriptor layout: u64 rig seed, u32 view count, u32 feature
/// dimension (45), then view-major little-endian f32 features.
pub fn save_descriptor(d: &LightFieldDescriptor, path: &Path) -> Result<(), LfdError> {
    let io_err = |source| LfdError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(&d.rig_seed.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(d.views.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(VIEW_FEATURE_DIM as u32).to_le_bytes()).map_err(io_err)?;
    for view in &d.views {
        for v in view.concatenated() {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn load_descriptor(path: &Path) -> Result<LightFieldDescriptor, LfdError> {
    let io_err = |source| LfdError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut r = std::io::BufReader::new(file);
    let mut u64_buf = [0u8; 8];
    let mut u32_buf = [0u8; 4];
    r.read_exact(&mut u64_buf).map_err(io_err)?;
    let rig_seed = u64::from_le_bytes(u64_buf);
    r.read_exact(&mut u32_buf).map_err(io_err)?;
    let view_count = u32::from_le_bytes(u32_buf) as usize;
    r.read_exact(&mut u32_buf).map_err(io_err)?;
    let dim = u32::from_le_bytes(u32_buf) as usize;
    if dim != VIEW_FEATURE_DIM {
        return Err(LfdError::Format {
            path: path.to_path_buf(),
            message: format!("feature dimension {dim}, expected {VIEW_FEATURE_DIM}"),
        });
    }
    let mut views = Vec::with_capacity(view_count);
    let mut f32_buf = [0u8; 4];
    for _ in 0..view_count {
        let mut feat = Vec::with_capacity(dim);
        for _ in 0..dim {
            r.read_exact(&mut f32_buf).map_err(|_| LfdError::Format {
                path: path.to_path_buf(),
                message: "truncated feature data".into(),
            })?;
            feat.push(f32::from_le_bytes(f32_buf) as f64);
        }
        views.push(ViewFeatures {
            zernike: feat[..ZERNIKE_TERMS].to_vec(),
            fourier: feat[ZERNIKE_TERMS..].to_vec(),
        });
    }
    Ok(LightFieldDescriptor { rig_seed, views })
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct LfdStoreIndex {
    pub rig_seed: u64,
    pub num_dodecahedra: usize,
    pub distance: f64,
    pub resolution: u32,
    pub shapes: BTreeMap<String, String>,
}

/// Writes one `.lfd` file per shape plus `lfd_index.json` into `dir`.
pub fn save_store(
    dir: &Path,
    rig: &LfdRig,
    num_dodecahedra: usize,
    distance: f64,
    descriptors: &BTreeMap<String, LightFieldDescriptor>,
) -> Result<(), LfdError> {
    std::fs::create_dir_all(dir).map_err(|source| LfdError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut shapes = BTreeMap::new();
    for (id, d) in descriptors {
        let file = format!("{id}.lfd");
        save_descriptor(d, &dir.join(&file))?;
        shapes.insert(id.clone(), file);
    }
    let index = LfdStoreIndex {
        rig_seed: rig.seed,
        num_dodecahedra,
        distance,
        resolution: rig.resolution,
        shapes,
    };
    let path = dir.join("lfd_index.json");
    std::fs::write(&path, serde_json::to_string_pretty(&index).unwrap()).map_err(|source| {
        LfdError::Io { path, source }
    })
}

pub fn load_store(
    dir: &Path,
) -> Result<(LfdStoreIndex, BTreeMap<String, LightFieldDescriptor>), LfdError> {
    let index_path = dir.join("lfd_index.json");
    let text = std::fs::read_to_string(&index_path).map_err(|source| LfdError::Io {
        path: index_path.clone(),
        source,
    })?;
    let index: LfdStoreIndex = serde_json::from_str(&text).map_err(|e| LfdError::Format {
        path: index_path,
        message: e.to_string(),
    })?;
    let mut descriptors = BTreeMap::new();
    for (id, file) in &index.shapes {
        descriptors.insert(id.clone(), load_descriptor(&dir.join(file))?);
    }
    Ok((index, descriptors))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn disk_mask(size: u32, radius: f64) -> Mask {
        let mut m = Mask::new(size, size);
        let c = (size as f64 - 1.0) / 2.0;
        for y in 0..size {
            for x in 0..size {
                let dx = x as f64 - c;
                let dy = y as f64 - c;
                if (dx * dx + dy * dy).sqrt() <= radius {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    fn square_mask(size: u32, half: u32) -> Mask {
        let mut m = Mask::new(size, size);
        let c = size / 2;
        for y in c - half..c + half {
            for x in c - half..c + half {
                m.set(x, y, true);
            }
        }
        m
    }

    fn translated(mask: &Mask, dx: i64, dy: i64) -> Mask {
        let mut out = Mask::new(mask.width(), mask.height());
        for (x, y) in mask.foreground() {
            let nx = x as i64 + dx;
            let ny = y as i64 + dy;
            if nx >= 0 && ny >= 0 && nx < mask.width() as i64 && ny < mask.height() as i64 {
                out.set(nx as u32, ny as u32, true);
            }
        }
        out
    }

    #[test]
    fn empty_mask_errors() {
        let m = Mask::new(16, 16);
        assert!(matches!(zernike_moments(&m), Err(LfdError::EmptyMask)));
        assert!(matches!(fourier_contour(&m), Err(LfdError::EmptyMask)));
    }

    #[test]
    fn disk_zernike_nonzero_m_vanishes() {
        let m = disk_mask(512, 220.0);
        let z = zernike_moments(&m).unwrap();
        for ((_, mm), &v) in zernike_index_pairs().iter().zip(&z) {
            if *mm != 0 {
                assert!(v < 1e-3, "m={mm} magnitude {v}");
            }
        }
    }

    #[test]
    fn disk_zernike_m0_matches_radial_quadrature() {
        // For a uniform unit disk the density is 1/π, so
        // |Z_n0| = |(n+1)/π · 2π/π ∫₀¹ R_n0(ρ) ρ dρ| = |2(n+1)/π ∫ R_n0 ρ dρ|.
        let m = disk_mask(512, 220.0);
        let z = zernike_moments(&m).unwrap();
        for ((n, mm), &v) in zernike_index_pairs().iter().zip(&z) {
            if *mm != 0 {
                continue;
            }
            let coeffs = radial_coefficients(*n, 0);
            // Simpson quadrature of ∫₀¹ R_n0(ρ)·ρ dρ
            let steps = 4096;
            let f = |rho: f64| -> f64 {
                coeffs
                    .iter()
                    .map(|&(c, p)| c * rho.powi(p as i32))
                    .sum::<f64>()
                    * rho
            };
            let mut integral = 0.0;
            for k in 0..steps {
                let a = k as f64 / steps as f64;
                let b = (k + 1) as f64 / steps as f64;
                integral += (b - a) / 6.0 * (f(a) + 4.0 * f((a + b) / 2.0) + f(b));
            }
            let oracle = (2.0 * (*n as f64 + 1.0) / std::f64::consts::PI * integral).abs();
            assert!(
                (v - oracle).abs() < 2e-3,
                "n={n}: pixel {v} vs quadrature {oracle}"
            );
        }
    }

    #[test]
    fn zernike_translation_invariant() {
        let m = square_mask(256, 40);
        let t = translated(&m, 10, 0);
        let za = zernike_moments(&m).unwrap();
        let zb = zernike_moments(&t).unwrap();
        assert!(l1(&za, &zb) < 1e-3);
    }

    #[test]
    fn circle_fourier_descriptors_vanish() {
        let m = disk_mask(256, 100.0);
        let f = fourier_contour(&m).unwrap();
        for (j, &v) in f.iter().enumerate() {
            assert!(v < 1e-2, "descriptor {} magnitude {v}", j + 2);
        }
    }

    #[test]
    fn fourier_scale_invariant() {
        let a = disk_mask(512, 60.0);
        let b = disk_mask(512, 120.0);
        let fa = fourier_contour(&a).unwrap();
        let fb = fourier_contour(&b).unwrap();
        assert!(l1(&fa, &fb) < 2e-2, "difference {}", l1(&fa, &fb));
    }

    #[test]
    fn descriptor_scale_invariant() {
        let a = mask_descriptor(&disk_mask(512, 60.0)).unwrap();
        let b = mask_descriptor(&disk_mask(512, 120.0)).unwrap();
        assert!(l1(&a.concatenated(), &b.concatenated()) < 2e-2);
    }

    #[test]
    fn square_vs_circle_separates_better_than_ellipse() {
        let circle = mask_descriptor(&disk_mask(256, 80.0)).unwrap();
        let square = mask_descriptor(&square_mask(256, 72)).unwrap();
        // slightly elliptical disk
        let mut ellipse = Mask::new(256, 256);
        for y in 0..256u32 {
            for x in 0..256u32 {
                let dx = (x as f64 - 127.5) / 84.0;
                let dy = (y as f64 - 127.5) / 76.0;
                if dx * dx + dy * dy <= 1.0 {
                    ellipse.set(x, y, true);
                }
            }
        }
        let ellipse = mask_descriptor(&ellipse).unwrap();
        let d_square = l1(&circle.concatenated(), &square.concatenated());
        let d_ellipse = l1(&circle.concatenated(), &ellipse.concatenated());
        assert!(
            d_square > d_ellipse,
            "square {d_square} should exceed ellipse {d_ellipse}"
        );
    }

    #[test]
    fn contour_too_short_errors() {
        let mut m = Mask::new(16, 16);
        m.set(4, 4, true);
        m.set(5, 4, true);
        assert!(matches!(
            fourier_contour(&m),
            Err(LfdError::ContourTooShort(_))
        ));
    }

    #[test]
    fn vlfd_identical_masks_zero() {
        let m = disk_mask(128, 40.0);
        assert_eq!(vlfd_distance(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn vlfd_equals_component_sum() {
        let a = disk_mask(256, 80.0);
        let b = square_mask(256, 70);
        let da = mask_descriptor(&a).unwrap();
        let db = mask_descriptor(&b).unwrap();
        let by_parts = l1(&da.zernike, &db.zernike) + l1(&da.fourier, &db.fourier);
        let direct = vlfd_distance(&a, &b).unwrap();
        assert!((by_parts - direct).abs() < 1e-12);
    }

    fn random_blob_mask(seed: u64) -> Mask {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = Mask::new(96, 96);
        // union of a few random disks, guaranteed non-degenerate
        for _ in 0..4 {
            let cx = rng.gen_range(30.0..66.0);
            let cy = rng.gen_range(30.0..66.0);
            let r = rng.gen_range(8.0..22.0);
            for y in 0..96u32 {
                for x in 0..96u32 {
                    let dx = x as f64 - cx;
                    let dy = y as f64 - cy;
                    if (dx * dx + dy * dy).sqrt() <= r {
                        m.set(x, y, true);
                    }
                }
            }
        }
        m
    }

    #[test]
    fn vlfd_triangle_inequality_spot_check() {
        let masks: Vec<Mask> = (0..15).map(random_blob_mask).collect();
        let mut checked = 0;
        for i in 0..masks.len() {
            for j in i + 1..masks.len() {
                for k in j + 1..masks.len() {
                    let ab = vlfd_distance(&masks[i], &masks[j]).unwrap();
                    let bc = vlfd_distance(&masks[j], &masks[k]).unwrap();
                    let ac = vlfd_distance(&masks[i], &masks[k]).unwrap();
                    assert!(ac <= ab + bc + 1e-12);
                    checked += 1;
                    if checked >= 100 {
                        return;
                    }
                }
            }
        }
    }

    #[test]
    fn compute_lfd_is_deterministic_and_complete() {
        let mesh = crate::primitives::cube(1.0);
        let (mesh, _) = crate::mesh::normalize_canonical(&mesh).unwrap();
        let rig = LfdRig::new(2, 33, 1.5, 64);
        let a = compute_lfd(&mesh, &rig).unwrap();
        let b = compute_lfd(&mesh, &rig).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.views.len(), 40);
        assert_eq!(lfd_distance(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn lfd_normalization_first_makes_variants_identical() {
        let mesh = crate::primitives::cylinder(0.4, 1.2, 24);
        let variant = mesh.apply_transform(
            &crate::mesh::SimilarityTransform::new(
                3.0,
                crate::geom::Mat3::IDENTITY,
                crate::geom::Vec3::new(5.0, -2.0, 1.0),
            )
            .unwrap(),
        );
        let rig = LfdRig::new(1, 9, 1.5, 64);
        let (na, _) = crate::mesh::normalize_canonical(&mesh).unwrap();
        let (nb, _) = crate::mesh::normalize_canonical(&variant).unwrap();
        let da = compute_lfd(&na, &rig).unwrap();
        let db = compute_lfd(&nb, &rig).unwrap();
        let dist = lfd_distance(&da, &db).unwrap();
        assert!(dist < 1e-9, "distance {dist}");
    }

    #[test]
    fn lfd_distance_hand_oracle() {
        let mk = |vals: [(f64, f64); 2]| LightFieldDescriptor {
            rig_seed: 1,
            views: vals
                .iter()
                .map(|&(z, f)| ViewFeatures {
                    zernike: vec![z; ZERNIKE_TERMS],
                    fourier: vec![f; FOURIER_TERMS],
                })
                .collect(),
        };
        let a = mk([(1.0, 2.0), (0.0, 0.0)]);
        let b = mk([(0.0, 0.0), (1.0, 1.0)]);
        // view 0: 35·1 + 10·2 = 55; view 1: 35·1 + 10·1 = 45; mean 50
        let d = lfd_distance(&a, &b).unwrap();
        assert!((d - 50.0).abs() < 1e-12);
        let e = lfd_distance(&b, &a).unwrap();
        assert_eq!(d, e);
    }

    #[test]
    fn rig_mismatch_refused() {
        let a = LightFieldDescriptor {
            rig_seed: 1,
            views: vec![ViewFeatures::zeros()],
        };
        let b = LightFieldDescriptor {
            rig_seed: 2,
            views: vec![ViewFeatures::zeros()],
        };
        assert!(matches!(
            lfd_distance(&a, &b),
            Err(LfdError::RigMismatch { .. })
        ));
    }

    #[test]
    fn descriptor_file_round_trip() {
        let mesh = crate::primitives::cube(1.0);
        let (mesh, _) = crate::mesh::normalize_canonical(&mesh).unwrap();
        let rig = LfdRig::new(1, 4, 1.5, 64);
        let d = compute_lfd(&mesh, &rig).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.lfd");
        save_descriptor(&d, &path).unwrap();
        let loaded = load_descriptor(&path).unwrap();
        assert_eq!(loaded.rig_seed, 4);
        assert_eq!(loaded.views.len(), 20);
        // f32 storage round-trip tolerance
        let dist = lfd_distance(&d, &loaded).unwrap();
        assert!(dist < 1e-5, "distance {dist}");
    }
}
