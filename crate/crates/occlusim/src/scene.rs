//! Multi-object occlusion scene generation: layout sampling, scene cameras,
//! rendering orchestration, occlusion bookkeeping, and dataset splits.
//!
//! A scene takes one shape per category and places them iteratively: each
//! shape gets a uniform random yaw, starts from the mean position of the
//! already-placed shapes (the origin for the first), and walks outward
//! along a random horizontal direction in 0.05 m steps from a base distance
//! equal to the sum of the placed shapes' short sides, until its top-down
//! bounding rectangle clears every placed rectangle. Objects rest on the
//! floor plane `y = 0`. Scenes are rendered from an azimuth ring of 12
//! cameras with per-view random elevation; every instance gets an exact
//! occlusion rate by comparing its visible pixels against its intact mask
//! rendered alone on a 3×-expanded canvas.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{splitmix64, Vec3};
use crate::img::{GrayImage, ImageError, Mask};
use crate::mesh::{MeshError, ShapeDb, ShapeRecord, SimilarityTransform, TriangleMesh};
use crate::render::{
    orbit_camera, rasterize, rasterize_single, shade_grayscale, Camera, RenderError,
    RenderInstance, RenderOutputs, DEFAULT_FOV_DEG,
};
use crate::view_metrics::{occlusion_rate, ViewMetricsError};

pub const PLACEMENT_STEP: f64 = 0.05;
pub const MAX_PLACEMENT_STEPS: usize = 10_000;
pub const DEFAULT_CATEGORIES: [&str; 4] = ["chair", "bed", "table", "sofa"];

#[derive(Error, Debug)]
pub enum SceneError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    ViewMetrics(#[from] ViewMetricsError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("layout requires shapes with pairwise distinct categories; {0:?} repeats")]
    DuplicateCategory(String),
    #[error("shape database has no shapes of category {0:?}")]
    MissingCategory(String),
    #[error("no collision-free position for {shape_id:?} within {attempts} distance increments")]
    PlacementFailed { shape_id: String, attempts: usize },
    #[error("layout has no placed shapes")]
    EmptyLayout,
    #[error("holdout of {requested} shapes would leave no seen shapes (have {available})")]
    HoldoutImpossible { requested: usize, available: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what} at {path}: {message}")]
    Json {
        what: &'static str,
        path: PathBuf,
        message: String,
    },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> SceneError + '_ {
    move |source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One placed shape instance: yaw about +Y, then translation. The
/// translation's y component puts the shape's lowest vertex on the floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub shape_id: String,
    pub yaw: f64,
    pub position: Vec3,
}

impl Placement {
    pub fn transform(&self) -> SimilarityTransform {
        SimilarityTransform::pose(self.yaw, self.position)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    pub scene_id: String,
    pub placed: Vec<Placement>,
}

/// Axis-aligned rectangle in the XZ (top-down) plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopDownRect {
    pub min_x: f64,
    pub min_z: f64,
    pub max_x: f64,
    pub max_z: f64,
}

impl TopDownRect {
    /// Strict interior overlap; touching edges do not intersect.
    pub fn intersects(&self, other: &TopDownRect) -> bool {
        self.min_x < other.max_x
            && other.min_x < self.max_x
            && self.min_z < other.max_z
            && other.min_z < self.max_z
    }

    fn translated(&self, dx: f64, dz: f64) -> TopDownRect {
        TopDownRect {
            min_x: self.min_x + dx,
            min_z: self.min_z + dz,
            max_x: self.max_x + dx,
            max_z: self.max_z + dz,
        }
    }
}

/// Top-down rectangle of a placed shape.
pub fn placement_rect(mesh: &TriangleMesh, placement: &Placement) -> TopDownRect {
    let transformed = mesh.apply_transform(&placement.transform());
    let (lo, hi) = transformed.bbox();
    TopDownRect {
        min_x: lo.x,
        min_z: lo.z,
        max_x: hi.x,
        max_z: hi.z,
    }
}

struct YawedShape {
    rect_at_origin: TopDownRect,
    min_y: f64,
}

fn yawed_extents(mesh: &TriangleMesh, yaw: f64) -> YawedShape {
    let rot = crate::geom::Mat3::yaw(yaw);
    let mut lo = rot.apply(mesh.vertices()[0]);
    let mut hi = lo;
    for &v in &mesh.vertices()[1..] {
        let r = rot.apply(v);
        lo = lo.min_componentwise(r);
        hi = hi.max_componentwise(r);
    }
    YawedShape {
        rect_at_origin: TopDownRect {
            min_x: lo.x,
            min_z: lo.z,
            max_x: hi.x,
            max_z: hi.z,
        },
        min_y: lo.y,
    }
}

/// Iterative collision-free placement of one shape per category.
pub fn generate_layout(
    scene_id: String,
    shapes: &[&ShapeRecord],
    seed: u64,
) -> Result<SceneLayout, SceneError> {
    if shapes.is_empty() {
        return Err(SceneError::EmptyLayout);
    }
    let mut seen_categories = BTreeSet::new();
    for s in shapes {
        if !seen_categories.insert(s.category.clone()) {
            return Err(SceneError::DuplicateCategory(s.category.clone()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placed: Vec<Placement> = Vec::with_capacity(shapes.len());
    let mut placed_rects: Vec<TopDownRect> = Vec::with_capacity(shapes.len());
    let mut short_side_sum = 0.0;

    for shape in shapes {
        let yaw = rng.gen::<f64>() * std::f64::consts::TAU;
        let geometry = yawed_extents(&shape.mesh, yaw);

        let start = if placed.is_empty() {
            (0.0, 0.0)
        } else {
            let mut sx = 0.0;
            let mut sz = 0.0;
            for p in &placed {
                sx += p.position.x;
                sz += p.position.z;
            }
            (sx / placed.len() as f64, sz / placed.len() as f64)
        };
        let angle = rng.gen::<f64>() * std::f64::consts::TAU;
        let dir = (angle.cos(), angle.sin());
        let base = short_side_sum;

        let mut accepted = None;
        for step in 0..=MAX_PLACEMENT_STEPS {
            let d = base + PLACEMENT_STEP * step as f64;
            let x = start.0 + dir.0 * d;
            let z = start.1 + dir.1 * d;
            let rect = geometry.rect_at_origin.translated(x, z);
            if placed_rects.iter().all(|r| !r.intersects(&rect)) {
                accepted = Some((x, z, rect));
                break;
            }
        }
        let Some((x, z, rect)) = accepted else {
            return Err(SceneError::PlacementFailed {
                shape_id: shape.shape_id.clone(),
                attempts: MAX_PLACEMENT_STEPS,
            });
        };

        placed.push(Placement {
            shape_id: shape.shape_id.clone(),
            yaw,
            position: Vec3::new(x, -geometry.min_y, z),
        });
        placed_rects.push(rect);
        short_side_sum += shape.short_side;
    }

    Ok(SceneLayout { scene_id, placed })
}

/// Scene camera parameters; all have documented defaults.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneCameraConfig {
    pub count: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub radius_factor: f64,
    pub fov_deg: f64,
    pub resolution: u32,
}

impl Default for SceneCameraConfig {
    fn default() -> Self {
        SceneCameraConfig {
            count: 12,
            elevation_min_deg: 5.0,
            elevation_max_deg: 25.0,
            radius_factor: 0.8,
            fov_deg: DEFAULT_FOV_DEG,
            resolution: 1024,
        }
    }
}

/// Scene bounding box over all placed, transformed shapes.
pub fn scene_bbox(layout: &SceneLayout, db: &ShapeDb) -> Result<(Vec3, Vec3), SceneError> {
    let mut acc: Option<(Vec3, Vec3)> = None;
    for p in &layout.placed {
        let mesh = db.get(&p.shape_id)?.mesh.apply_transform(&p.transform());
        let (lo, hi) = mesh.bbox();
        acc = Some(match acc {
            None => (lo, hi),
            Some((alo, ahi)) => (alo.min_componentwise(lo), ahi.max_componentwise(hi)),
        });
    }
    acc.ok_or(SceneError::EmptyLayout)
}

/// Cameras at azimuths 0°, 30°, …, each with elevation drawn uniformly from
/// the configured range, aimed at the scene bbox centroid from a radius of
/// `radius_factor ×` the bbox diagonal.
pub fn sample_scene_cameras(
    layout: &SceneLayout,
    db: &ShapeDb,
    seed: u64,
    config: &SceneCameraConfig,
) -> Result<Vec<Camera>, SceneError> {
    let (lo, hi) = scene_bbox(layout, db)?;
    let centroid = (lo + hi) * 0.5;
    let radius = config.radius_factor * (hi - lo).norm();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cameras = Vec::with_capacity(config.count);
    for k in 0..config.count {
        let azimuth = 360.0 * k as f64 / config.count as f64;
        let elevation = rng.gen_range(config.elevation_min_deg..=config.elevation_max_deg);
        cameras.push(orbit_camera(
            centroid,
            azimuth,
            elevation,
            radius,
            config.fov_deg,
            config.resolution,
            config.resolution,
        ));
    }
    Ok(cameras)
}

/// Visibility outcome of one instance in one view.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceViewStatus {
    pub view_id: usize,
    pub instance_id: u16,
    pub shape_id: String,
    pub category: String,
    /// `None` when the instance is invisible in this view (empty intact
    /// mask or fully covered).
    pub occlusion_rate: Option<f64>,
}

/// All render products of one view.
pub struct ViewRender {
    pub camera: Camera,
    pub outputs: RenderOutputs,
    /// Per placed instance, rendered alone on the original canvas.
    pub object_masks: Vec<Mask>,
    pub object_grays: Vec<GrayImage>,
}

pub struct SceneRender {
    pub views: Vec<ViewRender>,
    pub statuses: Vec<InstanceViewStatus>,
}

/// Canvas expansion factor for intact-mask rendering.
pub const INTACT_EXPANSION: u32 = 3;

/// Renders every view of a layout: scene-level mask/depth/normal/instance
/// maps plus per-object grayscale and complete-mask images, and computes
/// per-instance occlusion rates against intact masks on the expanded canvas.
pub fn render_scene(
    layout: &SceneLayout,
    cameras: &[Camera],
    db: &ShapeDb,
) -> Result<SceneRender, SceneError> {
    let meshes: Vec<&TriangleMesh> = layout
        .placed
        .iter()
        .map(|p| db.get(&p.shape_id).map(|r| &r.mesh))
        .collect::<Result<_, _>>()?;
    let records: Vec<&ShapeRecord> = layout
        .placed
        .iter()
        .map(|p| db.get(&p.shape_id))
        .collect::<Result<_, _>>()?;

    let per_view: Result<Vec<(ViewRender, Vec<InstanceViewStatus>)>, SceneError> = cameras
        .par_iter()
        .enumerate()
        .map(|(view_id, camera)| {
            let instances: Vec<RenderInstance> = layout
                .placed
                .iter()
                .enumerate()
                .map(|(k, p)| RenderInstance {
                    mesh: meshes[k],
                    transform: p.transform(),
                    instance_id: (k + 1) as u16,
                })
                .collect();
            let outputs = rasterize(&instances, camera)?;

            let expanded = camera.expanded(INTACT_EXPANSION);
            let mut object_masks = Vec::with_capacity(layout.placed.len());
            let mut object_grays = Vec::with_capacity(layout.placed.len());
            let mut statuses = Vec::with_capacity(layout.placed.len());
            for (k, p) in layout.placed.iter().enumerate() {
                let instance_id = (k + 1) as u16;
                let alone = rasterize_single(meshes[k], &p.transform(), camera)?;
                object_grays.push(shade_grayscale(&alone, camera));
                object_masks.push(alone.mask);

                let intact = rasterize_single(meshes[k], &p.transform(), &expanded)?;
                let visible = outputs.instance.mask_of(instance_id);
                let rate = match occlusion_rate(&visible, &intact.mask) {
                    Ok(rate) if rate < 1.0 => Some(rate),
                    Ok(_) => None, // fully covered
                    Err(ViewMetricsError::EmptyIntactMask) => None,
                    Err(e) => return Err(e.into()),
                };
                statuses.push(InstanceViewStatus {
                    view_id,
                    instance_id,
                    shape_id: p.shape_id.clone(),
                    category: records[k].category.clone(),
                    occlusion_rate: rate,
                });
            }
            Ok((
                ViewRender {
                    camera: *camera,
                    outputs,
                    object_masks,
                    object_grays,
                },
                statuses,
            ))
        })
        .collect();

    let mut views = Vec::with_capacity(cameras.len());
    let mut statuses = Vec::new();
    for (view, mut view_statuses) in per_view? {
        views.push(view);
        statuses.append(&mut view_statuses);
    }
    Ok(SceneRender { views, statuses })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// One rendered, visible object instance — the unit of retrieval
/// evaluation. `image`/`mask` are paths relative to the dataset root; the
/// mask is the complete (unoccluded) object mask for this view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub scene_id: String,
    pub view_id: usize,
    pub instance_id: u16,
    pub category: String,
    pub gt_shape_id: String,
    pub occlusion_rate: f64,
    pub image: String,
    pub mask: String,
    pub split: Split,
    pub unseen: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetConfig {
    pub num_scenes: usize,
    pub categories: Vec<String>,
    pub camera: SceneCameraConfig,
    /// Fraction of unique used shapes held out as unseen.
    pub holdout_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            num_scenes: 1,
            categories: DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect(),
            camera: SceneCameraConfig::default(),
            holdout_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub master_seed: u64,
    pub config: DatasetConfig,
    pub scene_splits: BTreeMap<String, Split>,
    pub unseen_shapes: Vec<String>,
    pub query_counts: BTreeMap<String, usize>,
    pub occluded_queries: usize,
    pub unoccluded_queries: usize,
    pub invisible_instances: usize,
}

/// Layout plus the cameras it was rendered with; one per scene directory.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneFile {
    pub layout: SceneLayout,
    pub cameras: Vec<Camera>,
}

pub fn scene_seed(master_seed: u64, scene_index: usize) -> u64 {
    splitmix64(master_seed.wrapping_add(splitmix64(scene_index as u64 + 1)))
}

fn pick_scene_shapes<'a>(
    db: &'a ShapeDb,
    categories: &[String],
    seed: u64,
) -> Result<Vec<&'a ShapeRecord>, SceneError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shapes = Vec::with_capacity(categories.len());
    for cat in categories {
        let candidates = db.by_category(cat);
        if candidates.is_empty() {
            return Err(SceneError::MissingCategory(cat.clone()));
        }
        shapes.push(candidates[rng.gen_range(0..candidates.len())]);
    }
    Ok(shapes)
}

/// The layout-generation prefix of [`build_dataset`]: per-scene derived
/// seeds pick shapes and place them, in parallel, with no rendering.
pub fn build_layouts(
    db: &ShapeDb,
    num_scenes: usize,
    master_seed: u64,
    categories: &[String],
) -> Result<Vec<SceneLayout>, SceneError> {
    (0..num_scenes)
        .into_par_iter()
        .map(|i| {
            let seed = scene_seed(master_seed, i);
            let shapes = pick_scene_shapes(db, categories, splitmix64(seed ^ 1))?;
            generate_layout(format!("scene_{i:05}"), &shapes, splitmix64(seed ^ 2))
        })
        .collect()
}

/// Scene split assignment: scenes are shuffled with the master seed and cut
/// 8:1:1 (train/val/test).
pub fn assign_splits(num_scenes: usize, master_seed: u64) -> Vec<Split> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..num_scenes).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(master_seed ^ 0x5911_7000));
    order.shuffle(&mut rng);
    let train_end = num_scenes * 8 / 10;
    let val_end = num_scenes * 9 / 10;
    let mut splits = vec![Split::Train; num_scenes];
    for (rank, &scene) in order.iter().enumerate() {
        splits[scene] = if rank < train_end {
            Split::Train
        } else if rank < val_end {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

/// Builds and writes a full dataset: layouts, renders, occlusion rates,
/// splits, the unseen-shape holdout, query records, and the manifest.
///
/// Output tree:
/// ```text
/// out/
///   manifest.json
///   queries.jsonl
///   scenes/<scene_id>/scene.json
///   scenes/<scene_id>/views/<view>/{mask,depth,normal,instance}.png
///   scenes/<scene_id>/views/<view>/obj_<instance>_{gray,mask}.png
/// ```
pub fn build_dataset(
    db: &ShapeDb,
    master_seed: u64,
    config: &DatasetConfig,
    out_dir: &Path,
) -> Result<DatasetManifest, SceneError> {
    let layouts = build_layouts(db, config.num_scenes, master_seed, &config.categories)?;
    let splits = assign_splits(config.num_scenes, master_seed);

    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    // render, write images, and gather per-scene statuses in scene order
    let scene_results: Result<Vec<(Vec<InstanceViewStatus>, Vec<Camera>)>, SceneError> = layouts
        .par_iter()
        .enumerate()
        .map(|(i, layout)| {
            let seed = scene_seed(master_seed, i);
            let cameras =
                sample_scene_cameras(layout, db, splitmix64(seed ^ 3), &config.camera)?;
            let render = render_scene(layout, &cameras, db)?;
            let scene_dir = out_dir.join("scenes").join(&layout.scene_id);
            write_scene_products(&scene_dir, layout, &cameras, &render)?;
            Ok((render.statuses, cameras))
        })
        .collect();
    let scene_results = scene_results?;

    // unseen holdout over the unique shapes actually used
    let mut used_shapes: BTreeSet<String> = BTreeSet::new();
    for layout in &layouts {
        for p in &layout.placed {
            used_shapes.insert(p.shape_id.clone());
        }
    }
    let unseen = pick_holdout(&used_shapes, config.holdout_fraction, master_seed)?;

    // assemble query records
    let mut queries: Vec<QueryRecord> = Vec::new();
    let mut invisible = 0usize;
    let mut occluded = 0usize;
    let mut unoccluded = 0usize;
    for (i, layout) in layouts.iter().enumerate() {
        let split = splits[i];
        for status in &scene_results[i].0 {
            let Some(rate) = status.occlusion_rate else {
                invisible += 1;
                continue;
            };
            let is_unseen = unseen.contains(&status.shape_id);
            if split == Split::Train && is_unseen {
                continue; // held-out shapes never appear in train queries
            }
            if rate > 0.0 {
                occluded += 1;
            } else {
                unoccluded += 1;
            }
            let view_dir = format!("scenes/{}/views/{:02}", layout.scene_id, status.view_id);
            queries.push(QueryRecord {
                query_id: format!(
                    "{}:v{:02}:i{}",
                    layout.scene_id, status.view_id, status.instance_id
                ),
                scene_id: layout.scene_id.clone(),
                view_id: status.view_id,
                instance_id: status.instance_id,
                category: status.category.clone(),
                gt_shape_id: status.shape_id.clone(),
                occlusion_rate: rate,
                image: format!("{view_dir}/obj_{}_gray.png", status.instance_id),
                mask: format!("{view_dir}/obj_{}_mask.png", status.instance_id),
                split,
                unseen: is_unseen,
            });
        }
    }

    let mut query_counts = BTreeMap::new();
    for q in &queries {
        *query_counts.entry(q.split.to_string()).or_insert(0) += 1;
    }

    let manifest = DatasetManifest {
        master_seed,
        config: config.clone(),
        scene_splits: layouts
            .iter()
            .zip(&splits)
            .map(|(l, s)| (l.scene_id.clone(), *s))
            .collect(),
        unseen_shapes: unseen.into_iter().collect(),
        query_counts,
        occluded_queries: occluded,
        unoccluded_queries: unoccluded,
        invisible_instances: invisible,
    };

    write_queries(&out_dir.join("queries.jsonl"), &queries)?;
    let manifest_path = out_dir.join("manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).unwrap(),
    )
    .map_err(io_err(&manifest_path))?;
    Ok(manifest)
}

fn pick_holdout(
    used: &BTreeSet<String>,
    fraction: f64,
    master_seed: u64,
) -> Result<BTreeSet<String>, SceneError> {
    use rand::seq::SliceRandom;
    let count = (used.len() as f64 * fraction).round() as usize;
    if count == 0 {
        return Ok(BTreeSet::new());
    }
    if count >= used.len() {
        return Err(SceneError::HoldoutImpossible {
            requested: count,
            available: used.len(),
        });
    }
    let mut ids: Vec<&String> = used.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(master_seed ^ 0x0110_1d01));
    ids.shuffle(&mut rng);
    Ok(ids.into_iter().take(count).cloned().collect())
}

fn write_scene_products(
    scene_dir: &Path,
    layout: &SceneLayout,
    cameras: &[Camera],
    render: &SceneRender,
) -> Result<(), SceneError> {
    std::fs::create_dir_all(scene_dir).map_err(io_err(scene_dir))?;
    let scene_file = SceneFile {
        layout: layout.clone(),
        cameras: cameras.to_vec(),
    };
    let path = scene_dir.join("scene.json");
    std::fs::write(&path, serde_json::to_string_pretty(&scene_file).unwrap())
        .map_err(io_err(&path))?;
    for (view_id, view) in render.views.iter().enumerate() {
        let dir = scene_dir.join("views").join(format!("{view_id:02}"));
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        view.outputs.mask.save_png(&dir.join("mask.png"))?;
        view.outputs.depth.save_png(&dir.join("depth.png"))?;
        view.outputs.normal.save_png(&dir.join("normal.png"))?;
        view.outputs.instance.save_png(&dir.join("instance.png"))?;
        for (k, (mask, gray)) in view.object_masks.iter().zip(&view.object_grays).enumerate() {
            let id = k + 1;
            gray.save_png(&dir.join(format!("obj_{id}_gray.png")))?;
            mask.save_png(&dir.join(format!("obj_{id}_mask.png")))?;
        }
    }
    Ok(())
}

pub fn write_queries(path: &Path, queries: &[QueryRecord]) -> Result<(), SceneError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    for q in queries {
        let line = serde_json::to_string(q).unwrap();
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_queries(path: &Path) -> Result<Vec<QueryRecord>, SceneError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line).map_err(|e| SceneError::Json {
                what: "query record",
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })?,
        );
    }
    Ok(out)
}

/// An on-disk dataset opened for evaluation.
#[derive(Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub queries: Vec<QueryRecord>,
    pub scenes: BTreeMap<String, SceneFile>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self, SceneError> {
        let manifest_path = root.join("manifest.json");
        let text = std::fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| SceneError::Json {
                what: "manifest",
                path: manifest_path,
                message: e.to_string(),
            })?;
        let queries = read_queries(&root.join("queries.jsonl"))?;
        let mut scenes = BTreeMap::new();
        for scene_id in manifest.scene_splits.keys() {
            let path = root.join("scenes").join(scene_id).join("scene.json");
            let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
            let scene: SceneFile = serde_json::from_str(&text).map_err(|e| SceneError::Json {
                what: "scene file",
                path: path.clone(),
                message: e.to_string(),
            })?;
            scenes.insert(scene_id.clone(), scene);
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            manifest,
            queries,
            scenes,
        })
    }

    pub fn scene(&self, scene_id: &str) -> Option<&SceneFile> {
        self.scenes.get(scene_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives;

    pub(crate) fn toy_db() -> ShapeDb {
        let mk = |id: &str, cat: &str, mesh: TriangleMesh| {
            ShapeRecord::new(id.to_string(), cat.to_string(), mesh).unwrap()
        };
        ShapeDb::from_records(vec![
            mk("chair_a", "chair", primitives::box_mesh(Vec3::new(0.5, 0.9, 0.5))),
            mk("chair_b", "chair", primitives::cylinder(0.25, 0.9, 12)),
            mk("bed_a", "bed", primitives::box_mesh(Vec3::new(1.6, 0.5, 2.0))),
            mk("bed_b", "bed", primitives::box_mesh(Vec3::new(1.4, 0.6, 1.9))),
            mk("table_a", "table", primitives::box_mesh(Vec3::new(1.2, 0.75, 0.8))),
            mk("table_b", "table", primitives::cylinder(0.5, 0.75, 16)),
            mk("sofa_a", "sofa", primitives::box_mesh(Vec3::new(1.8, 0.8, 0.9))),
            mk("sofa_b", "sofa", primitives::box_mesh(Vec3::new(2.0, 0.7, 0.85))),
        ])
    }

    fn shapes_of<'a>(db: &'a ShapeDb, ids: &[&str]) -> Vec<&'a ShapeRecord> {
        ids.iter().map(|id| db.get(id).unwrap()).collect()
    }

    #[test]
    fn first_shape_lands_at_origin() {
        let db = toy_db();
        let shapes = shapes_of(&db, &["chair_a", "bed_a", "table_a", "sofa_a"]);
        let layout = generate_layout("s".into(), &shapes, 7).unwrap();
        assert!(layout.placed[0].position.x.abs() < 1e-12);
        assert!(layout.placed[0].position.z.abs() < 1e-12);
    }

    #[test]
    fn layouts_have_no_overlap_and_rest_on_floor() {
        let db = toy_db();
        let shapes = shapes_of(&db, &["chair_a", "bed_a", "table_a", "sofa_a"]);
        for seed in 0..50u64 {
            let layout = generate_layout(format!("s{seed}"), &shapes, seed).unwrap();
            let rects: Vec<TopDownRect> = layout
                .placed
                .iter()
                .map(|p| placement_rect(&db.get(&p.shape_id).unwrap().mesh, p))
                .collect();
            for i in 0..rects.len() {
                for j in i + 1..rects.len() {
                    assert!(!rects[i].intersects(&rects[j]), "seed {seed}: {i} vs {j}");
                }
            }
            for p in &layout.placed {
                let mesh = db.get(&p.shape_id).unwrap().mesh.apply_transform(&p.transform());
                let (lo, _) = mesh.bbox();
                assert!(lo.y.abs() <= 1e-6, "seed {seed}: min y {}", lo.y);
            }
        }
    }

    #[test]
    fn layout_deterministic() {
        let db = toy_db();
        let shapes = shapes_of(&db, &["chair_a", "bed_a", "table_a", "sofa_a"]);
        let a = generate_layout("s".into(), &shapes, 99).unwrap();
        let b = generate_layout("s".into(), &shapes, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_category_rejected() {
        let db = toy_db();
        let shapes = shapes_of(&db, &["chair_a", "chair_b"]);
        assert!(matches!(
            generate_layout("s".into(), &shapes, 1),
            Err(SceneError::DuplicateCategory(_))
        ));
    }

    #[test]
    fn scene_cameras_follow_config() {
        let db = toy_db();
        let shapes = shapes_of(&db, &["chair_a", "bed_a", "table_a", "sofa_a"]);
        let layout = generate_layout("s".into(), &shapes, 3).unwrap();
        let config = SceneCameraConfig {
            resolution: 64,
            ..SceneCameraConfig::default()
        };
        let cams = sample_scene_cameras(&layout, &db, 5, &config).unwrap();
        assert_eq!(cams.len(), 12);
        let (lo, hi) = scene_bbox(&layout, &db).unwrap();
        let centroid = (lo + hi) * 0.5;
        let mut azimuths: Vec<f64> = Vec::new();
        for c in &cams {
            let offset = c.position - centroid;
            let elevation = (offset.y / offset.norm()).asin().to_degrees();
            assert!((5.0..=25.0).contains(&elevation), "elevation {elevation}");
            azimuths.push(offset.z.atan2(offset.x).to_degrees().rem_euclid(360.0));
        }
        let mut sorted = azimuths.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (k, a) in sorted.iter().enumerate() {
            assert!((a - 30.0 * k as f64).abs() < 1e-9, "azimuth {a}");
        }
        let again = sample_scene_cameras(&layout, &db, 5, &config).unwrap();
        assert_eq!(cams, again);
    }

    #[test]
    fn render_scene_accounts_for_every_instance() {
        let db = toy_db();
        let shapes = shapes_of(&db, &["chair_a", "bed_a", "table_a", "sofa_a"]);
        let layout = generate_layout("s".into(), &shapes, 11).unwrap();
        let config = SceneCameraConfig {
            resolution: 96,
            ..SceneCameraConfig::default()
        };
        let cams = sample_scene_cameras(&layout, &db, 2, &config).unwrap();
        let render = render_scene(&layout, &cams, &db).unwrap();
        assert_eq!(render.statuses.len(), 4 * 12);
        assert_eq!(render.views.len(), 12);
        for s in &render.statuses {
            if let Some(rate) = s.occlusion_rate {
                assert!((0.0..1.0).contains(&rate));
            }
        }
    }

    #[test]
    fn single_centered_object_is_unoccluded() {
        let db = ShapeDb::from_records(vec![ShapeRecord::new(
            "solo".into(),
            "chair".into(),
            primitives::cube(0.8),
        )
        .unwrap()]);
        let layout = SceneLayout {
            scene_id: "solo".into(),
            placed: vec![Placement {
                shape_id: "solo".into(),
                yaw: 0.0,
                position: Vec3::new(0.0, 0.4, 0.0),
            }],
        };
        let config = SceneCameraConfig {
            resolution: 128,
            radius_factor: 1.5,
            ..SceneCameraConfig::default()
        };
        let cams = sample_scene_cameras(&layout, &db, 1, &config).unwrap();
        let render = render_scene(&layout, &cams, &db).unwrap();
        for s in &render.statuses {
            assert_eq!(s.occlusion_rate, Some(0.0), "view {}", s.view_id);
        }
    }

    #[test]
    fn hidden_instance_flagged_invisible() {
        // small cube completely behind a large cube from every ring camera
        let db = ShapeDb::from_records(vec![
            ShapeRecord::new("big".into(), "sofa".into(), primitives::cube(2.0)).unwrap(),
            ShapeRecord::new("small".into(), "chair".into(), primitives::cube(0.2)).unwrap(),
        ]);
        let layout = SceneLayout {
            scene_id: "hide".into(),
            placed: vec![
                Placement {
                    shape_id: "big".into(),
                    yaw: 0.0,
                    position: Vec3::new(0.0, 1.0, 0.0),
                },
                Placement {
                    shape_id: "small".into(),
                    yaw: 0.0,
                    position: Vec3::new(0.0, 0.1, 0.0),
                },
            ],
        };
        // camera straight down the +x axis, looking at the cube center:
        // the small cube is inside the big cube's silhouette and behind it
        let cam = orbit_camera(Vec3::new(0.0, 1.0, 0.0), 0.0, 10.0, 6.0, 60.0, 128, 128);
        let render = render_scene(&layout, &[cam], &db).unwrap();
        let small = render
            .statuses
            .iter()
            .find(|s| s.shape_id == "small")
            .unwrap();
        assert_eq!(small.occlusion_rate, None);
    }

    #[test]
    fn build_dataset_splits_and_holdout() {
        let db = toy_db();
        let dir = tempfile::tempdir().unwrap();
        let config = DatasetConfig {
            num_scenes: 10,
            camera: SceneCameraConfig {
                resolution: 64,
                ..SceneCameraConfig::default()
            },
            ..DatasetConfig::default()
        };
        let manifest = build_dataset(&db, 42, &config, dir.path()).unwrap();
        let split_counts = |s: Split| {
            manifest
                .scene_splits
                .values()
                .filter(|&&v| v == s)
                .count()
        };
        assert_eq!(split_counts(Split::Train), 8);
        assert_eq!(split_counts(Split::Val), 1);
        assert_eq!(split_counts(Split::Test), 1);
        assert_eq!(manifest.unseen_shapes.len(), 1);

        let dataset = Dataset::load(dir.path()).unwrap();
        for q in &dataset.queries {
            assert!(q.occlusion_rate < 1.0);
            if q.split == Split::Train {
                assert!(
                    !manifest.unseen_shapes.contains(&q.gt_shape_id),
                    "unseen shape in train: {}",
                    q.gt_shape_id
                );
            }
            assert!(dir.path().join(&q.image).exists());
            assert!(dir.path().join(&q.mask).exists());
        }
        assert_eq!(dataset.scenes.len(), 10);
    }

    #[test]
    fn build_dataset_reruns_identically() {
        let db = toy_db();
        let config = DatasetConfig {
            num_scenes: 3,
            camera: SceneCameraConfig {
                resolution: 48,
                ..SceneCameraConfig::default()
            },
            ..DatasetConfig::default()
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let ma = build_dataset(&db, 9, &config, dir_a.path()).unwrap();
        let mb = build_dataset(&db, 9, &config, dir_b.path()).unwrap();
        assert_eq!(ma, mb);
        let qa = std::fs::read(dir_a.path().join("queries.jsonl")).unwrap();
        let qb = std::fs::read(dir_b.path().join("queries.jsonl")).unwrap();
        assert_eq!(qa, qb);
    }

    #[test]
    fn layouts_parallel_equals_serial() {
        let db = toy_db();
        let cats: Vec<String> = DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect();
        let serial = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| build_layouts(&db, 40, 5, &cats).unwrap());
        let parallel = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap()
            .install(|| build_layouts(&db, 40, 5, &cats).unwrap());
        assert_eq!(serial, parallel);
    }
}
