//! Retrieval-run evaluation: accuracy, top-k similarity aggregates,
//! occlusion-stratified curves, and report generation.
//!
//! A retrieval run maps each query to a ranked candidate shape list. The
//! harness scores it against a dataset's annotations with view-independent
//! metrics (Chamfer distance on FPS point clouds, light field descriptor
//! distance) and view-dependent metrics (mask IoU and single-view LFD,
//! rendered under the query's ground-truth camera and pose). Externally
//! computed perceptual scores can be joined from a CSV file and reported as
//! an additional column.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::img::Mask;
use crate::lfd::{compute_lfd, lfd_distance, vlfd_distance, LfdError, LfdRig, LightFieldDescriptor};
use crate::mesh::{normalize_canonical, MeshError, ShapeDb};
use crate::recon::{chamfer, DistanceExponent, ReconError};
use crate::render::{rasterize_single, Camera, RenderError};
use crate::sampling::{PointCloud, Sampler, SamplingError};
use crate::scene::{Dataset, QueryRecord, SceneError, Split};
use crate::view_metrics::{mask_iou, ViewMetricsError};

#[derive(Error, Debug)]
pub enum EvalError {
    #[error("query {0:?} appears twice in the run")]
    DuplicateQuery(String),
    #[error("query {query:?} ranks candidate {candidate:?} twice")]
    DuplicateCandidate { query: String, candidate: String },
    #[error("query {0:?} has an empty ranked list")]
    EmptyRanking(String),
    #[error("query {0:?} has no annotation")]
    MissingAnnotation(String),
    #[error("candidate {0:?} does not resolve in the shape database")]
    UnresolvedCandidate(String),
    #[error("query {query:?}: ranked list has {len} candidates, need top-{k}")]
    RankTooShort { query: String, len: usize, k: usize },
    #[error("query {0:?}: dataset has no scene/camera for it")]
    MissingScene(String),
    #[error("view-dependent metric requested but no dataset with poses was supplied")]
    NoDataset,
    #[error("malformed perceptual-score file {path}: {message}")]
    BadLpips { path: PathBuf, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed run file {path}: {message}")]
    BadRun { path: PathBuf, message: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Recon(#[from] ReconError),
    #[error(transparent)]
    Lfd(#[from] LfdError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    ViewMetrics(#[from] ViewMetricsError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Per-query ranked candidate shape ids, the unit of evaluation.
#[derive(Debug, Clone, Default)]
pub struct RetrievalRun {
    entries: BTreeMap<String, RankedList>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedList {
    pub ranked: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunLine {
    query_id: String,
    ranked: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    scores: Option<Vec<f64>>,
}

impl RetrievalRun {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        query_id: String,
        ranked: Vec<String>,
        scores: Option<Vec<f64>>,
    ) -> Result<(), EvalError> {
        if ranked.is_empty() {
            return Err(EvalError::EmptyRanking(query_id));
        }
        let mut seen = BTreeSet::new();
        for c in &ranked {
            if !seen.insert(c.clone()) {
                return Err(EvalError::DuplicateCandidate {
                    query: query_id,
                    candidate: c.clone(),
                });
            }
        }
        if self
            .entries
            .insert(query_id.clone(), RankedList { ranked, scores })
            .is_some()
        {
            return Err(EvalError::DuplicateQuery(query_id));
        }
        Ok(())
    }

    pub fn get(&self, query_id: &str) -> Option<&RankedList> {
        self.entries.get(query_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &RankedList)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// JSON-lines: `{"query_id": .., "ranked": [..], "scores": [..]?}`.
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut run = RetrievalRun::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: RunLine = serde_json::from_str(line).map_err(|e| EvalError::BadRun {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })?;
            run.insert(parsed.query_id, parsed.ranked, parsed.scores)?;
        }
        Ok(run)
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        use std::io::Write;
        let file = std::fs::File::create(path).map_err(io_err(path))?;
        let mut w = std::io::BufWriter::new(file);
        for (query_id, list) in &self.entries {
            let line = serde_json::to_string(&RunLine {
                query_id: query_id.clone(),
                ranked: list.ranked.clone(),
                scores: list.scores.clone(),
            })
            .unwrap();
            writeln!(w, "{line}").map_err(io_err(path))?;
        }
        w.flush().map_err(io_err(path))
    }
}

pub type Annotations = BTreeMap<String, QueryRecord>;

pub fn annotations_from(queries: &[QueryRecord]) -> Annotations {
    queries
        .iter()
        .map(|q| (q.query_id.clone(), q.clone()))
        .collect()
}

/// `Acc_k`: percentage of queries whose top-k contains the GT shape.
pub fn acc_at_k(run: &RetrievalRun, annotations: &Annotations, k: usize) -> Result<f64, EvalError> {
    let mut hits = 0usize;
    for (query_id, list) in run.iter() {
        let ann = annotations
            .get(query_id)
            .ok_or_else(|| EvalError::MissingAnnotation(query_id.clone()))?;
        if list
            .ranked
            .iter()
            .take(k)
            .any(|c| *c == ann.gt_shape_id)
        {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / run.len() as f64)
}

/// Percentage of queries whose top-1 candidate has the GT category.
pub fn cat_acc(
    run: &RetrievalRun,
    annotations: &Annotations,
    shape_db: &ShapeDb,
) -> Result<f64, EvalError> {
    let mut hits = 0usize;
    for (query_id, list) in run.iter() {
        let ann = annotations
            .get(query_id)
            .ok_or_else(|| EvalError::MissingAnnotation(query_id.clone()))?;
        let top1 = &list.ranked[0];
        let record = shape_db
            .get(top1)
            .map_err(|_| EvalError::UnresolvedCandidate(top1.clone()))?;
        if record.category == ann.category {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / run.len() as f64)
}

/// The shape-similarity metrics the harness can attach to a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMetric {
    Cd,
    Lfd,
    MIoU,
    VLfd,
}

impl EvalMetric {
    pub fn name(&self) -> &'static str {
        match self {
            EvalMetric::Cd => "cd",
            EvalMetric::Lfd => "lfd",
            EvalMetric::MIoU => "miou",
            EvalMetric::VLfd => "vlfd",
        }
    }

    pub fn view_dependent(&self) -> bool {
        matches!(self, EvalMetric::MIoU | EvalMetric::VLfd)
    }
}

impl std::str::FromStr for EvalMetric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cd" => Ok(EvalMetric::Cd),
            "lfd" => Ok(EvalMetric::Lfd),
            "miou" => Ok(EvalMetric::MIoU),
            "vlfd" => Ok(EvalMetric::VLfd),
            other => Err(format!("unknown metric {other:?} (cd, lfd, miou, vlfd)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub metrics: Vec<EvalMetric>,
    pub topk: Vec<usize>,
    /// Point count for CD clouds.
    pub points: usize,
    pub sampler: Sampler,
    pub sample_seed: u64,
    pub cd_exponent: DistanceExponent,
    pub lfd_rig_seed: u64,
    pub lfd_resolution: u32,
    pub lfd_num_dodecahedra: usize,
    pub lfd_distance_factor: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            metrics: vec![EvalMetric::Cd, EvalMetric::Lfd, EvalMetric::MIoU, EvalMetric::VLfd],
            topk: vec![1, 5],
            points: 4096,
            sampler: Sampler::Fps,
            sample_seed: 0,
            cd_exponent: DistanceExponent::Squared,
            lfd_rig_seed: 0,
            lfd_resolution: crate::lfd::DEFAULT_RESOLUTION,
            lfd_num_dodecahedra: crate::lfd::DEFAULT_NUM_DODECAHEDRA,
            lfd_distance_factor: crate::lfd::DEFAULT_RIG_DISTANCE,
        }
    }
}

/// Precomputed per-shape state shared across queries.
pub struct EvalContext<'a> {
    pub shape_db: &'a ShapeDb,
    pub dataset: Option<&'a Dataset>,
    pub config: EvalConfig,
    clouds: BTreeMap<String, PointCloud>,
    descriptors: BTreeMap<String, LightFieldDescriptor>,
}

impl<'a> EvalContext<'a> {
    pub fn new(
        shape_db: &'a ShapeDb,
        dataset: Option<&'a Dataset>,
        config: EvalConfig,
    ) -> Self {
        EvalContext {
            shape_db,
            dataset,
            config,
            clouds: BTreeMap::new(),
            descriptors: BTreeMap::new(),
        }
    }

    /// Samples clouds / computes descriptors for every shape id in `ids`,
    /// in parallel, keyed deterministically by shape id.
    pub fn prepare(&mut self, ids: &BTreeSet<String>) -> Result<(), EvalError> {
        for id in ids {
            if !self.shape_db.contains(id) {
                return Err(EvalError::UnresolvedCandidate(id.clone()));
            }
        }
        let need_clouds = self.config.metrics.contains(&EvalMetric::Cd);
        let need_lfd = self.config.metrics.contains(&EvalMetric::Lfd);
        if need_clouds {
            let missing: Vec<&String> =
                ids.iter().filter(|id| !self.clouds.contains_key(*id)).collect();
            let sampled: Result<Vec<(String, PointCloud)>, EvalError> = missing
                .par_iter()
                .map(|id| {
                    let record = self.shape_db.get(id)?;
                    let (normed, _) = normalize_canonical(&record.mesh)?;
                    let cloud = self.config.sampler.sample(
                        &normed,
                        self.config.points,
                        self.config.sample_seed,
                    )?;
                    Ok(((*id).clone(), cloud))
                })
                .collect();
            self.clouds.extend(sampled?);
        }
        if need_lfd {
            let rig = LfdRig::new(
                self.config.lfd_num_dodecahedra,
                self.config.lfd_rig_seed,
                self.config.lfd_distance_factor,
                self.config.lfd_resolution,
            );
            let missing: Vec<&String> = ids
                .iter()
                .filter(|id| !self.descriptors.contains_key(*id))
                .collect();
            let computed: Result<Vec<(String, LightFieldDescriptor)>, EvalError> = missing
                .par_iter()
                .map(|id| {
                    let record = self.shape_db.get(id)?;
                    let (normed, _) = normalize_canonical(&record.mesh)?;
                    Ok(((*id).clone(), compute_lfd(&normed, &rig)?))
                })
                .collect();
            self.descriptors.extend(computed?);
        }
        Ok(())
    }

    /// Injects precomputed descriptors (e.g. from a descriptor store).
    pub fn load_descriptors(&mut self, store: BTreeMap<String, LightFieldDescriptor>) {
        self.descriptors.extend(store);
    }

    fn cloud(&self, id: &str) -> &PointCloud {
        &self.clouds[id]
    }

    fn descriptor(&self, id: &str) -> &LightFieldDescriptor {
        &self.descriptors[id]
    }

    /// Camera and placement transform of a query's GT instance.
    fn query_view(
        &self,
        ann: &QueryRecord,
    ) -> Result<(Camera, crate::mesh::SimilarityTransform), EvalError> {
        let dataset = self.dataset.ok_or(EvalError::NoDataset)?;
        let scene = dataset
            .scene(&ann.scene_id)
            .ok_or_else(|| EvalError::MissingScene(ann.query_id.clone()))?;
        let camera = *scene
            .cameras
            .get(ann.view_id)
            .ok_or_else(|| EvalError::MissingScene(ann.query_id.clone()))?;
        let placement = scene
            .layout
            .placed
            .get(ann.instance_id as usize - 1)
            .ok_or_else(|| EvalError::MissingScene(ann.query_id.clone()))?;
        Ok((camera, placement.transform()))
    }

    /// Complete (unoccluded) mask of `shape_id` under the query's GT pose
    /// and camera.
    fn complete_mask(&self, ann: &QueryRecord, shape_id: &str) -> Result<Mask, EvalError> {
        let (camera, transform) = self.query_view(ann)?;
        let record = self.shape_db.get(shape_id)?;
        Ok(rasterize_single(&record.mesh, &transform, &camera)?.mask)
    }
}

/// Per-query mean of a metric over the top-k candidates against the GT
/// shape, then the mean over queries.
pub fn topk_metric_avg(
    run: &RetrievalRun,
    annotations: &Annotations,
    ctx: &mut EvalContext<'_>,
    metric: EvalMetric,
    k: usize,
) -> Result<f64, EvalError> {
    let mut needed: BTreeSet<String> = BTreeSet::new();
    for (query_id, list) in run.iter() {
        let ann = annotations
            .get(query_id)
            .ok_or_else(|| EvalError::MissingAnnotation(query_id.clone()))?;
        if list.ranked.len() < k {
            return Err(EvalError::RankTooShort {
                query: query_id.clone(),
                len: list.ranked.len(),
                k,
            });
        }
        needed.insert(ann.gt_shape_id.clone());
        needed.extend(list.ranked.iter().take(k).cloned());
    }
    let mut restricted = ctx.config.clone();
    restricted.metrics = vec![metric];
    let saved = std::mem::replace(&mut ctx.config.metrics, restricted.metrics);
    let prep = ctx.prepare(&needed);
    ctx.config.metrics = saved;
    prep?;

    let mut total = 0.0;
    for (query_id, list) in run.iter() {
        let ann = &annotations[query_id];
        let mut query_sum = 0.0;
        let gt_mask = if metric.view_dependent() {
            Some(ctx.complete_mask(ann, &ann.gt_shape_id)?)
        } else {
            None
        };
        for candidate in list.ranked.iter().take(k) {
            query_sum += pair_metric(ctx, ann, candidate, metric, gt_mask.as_ref())?;
        }
        total += query_sum / k as f64;
    }
    Ok(total / run.len() as f64)
}

fn pair_metric(
    ctx: &EvalContext<'_>,
    ann: &QueryRecord,
    candidate: &str,
    metric: EvalMetric,
    gt_mask: Option<&Mask>,
) -> Result<f64, EvalError> {
    Ok(match metric {
        EvalMetric::Cd => chamfer(
            ctx.cloud(&ann.gt_shape_id),
            ctx.cloud(candidate),
            ctx.config.cd_exponent,
        )?,
        EvalMetric::Lfd => lfd_distance(
            ctx.descriptor(&ann.gt_shape_id),
            ctx.descriptor(candidate),
        )?,
        EvalMetric::MIoU => {
            let cand_mask = ctx.complete_mask(ann, candidate)?;
            mask_iou(gt_mask.expect("gt mask prepared"), &cand_mask)?
        }
        EvalMetric::VLfd => {
            let cand_mask = ctx.complete_mask(ann, candidate)?;
            vlfd_distance(gt_mask.expect("gt mask prepared"), &cand_mask)?
        }
    })
}

/// One scored query of a [`MetricsReport`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct QueryRow {
    pub query_id: String,
    pub gt_shape_id: String,
    pub category: String,
    pub occlusion_rate: f64,
    pub split: Split,
    pub unseen: bool,
    pub top1: String,
    /// `hit_<k>` per configured k: GT in top-k.
    pub hits: BTreeMap<String, bool>,
    pub cat_hit: bool,
    /// `<metric>_<k>` per configured metric and k.
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct SubsetAggregate {
    pub count: usize,
    /// `acc_<k>` and `cat_acc`, as percentages.
    pub accuracy: BTreeMap<String, f64>,
    /// mean of each `<metric>_<k>` column.
    pub metric_means: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<QueryRow>,
    pub overall: SubsetAggregate,
    /// Keyed by subset name: occ/noocc, seen/unseen, their products, and
    /// the dataset splits.
    pub subsets: BTreeMap<String, SubsetAggregate>,
}

fn aggregate(rows: &[&QueryRow]) -> SubsetAggregate {
    let mut agg = SubsetAggregate {
        count: rows.len(),
        ..SubsetAggregate::default()
    };
    if rows.is_empty() {
        return agg;
    }
    let n = rows.len() as f64;
    let mut hit_keys: BTreeSet<&String> = BTreeSet::new();
    let mut metric_keys: BTreeSet<&String> = BTreeSet::new();
    for row in rows {
        hit_keys.extend(row.hits.keys());
        metric_keys.extend(row.metrics.keys());
    }
    for key in hit_keys {
        let hits = rows.iter().filter(|r| r.hits.get(key) == Some(&true)).count();
        agg.accuracy
            .insert(key.replace("hit_", "acc_"), 100.0 * hits as f64 / n);
    }
    let cat_hits = rows.iter().filter(|r| r.cat_hit).count();
    agg.accuracy
        .insert("cat_acc".to_string(), 100.0 * cat_hits as f64 / n);
    for key in metric_keys {
        let vals: Vec<f64> = rows.iter().filter_map(|r| r.metrics.get(key)).copied().collect();
        if !vals.is_empty() {
            agg.metric_means
                .insert(key.clone(), vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    agg
}

/// Externally computed per-(query, candidate) perceptual scores.
pub type LpipsTable = BTreeMap<(String, String), f64>;

/// CSV with a `query_id,shape_id,lpips` header.
pub fn load_lpips(path: &Path) -> Result<LpipsTable, EvalError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| EvalError::BadLpips {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| EvalError::BadLpips {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .clone();
    let expected = ["query_id", "shape_id", "lpips"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(EvalError::BadLpips {
            path: path.to_path_buf(),
            message: format!("header {:?}, expected {expected:?}", headers),
        });
    }
    let mut table = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| EvalError::BadLpips {
            path: path.to_path_buf(),
            message: format!("record {}: {e}", i + 1),
        })?;
        let value: f64 = record[2].parse().map_err(|e| EvalError::BadLpips {
            path: path.to_path_buf(),
            message: format!("record {}: {e}", i + 1),
        })?;
        table.insert((record[0].to_string(), record[1].to_string()), value);
    }
    Ok(table)
}

/// Evaluates a run into a full [`MetricsReport`] with per-subset
/// breakdowns. Deterministic for fixed inputs and config.
pub fn evaluate_run(
    run: &RetrievalRun,
    annotations: &Annotations,
    ctx: &mut EvalContext<'_>,
    lpips: Option<&LpipsTable>,
) -> Result<MetricsReport, EvalError> {
    let k_max = ctx.config.topk.iter().copied().max().unwrap_or(1);
    let mut needed: BTreeSet<String> = BTreeSet::new();
    for (query_id, list) in run.iter() {
        let ann = annotations
            .get(query_id)
            .ok_or_else(|| EvalError::MissingAnnotation(query_id.clone()))?;
        if list.ranked.len() < k_max {
            return Err(EvalError::RankTooShort {
                query: query_id.clone(),
                len: list.ranked.len(),
                k: k_max,
            });
        }
        for c in &list.ranked {
            if !ctx.shape_db.contains(c) {
                return Err(EvalError::UnresolvedCandidate(c.clone()));
            }
        }
        needed.insert(ann.gt_shape_id.clone());
        needed.extend(list.ranked.iter().take(k_max).cloned());
    }
    ctx.prepare(&needed)?;

    let queries: Vec<(&String, &RankedList)> = run.iter().collect();
    let rows: Result<Vec<QueryRow>, EvalError> = queries
        .par_iter()
        .map(|(query_id, list)| {
            let ann = &annotations[*query_id];
            let mut hits = BTreeMap::new();
            for &k in &ctx.config.topk {
                let hit = list.ranked.iter().take(k).any(|c| *c == ann.gt_shape_id);
                hits.insert(format!("hit_{k}"), hit);
            }
            let top1 = list.ranked[0].clone();
            let cat_hit = ctx.shape_db.get(&top1)?.category == ann.category;

            let mut metrics = BTreeMap::new();
            let needs_view = ctx.config.metrics.iter().any(|m| m.view_dependent());
            let gt_mask = if needs_view {
                Some(ctx.complete_mask(ann, &ann.gt_shape_id)?)
            } else {
                None
            };
            // per-candidate values, computed once up to k_max
            let mut per_candidate: BTreeMap<EvalMetric, Vec<f64>> = BTreeMap::new();
            for &metric in &ctx.config.metrics {
                let mut values = Vec::with_capacity(k_max);
                for candidate in list.ranked.iter().take(k_max) {
                    values.push(pair_metric(ctx, ann, candidate, metric, gt_mask.as_ref())?);
                }
                per_candidate.insert(metric, values);
            }
            for &metric in &ctx.config.metrics {
                let values = &per_candidate[&metric];
                for &k in &ctx.config.topk {
                    let mean = values[..k].iter().sum::<f64>() / k as f64;
                    metrics.insert(format!("{}_{k}", metric.name()), mean);
                }
            }
            if let Some(table) = lpips {
                for &k in &ctx.config.topk {
                    let vals: Vec<f64> = list
                        .ranked
                        .iter()
                        .take(k)
                        .filter_map(|c| table.get(&((*query_id).clone(), c.clone())))
                        .copied()
                        .collect();
                    if !vals.is_empty() {
                        metrics.insert(
                            format!("lpips_{k}"),
                            vals.iter().sum::<f64>() / vals.len() as f64,
                        );
                    }
                }
            }
            Ok(QueryRow {
                query_id: (*query_id).clone(),
                gt_shape_id: ann.gt_shape_id.clone(),
                category: ann.category.clone(),
                occlusion_rate: ann.occlusion_rate,
                split: ann.split,
                unseen: ann.unseen,
                top1,
                hits,
                cat_hit,
                metrics,
            })
        })
        .collect();
    let rows = rows?;

    let overall = aggregate(&rows.iter().collect::<Vec<_>>());
    let mut subsets = BTreeMap::new();
    let occ: Vec<&QueryRow> = rows.iter().filter(|r| r.occlusion_rate > 0.0).collect();
    let noocc: Vec<&QueryRow> = rows.iter().filter(|r| r.occlusion_rate == 0.0).collect();
    let seen: Vec<&QueryRow> = rows.iter().filter(|r| !r.unseen).collect();
    let unseen: Vec<&QueryRow> = rows.iter().filter(|r| r.unseen).collect();
    subsets.insert("occ".to_string(), aggregate(&occ));
    subsets.insert("noocc".to_string(), aggregate(&noocc));
    subsets.insert("seen".to_string(), aggregate(&seen));
    subsets.insert("unseen".to_string(), aggregate(&unseen));
    for (name, base) in [("occ", &occ), ("noocc", &noocc)] {
        for (tag, flag) in [("seen", false), ("unseen", true)] {
            let filtered: Vec<&QueryRow> =
                base.iter().filter(|r| r.unseen == flag).copied().collect();
            subsets.insert(format!("{name}_{tag}"), aggregate(&filtered));
        }
    }
    for split in [Split::Train, Split::Val, Split::Test] {
        let filtered: Vec<&QueryRow> = rows.iter().filter(|r| r.split == split).collect();
        subsets.insert(split.to_string(), aggregate(&filtered));
    }

    Ok(MetricsReport {
        rows,
        overall,
        subsets,
    })
}

/// Mean metric values and query counts per occlusion-rate bin.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OcclusionBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub acc_1: Option<f64>,
    pub metric_means: BTreeMap<String, f64>,
}

/// Bins report rows by occlusion rate into `[0, w), [w, 2w), …` with the
/// final bin closed at 1. Empty bins are reported with count 0.
pub fn occlusion_curve(report: &MetricsReport, bin_width: f64) -> Vec<OcclusionBin> {
    assert!(bin_width > 0.0 && bin_width <= 1.0);
    let bins = (1.0 / bin_width).ceil() as usize;
    let mut grouped: Vec<Vec<&QueryRow>> = vec![Vec::new(); bins];
    for row in &report.rows {
        let idx = ((row.occlusion_rate / bin_width) as usize).min(bins - 1);
        grouped[idx].push(row);
    }
    grouped
        .into_iter()
        .enumerate()
        .map(|(i, rows)| {
            let agg = aggregate(&rows);
            OcclusionBin {
                lo: i as f64 * bin_width,
                hi: ((i + 1) as f64 * bin_width).min(1.0),
                count: rows.len(),
                acc_1: agg.accuracy.get("acc_1").copied(),
                metric_means: agg.metric_means,
            }
        })
        .collect()
}

/// Writes the per-query rows as CSV. Column order: identity fields, then
/// `hit_<k>` and `cat_hit`, then metric columns sorted by name.
pub fn write_report_csv(report: &MetricsReport, path: &Path) -> Result<(), EvalError> {
    let mut hit_cols: BTreeSet<String> = BTreeSet::new();
    let mut metric_cols: BTreeSet<String> = BTreeSet::new();
    for row in &report.rows {
        hit_cols.extend(row.hits.keys().cloned());
        metric_cols.extend(row.metrics.keys().cloned());
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| EvalError::BadRun {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut header = vec![
        "query_id".to_string(),
        "gt_shape_id".to_string(),
        "category".to_string(),
        "occlusion_rate".to_string(),
        "split".to_string(),
        "unseen".to_string(),
        "top1".to_string(),
    ];
    header.extend(hit_cols.iter().cloned());
    header.push("cat_hit".to_string());
    header.extend(metric_cols.iter().cloned());
    w.write_record(&header).map_err(|e| EvalError::BadRun {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    for row in &report.rows {
        let mut record = vec![
            row.query_id.clone(),
            row.gt_shape_id.clone(),
            row.category.clone(),
            format!("{}", row.occlusion_rate),
            row.split.to_string(),
            row.unseen.to_string(),
            row.top1.clone(),
        ];
        for col in &hit_cols {
            record.push(row.hits.get(col).copied().unwrap_or(false).to_string());
        }
        record.push(row.cat_hit.to_string());
        for col in &metric_cols {
            record.push(
                row.metrics
                    .get(col)
                    .map(|v| format!("{v}"))
                    .unwrap_or_default(),
            );
        }
        w.write_record(&record).map_err(|e| EvalError::BadRun {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    }
    w.flush().map_err(|e| EvalError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Serializes the aggregates (everything except the rows) as JSON.
pub fn write_report_aggregates(report: &MetricsReport, path: &Path) -> Result<(), EvalError> {
    #[derive(Serialize)]
    struct Aggregates<'a> {
        overall: &'a SubsetAggregate,
        subsets: &'a BTreeMap<String, SubsetAggregate>,
    }
    let json = serde_json::to_string_pretty(&Aggregates {
        overall: &report.overall,
        subsets: &report.subsets,
    })
    .unwrap();
    std::fs::write(path, json).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_annotations() -> Annotations {
        let mk = |qid: &str, gt: &str, cat: &str, rate: f64| QueryRecord {
            query_id: qid.to_string(),
            scene_id: "s".to_string(),
            view_id: 0,
            instance_id: 1,
            category: cat.to_string(),
            gt_shape_id: gt.to_string(),
            occlusion_rate: rate,
            image: String::new(),
            mask: String::new(),
            split: Split::Val,
            unseen: false,
        };
        let mut ann = BTreeMap::new();
        ann.insert("q1".to_string(), mk("q1", "a", "chair", 0.0));
        ann.insert("q2".to_string(), mk("q2", "b", "table", 0.4));
        ann.insert("q3".to_string(), mk("q3", "c", "chair", 0.9));
        ann
    }

    fn run_from(lists: &[(&str, &[&str])]) -> RetrievalRun {
        let mut run = RetrievalRun::new();
        for (q, ranked) in lists {
            run.insert(
                q.to_string(),
                ranked.iter().map(|s| s.to_string()).collect(),
                None,
            )
            .unwrap();
        }
        run
    }

    #[test]
    fn acc_at_k_hand_counts() {
        let ann = toy_annotations();
        let run = run_from(&[
            ("q1", &["a", "b", "c"]),
            ("q2", &["c", "a", "b"]),
            ("q3", &["a", "b", "c"]),
        ]);
        // top-1 hits: q1 only => 33.33; top-3 hits: all => 100
        let acc1 = acc_at_k(&run, &ann, 1).unwrap();
        assert!((acc1 - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(acc_at_k(&run, &ann, 3).unwrap(), 100.0);
    }

    #[test]
    fn acc_nondecreasing_in_k() {
        let ann = toy_annotations();
        let run = run_from(&[
            ("q1", &["b", "a", "c"]),
            ("q2", &["c", "a", "b"]),
            ("q3", &["a", "c", "b"]),
        ]);
        let mut last = 0.0;
        for k in 1..=3 {
            let acc = acc_at_k(&run, &ann, k).unwrap();
            assert!(acc >= last);
            last = acc;
        }
    }

    #[test]
    fn missing_annotation_is_an_error() {
        let ann = toy_annotations();
        let run = run_from(&[("nope", &["a"])]);
        assert!(matches!(
            acc_at_k(&run, &ann, 1),
            Err(EvalError::MissingAnnotation(_))
        ));
    }

    #[test]
    fn duplicate_candidates_rejected() {
        let mut run = RetrievalRun::new();
        let err = run.insert("q".into(), vec!["a".into(), "a".into()], None);
        assert!(matches!(err, Err(EvalError::DuplicateCandidate { .. })));
    }

    #[test]
    fn run_file_round_trip() {
        let run = run_from(&[("q1", &["a", "b"]), ("q2", &["b", "a"])]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        run.save(&path).unwrap();
        let loaded = RetrievalRun::load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.get("q1").unwrap().ranked, vec!["a", "b"]);
    }

    #[test]
    fn occlusion_bins_cover_and_count() {
        let rows: Vec<QueryRow> = [0.0, 0.05, 0.12, 0.95, 1.0f64]
            .iter()
            .enumerate()
            .map(|(i, &rate)| QueryRow {
                query_id: format!("q{i}"),
                gt_shape_id: "a".into(),
                category: "chair".into(),
                occlusion_rate: rate,
                split: Split::Val,
                unseen: false,
                top1: "a".into(),
                hits: BTreeMap::from([("hit_1".to_string(), true)]),
                cat_hit: true,
                metrics: BTreeMap::from([("cd_1".to_string(), rate * 2.0)]),
            })
            .collect();
        let report = MetricsReport {
            overall: aggregate(&rows.iter().collect::<Vec<_>>()),
            subsets: BTreeMap::new(),
            rows,
        };
        let bins = occlusion_curve(&report, 0.1);
        assert_eq!(bins.len(), 10);
        let total: usize = bins.iter().map(|b| b.count).sum();
        assert_eq!(total, 5);
        assert_eq!(bins[0].count, 2); // 0.0 and 0.05
        assert_eq!(bins[1].count, 1); // 0.12
        assert_eq!(bins[9].count, 2); // 0.95 and the closed 1.0
        assert_eq!(bins[2].count, 0);
        // hand mean of bin 0: (0.0 + 0.1) / 2
        assert!((bins[0].metric_means["cd_1"] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn aggregates_match_row_recomputation() {
        let rows: Vec<QueryRow> = (0..10)
            .map(|i| QueryRow {
                query_id: format!("q{i}"),
                gt_shape_id: "a".into(),
                category: "chair".into(),
                occlusion_rate: i as f64 / 10.0,
                split: Split::Val,
                unseen: i % 3 == 0,
                top1: "a".into(),
                hits: BTreeMap::from([("hit_1".to_string(), i % 2 == 0)]),
                cat_hit: i % 4 != 0,
                metrics: BTreeMap::from([("cd_1".to_string(), i as f64)]),
            })
            .collect();
        let all: Vec<&QueryRow> = rows.iter().collect();
        let agg = aggregate(&all);
        assert_eq!(agg.count, 10);
        assert!((agg.accuracy["acc_1"] - 50.0).abs() < 1e-12);
        let mean: f64 = (0..10).map(|i| i as f64).sum::<f64>() / 10.0;
        assert!((agg.metric_means["cd_1"] - mean).abs() < 1e-12);
    }
}
