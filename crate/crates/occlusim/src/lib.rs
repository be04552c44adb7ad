//! Synthetic multi-object occlusion scenes with exact ground truth, plus a
//! full metric suite for evaluating single-view 3D shape retrieval.
//!
//! The crate covers the whole loop: load and normalize meshes, sample
//! surface point clouds, rasterize scenes with per-instance occlusion rates,
//! compute view-independent (Chamfer, light field descriptor, voxel IoU) and
//! view-dependent (mask IoU, single-view LFD, normal) similarity metrics,
//! score retrieval runs, and quantify how stable metric-induced rankings are
//! under resampling.
//!
//! See the `book/` guide in the repository for concept chapters with
//! runnable examples, and the `occlusim` binary for the command-line
//! interface.

pub mod embedding;
pub mod eval;
pub mod geom;
pub mod img;
pub mod lfd;
pub mod mesh;
pub mod primitives;
pub mod recon;
pub mod render;
pub mod sampling;
pub mod scene;
pub mod stability;
pub mod view_metrics;
pub mod voxel;
