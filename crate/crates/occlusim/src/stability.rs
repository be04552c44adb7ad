//! Ranking-stability analysis: how much a metric-induced shape ranking
//! moves when the point sampling changes.
//!
//! Three statistics compare a variant ranking against a base ranking over
//! the same items: the number of items whose rank changed (MS), the mean
//! absolute rank difference over moved items (RD), and extrapolated
//! rank-biased overlap (RBO) with persistence `p` — top-weighted agreement
//! where identical lists score exactly 1.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use thiserror::Error;

use crate::geom::splitmix64;
use crate::mesh::TriangleMesh;
use crate::recon::{chamfer, f1_score, normal_consistency, DistanceExponent, ReconError};
use crate::sampling::{PointCloud, Sampler, SamplingError};

#[derive(Error, Debug)]
pub enum StabilityError {
    #[error("persistence p must satisfy 0 < p < 1, got {0}")]
    BadPersistence(f64),
    #[error("ranked lists do not contain the same items")]
    MultisetMismatch,
    #[error("ranked list contains duplicate items")]
    DuplicateItems,
    #[error("stability study needs at least one point count")]
    NoConfigs,
    #[error("stability study needs at least two shapes")]
    TooFewShapes,
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Recon(#[from] ReconError),
}

/// MS, RD, and RBO of a variant ranking against a base ranking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityTriple {
    /// Number of items whose rank differs.
    pub moved: usize,
    /// Mean |rank difference| over moved items; 0 when nothing moved.
    pub rank_diff: f64,
    /// Extrapolated rank-biased overlap in [0, 1].
    pub rbo: f64,
}

/// Compares two rankings of the same item set. See [`StabilityTriple`].
pub fn ranking_stability<T: Eq + std::hash::Hash + Ord>(
    base: &[T],
    variant: &[T],
    p: f64,
) -> Result<StabilityTriple, StabilityError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(StabilityError::BadPersistence(p));
    }
    let mut base_rank = BTreeMap::new();
    for (i, item) in base.iter().enumerate() {
        if base_rank.insert(item, i).is_some() {
            return Err(StabilityError::DuplicateItems);
        }
    }
    let mut variant_rank = BTreeMap::new();
    for (i, item) in variant.iter().enumerate() {
        if variant_rank.insert(item, i).is_some() {
            return Err(StabilityError::DuplicateItems);
        }
    }
    if base.len() != variant.len() || !base_rank.keys().eq(variant_rank.keys()) {
        return Err(StabilityError::MultisetMismatch);
    }

    let mut moved = 0usize;
    let mut total_diff = 0usize;
    for (item, &rb) in &base_rank {
        let rv = variant_rank[item];
        if rb != rv {
            moved += 1;
            total_diff += rb.abs_diff(rv);
        }
    }
    let rank_diff = if moved == 0 {
        0.0
    } else {
        total_diff as f64 / moved as f64
    };

    // extrapolated RBO: (1-p) Σ_{d=1..k} p^{d-1} A_d  +  A_k p^k
    let k = base.len();
    let mut in_base: HashSet<&T> = HashSet::new();
    let mut in_variant: HashSet<&T> = HashSet::new();
    let mut overlap = 0usize;
    let mut weighted = 0.0;
    let mut p_pow = 1.0; // p^{d-1}
    let mut agreement_at_k = 0.0;
    for d in 1..=k {
        let b = &base[d - 1];
        let v = &variant[d - 1];
        if b == v {
            overlap += 1;
        } else {
            if in_variant.contains(b) {
                overlap += 1;
            }
            if in_base.contains(v) {
                overlap += 1;
            }
            in_base.insert(b);
            in_variant.insert(v);
        }
        let agreement = overlap as f64 / d as f64;
        weighted += p_pow * agreement;
        p_pow *= p;
        if d == k {
            agreement_at_k = agreement;
        }
    }
    let rbo = (1.0 - p) * weighted + agreement_at_k * p_pow;
    Ok(StabilityTriple {
        moved,
        rank_diff,
        rbo,
    })
}

/// Which reconstruction metric drives the ranking in a stability study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyMetric {
    Cd,
    Nc,
    F1,
}

impl StudyMetric {
    pub fn name(&self) -> &'static str {
        match self {
            StudyMetric::Cd => "cd",
            StudyMetric::Nc => "nc",
            StudyMetric::F1 => "f1",
        }
    }

    /// Distances rank ascending; similarities descending.
    fn ascending(&self) -> bool {
        matches!(self, StudyMetric::Cd)
    }
}

impl std::str::FromStr for StudyMetric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cd" => Ok(StudyMetric::Cd),
            "nc" => Ok(StudyMetric::Nc),
            "f1" => Ok(StudyMetric::F1),
            other => Err(format!("unknown study metric {other:?}")),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct StabilityStudyConfig {
    pub metrics: Vec<StudyMetric>,
    pub samplers: Vec<Sampler>,
    /// Variant point counts compared against the base.
    pub point_counts: Vec<usize>,
    /// Point count of the base ranking.
    pub base_points: usize,
    pub seed: u64,
    pub rbo_p: f64,
    pub f1_threshold: f64,
    pub cd_exponent: DistanceExponent,
}

impl Default for StabilityStudyConfig {
    fn default() -> Self {
        StabilityStudyConfig {
            metrics: vec![StudyMetric::Cd, StudyMetric::Nc, StudyMetric::F1],
            samplers: vec![Sampler::Fas, Sampler::Fps],
            point_counts: vec![1000, 2000, 4000],
            base_points: 10_000,
            seed: 0,
            rbo_p: 0.9,
            f1_threshold: 0.1,
            cd_exponent: DistanceExponent::Squared,
        }
    }
}

/// Stability of one `(metric, sampler, point count)` configuration against
/// the base ranking, averaged over query shapes.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct StudyEntry {
    pub metric: StudyMetric,
    pub sampler: Sampler,
    pub points: usize,
    pub mean_moved: f64,
    pub mean_rank_diff: f64,
    pub mean_rbo: f64,
}

/// Mean per-pair score variance across point counts for one
/// `(metric, sampler)` pair.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct VarianceEntry {
    pub metric: StudyMetric,
    pub sampler: Sampler,
    pub score_variance: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct StudyReport {
    pub config: StabilityStudyConfig,
    pub stability: Vec<StudyEntry>,
    pub variance: Vec<VarianceEntry>,
}

/// Runs the full sampling-stability study over a shape set: for every
/// `(metric, sampler)` it ranks all shapes against each query shape at the
/// base point count and at each variant count, reports mean MS/RD/RBO of
/// the variant rankings against the base, and the mean per-pair score
/// variance across all point counts.
pub fn sampling_stability_study(
    shapes: &[(String, TriangleMesh)],
    config: &StabilityStudyConfig,
) -> Result<StudyReport, StabilityError> {
    if config.point_counts.is_empty() {
        return Err(StabilityError::NoConfigs);
    }
    if shapes.len() < 2 {
        return Err(StabilityError::TooFewShapes);
    }
    if !(config.rbo_p > 0.0 && config.rbo_p < 1.0) {
        return Err(StabilityError::BadPersistence(config.rbo_p));
    }

    let mut all_counts: Vec<usize> = config.point_counts.clone();
    all_counts.push(config.base_points);
    all_counts.sort_unstable();
    all_counts.dedup();

    let mut stability = Vec::new();
    let mut variance = Vec::new();
    for &sampler in &config.samplers {
        // clouds[count][shape]
        let mut clouds: BTreeMap<usize, Vec<PointCloud>> = BTreeMap::new();
        for &n in &all_counts {
            let per_shape: Result<Vec<PointCloud>, SamplingError> = shapes
                .par_iter()
                .enumerate()
                .map(|(i, (_, mesh))| {
                    sampler.sample(mesh, n, splitmix64(config.seed ^ splitmix64(i as u64 + 1)))
                })
                .collect();
            clouds.insert(n, per_shape?);
        }

        for &metric in &config.metrics {
            // score matrix per count: scores[count][(i, j)] for i < j
            let mut scores: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for &n in &all_counts {
                let cloud_set = &clouds[&n];
                let pairs: Vec<(usize, usize)> = (0..shapes.len())
                    .flat_map(|i| ((i + 1)..shapes.len()).map(move |j| (i, j)))
                    .collect();
                let values: Result<Vec<f64>, StabilityError> = pairs
                    .par_iter()
                    .map(|&(i, j)| {
                        score_pair(metric, &cloud_set[i], &cloud_set[j], config)
                    })
                    .collect();
                scores.insert(n, values?);
            }

            let pair_index = |i: usize, j: usize| -> usize {
                // linear index into the (i < j) pair list
                debug_assert!(i < j);
                i * shapes.len() - i * (i + 1) / 2 + (j - i - 1)
            };
            let score_of = |table: &[f64], a: usize, b: usize| -> f64 {
                if a < b {
                    table[pair_index(a, b)]
                } else {
                    table[pair_index(b, a)]
                }
            };

            let rank_all = |table: &[f64], query: usize| -> Vec<String> {
                let mut order: Vec<usize> =
                    (0..shapes.len()).filter(|&c| c != query).collect();
                order.sort_by(|&a, &b| {
                    let sa = score_of(table, query, a);
                    let sb = score_of(table, query, b);
                    let cmp = sa.partial_cmp(&sb).expect("finite scores");
                    let cmp = if metric.ascending() { cmp } else { cmp.reverse() };
                    cmp.then_with(|| shapes[a].0.cmp(&shapes[b].0))
                });
                order.into_iter().map(|c| shapes[c].0.clone()).collect()
            };

            let base_table = &scores[&config.base_points];
            let base_rankings: Vec<Vec<String>> =
                (0..shapes.len()).map(|q| rank_all(base_table, q)).collect();

            for &n in &config.point_counts {
                let table = &scores[&n];
                let mut sum_moved = 0.0;
                let mut sum_rd = 0.0;
                let mut sum_rbo = 0.0;
                for q in 0..shapes.len() {
                    let variant = rank_all(table, q);
                    let triple =
                        ranking_stability(&base_rankings[q], &variant, config.rbo_p)?;
                    sum_moved += triple.moved as f64;
                    sum_rd += triple.rank_diff;
                    sum_rbo += triple.rbo;
                }
                let q = shapes.len() as f64;
                stability.push(StudyEntry {
                    metric,
                    sampler,
                    points: n,
                    mean_moved: sum_moved / q,
                    mean_rank_diff: sum_rd / q,
                    mean_rbo: sum_rbo / q,
                });
            }

            // per-pair population variance across every point count
            let n_pairs = scores[&config.base_points].len();
            let mut var_sum = 0.0;
            for pair in 0..n_pairs {
                let values: Vec<f64> = all_counts.iter().map(|n| scores[n][pair]).collect();
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                    / values.len() as f64;
                var_sum += var;
            }
            variance.push(VarianceEntry {
                metric,
                sampler,
                score_variance: var_sum / n_pairs as f64,
            });
        }
    }

    Ok(StudyReport {
        config: config.clone(),
        stability,
        variance,
    })
}

fn score_pair(
    metric: StudyMetric,
    a: &PointCloud,
    b: &PointCloud,
    config: &StabilityStudyConfig,
) -> Result<f64, StabilityError> {
    Ok(match metric {
        StudyMetric::Cd => chamfer(a, b, config.cd_exponent)?,
        StudyMetric::Nc => normal_consistency(a, b)?,
        StudyMetric::F1 => f1_score(a, b, config.f1_threshold)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_lists() {
        let items = ["a", "b", "c", "d"];
        let t = ranking_stability(&items, &items, 0.9).unwrap();
        assert_eq!(t.moved, 0);
        assert_eq!(t.rank_diff, 0.0);
        assert!((t.rbo - 1.0).abs() < 1e-15);
    }

    #[test]
    fn swap_hand_case() {
        let t = ranking_stability(&["a", "b"], &["b", "a"], 0.9).unwrap();
        assert_eq!(t.moved, 2);
        assert_eq!(t.rank_diff, 1.0);
        // (1-p)(p^0·0 + p^1·1) + 1·p² = 0.09 + 0.81
        assert!((t.rbo - 0.90).abs() < 1e-15);
    }

    #[test]
    fn rbo_is_symmetric_and_bounded() {
        let base = ["a", "b", "c", "d", "e"];
        let variant = ["c", "a", "e", "b", "d"];
        let ab = ranking_stability(&base, &variant, 0.9).unwrap();
        let ba = ranking_stability(&variant, &base, 0.9).unwrap();
        assert!((ab.rbo - ba.rbo).abs() < 1e-15);
        assert!(ab.rbo > 0.0 && ab.rbo < 1.0);
    }

    #[test]
    fn reversal_rbo_monotone_in_p() {
        let base: Vec<u32> = (0..10).collect();
        let rev: Vec<u32> = (0..10).rev().collect();
        let mut last = 0.0;
        for &p in &[0.5, 0.7, 0.9, 0.97] {
            let t = ranking_stability(&base, &rev, p).unwrap();
            assert!(t.rbo < 1.0);
            assert!(t.rbo >= last, "rbo should grow with p for a fixed reversal");
            last = t.rbo;
        }
    }

    #[test]
    fn multiset_mismatch_rejected() {
        assert!(matches!(
            ranking_stability(&["a", "b"], &["a", "c"], 0.9),
            Err(StabilityError::MultisetMismatch)
        ));
        assert!(matches!(
            ranking_stability(&["a", "a"], &["a", "a"], 0.9),
            Err(StabilityError::DuplicateItems)
        ));
        assert!(matches!(
            ranking_stability(&["a"], &["a"], 1.0),
            Err(StabilityError::BadPersistence(_))
        ));
    }

    #[test]
    fn rbo_agreement_formula_spot_check() {
        // lists share the same top item, then diverge completely
        let base = ["x", "a", "b"];
        let variant = ["x", "c", "d"];
        let err = ranking_stability(&base, &variant, 0.9);
        // different item sets: must be rejected
        assert!(matches!(err, Err(StabilityError::MultisetMismatch)));
    }

    fn toy_shapes() -> Vec<(String, TriangleMesh)> {
        vec![
            ("box_a".into(), crate::primitives::box_mesh(crate::geom::Vec3::new(1.0, 0.4, 0.6))),
            ("box_b".into(), crate::primitives::box_mesh(crate::geom::Vec3::new(0.9, 0.5, 0.7))),
            ("cyl_a".into(), crate::primitives::cylinder(0.3, 1.0, 16)),
            ("sphere_a".into(), crate::primitives::uv_sphere(0.5, 16, 8)),
            ("cone_a".into(), crate::primitives::cone(0.4, 0.9, 16)),
        ]
    }

    #[test]
    fn study_zero_variance_for_identical_configs() {
        let shapes = toy_shapes();
        let config = StabilityStudyConfig {
            metrics: vec![StudyMetric::Cd],
            samplers: vec![Sampler::Fas],
            point_counts: vec![256],
            base_points: 256,
            seed: 3,
            ..StabilityStudyConfig::default()
        };
        let report = sampling_stability_study(&shapes, &config).unwrap();
        // only one distinct count: variance across counts is exactly zero,
        // and the "variant" ranking equals the base ranking
        assert_eq!(report.variance[0].score_variance, 0.0);
        assert_eq!(report.stability[0].mean_moved, 0.0);
        assert!((report.stability[0].mean_rbo - 1.0).abs() < 1e-12);
    }

    #[test]
    fn study_delegates_to_ranking_stability() {
        let base = ["a", "b", "c"];
        let variant = ["b", "a", "c"];
        let t = ranking_stability(&base, &variant, 0.9).unwrap();
        assert_eq!(t.moved, 2);
        assert_eq!(t.rank_diff, 1.0);
    }

    #[test]
    fn study_runs_small_end_to_end() {
        let shapes = toy_shapes();
        let config = StabilityStudyConfig {
            metrics: vec![StudyMetric::Cd, StudyMetric::Nc],
            samplers: vec![Sampler::Fas],
            point_counts: vec![64, 256],
            base_points: 512,
            seed: 5,
            ..StabilityStudyConfig::default()
        };
        let report = sampling_stability_study(&shapes, &config).unwrap();
        assert_eq!(report.stability.len(), 4); // 2 metrics × 2 counts
        assert_eq!(report.variance.len(), 2);
        for e in &report.stability {
            assert!(e.mean_rbo > 0.0 && e.mean_rbo <= 1.0);
        }
        for v in &report.variance {
            assert!(v.score_variance >= 0.0);
        }
    }
}
