//! View-dependent mask and normal metrics, and the per-instance occlusion
//! rate.
//!
//! The occlusion rate of a rendered instance is `1 − visible / intact`,
//! where `visible` counts the instance's pixels in the scene render and
//! `intact` counts the pixels of the object rendered alone with the same
//! camera intrinsics and pose on a canvas expanded 3× per side. Pixels lost
//! to frame truncation are therefore charged as occlusion.

use thiserror::Error;

use crate::img::{ImageError, Mask, NormalMap};

#[derive(Error, Debug)]
pub enum ViewMetricsError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("region contains no comparable pixels")]
    EmptyRegion,
    #[error("bin size {0}° must divide both 360° and 180°")]
    BadBinSize(u32),
    #[error("intact mask is empty: instance is outside the view frustum")]
    EmptyIntactMask,
}

/// Intersection over union of two same-resolution masks; 1 when both are
/// empty.
pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64, ViewMetricsError> {
    a.same_resolution(b)?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&pa, &pb) in a.data().iter().zip(b.data()) {
        if pa && pb {
            inter += 1;
        }
        if pa || pb {
            union += 1;
        }
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Mean Euclidean distance between the unit normals of two maps over the
/// region. Region pixels lacking a valid normal in either map are skipped;
/// the returned count reports how many were compared.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalL2 {
    pub mean: f64,
    pub compared: usize,
    pub skipped: usize,
}

pub fn normal_l2_detailed(
    a: &NormalMap,
    b: &NormalMap,
    region: &Mask,
) -> Result<NormalL2, ViewMetricsError> {
    a.same_resolution(b)?;
    if a.width() != region.width() || a.height() != region.height() {
        return Err(ViewMetricsError::Image(ImageError::ResolutionMismatch(
            a.width(),
            a.height(),
            region.width(),
            region.height(),
        )));
    }
    let mut total = 0.0;
    let mut compared = 0usize;
    let mut skipped = 0usize;
    for (x, y) in region.foreground() {
        if a.is_valid(x, y) && b.is_valid(x, y) {
            total += a.get(x, y).distance(b.get(x, y));
            compared += 1;
        } else {
            skipped += 1;
        }
    }
    if compared == 0 {
        return Err(ViewMetricsError::EmptyRegion);
    }
    Ok(NormalL2 {
        mean: total / compared as f64,
        compared,
        skipped,
    })
}

/// [`normal_l2_detailed`] reduced to the mean distance.
pub fn normal_l2(a: &NormalMap, b: &NormalMap, region: &Mask) -> Result<f64, ViewMetricsError> {
    Ok(normal_l2_detailed(a, b, region)?.mean)
}

/// 2D histogram of normal directions over (azimuth, elevation) bins.
/// Azimuth is `atan2(z, x)` mapped to `[0°, 360°)`, elevation `asin(y)` in
/// `[-90°, 90°]` with +90° merged into the top bin.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalHistogram {
    pub bin_deg: u32,
    pub azimuth_bins: usize,
    pub elevation_bins: usize,
    counts: Vec<u64>,
    pub total: u64,
}

impl NormalHistogram {
    pub fn build(
        normals: &NormalMap,
        mask: &Mask,
        bin_deg: u32,
    ) -> Result<Self, ViewMetricsError> {
        if bin_deg == 0 || 360 % bin_deg != 0 || 180 % bin_deg != 0 {
            return Err(ViewMetricsError::BadBinSize(bin_deg));
        }
        let azimuth_bins = (360 / bin_deg) as usize;
        let elevation_bins = (180 / bin_deg) as usize;
        let mut counts = vec![0u64; azimuth_bins * elevation_bins];
        let mut total = 0u64;
        for (x, y) in mask.foreground() {
            if !normals.is_valid(x, y) {
                continue;
            }
            let n = normals.get(x, y);
            let azimuth = n.z.atan2(n.x).to_degrees().rem_euclid(360.0);
            let elevation = n.y.clamp(-1.0, 1.0).asin().to_degrees();
            let az_bin = ((azimuth / bin_deg as f64) as usize).min(azimuth_bins - 1);
            let el_bin =
                (((elevation + 90.0) / bin_deg as f64) as usize).min(elevation_bins - 1);
            counts[el_bin * azimuth_bins + az_bin] += 1;
            total += 1;
        }
        Ok(NormalHistogram {
            bin_deg,
            azimuth_bins,
            elevation_bins,
            counts,
            total,
        })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
}

/// Average of per-bin IoUs (`min/max` of the two counts) over the bins
/// where at least one histogram is populated. When `include_empty_bins` is
/// set, empty-vs-empty bins count as IoU 1 instead of being dropped.
pub fn normal_hist_iou_with(
    normals_a: &NormalMap,
    normals_b: &NormalMap,
    mask_a: &Mask,
    mask_b: &Mask,
    bin_deg: u32,
    include_empty_bins: bool,
) -> Result<f64, ViewMetricsError> {
    let ha = NormalHistogram::build(normals_a, mask_a, bin_deg)?;
    let hb = NormalHistogram::build(normals_b, mask_b, bin_deg)?;
    if ha.total == 0 || hb.total == 0 {
        return Err(ViewMetricsError::EmptyRegion);
    }
    let mut sum = 0.0;
    let mut bins = 0usize;
    for (&ca, &cb) in ha.counts.iter().zip(&hb.counts) {
        let max = ca.max(cb);
        if max == 0 {
            if include_empty_bins {
                sum += 1.0;
                bins += 1;
            }
            continue;
        }
        sum += ca.min(cb) as f64 / max as f64;
        bins += 1;
    }
    Ok(sum / bins as f64)
}

/// [`normal_hist_iou_with`] at the default 10° bins, empty bins excluded.
pub fn normal_hist_iou(
    normals_a: &NormalMap,
    normals_b: &NormalMap,
    mask_a: &Mask,
    mask_b: &Mask,
) -> Result<f64, ViewMetricsError> {
    normal_hist_iou_with(normals_a, normals_b, mask_a, mask_b, 10, false)
}

/// Occlusion rate from the visible instance mask and the intact mask on the
/// expanded canvas. Errors with [`ViewMetricsError::EmptyIntactMask`] when
/// the object is entirely outside the frustum; such instances are invisible
/// and excluded from query sets.
pub fn occlusion_rate(instance_mask: &Mask, intact_mask: &Mask) -> Result<f64, ViewMetricsError> {
    let intact = intact_mask.count_foreground();
    if intact == 0 {
        return Err(ViewMetricsError::EmptyIntactMask);
    }
    let visible = instance_mask.count_foreground();
    Ok((1.0 - visible as f64 / intact as f64).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3 as V;

    fn strip_mask(w: u32, h: u32, x0: u32, x1: u32) -> Mask {
        let mut m = Mask::new(w, h);
        for y in 0..h {
            for x in x0..x1 {
                m.set(x, y, true);
            }
        }
        m
    }

    #[test]
    fn iou_identical_and_disjoint() {
        let a = strip_mask(10, 10, 0, 5);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        let b = strip_mask(10, 10, 5, 10);
        assert_eq!(mask_iou(&a, &b).unwrap(), 0.0);
        let empty = Mask::new(10, 10);
        assert_eq!(mask_iou(&empty, &empty).unwrap(), 1.0);
    }

    #[test]
    fn iou_counting_case() {
        // two 10x10 squares overlapping in a 5x10 strip: 50 / 150
        let a = strip_mask(20, 10, 0, 10);
        let b = strip_mask(20, 10, 5, 15);
        let iou = mask_iou(&a, &b).unwrap();
        assert!((iou - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn iou_resolution_mismatch() {
        let a = Mask::new(4, 4);
        let b = Mask::new(5, 4);
        assert!(mask_iou(&a, &b).is_err());
    }

    fn const_normal_map(w: u32, h: u32, n: V) -> NormalMap {
        let mut m = NormalMap::new(w, h);
        for y in 0..h {
            for x in 0..w {
                m.set(x, y, n);
            }
        }
        m
    }

    #[test]
    fn normal_l2_cases() {
        let region = strip_mask(8, 8, 0, 8);
        let up = V::new(0.0, 1.0, 0.0);
        let a = const_normal_map(8, 8, up);
        assert_eq!(normal_l2(&a, &a, &region).unwrap(), 0.0);
        let b = const_normal_map(8, 8, -up);
        assert_eq!(normal_l2(&a, &b, &region).unwrap(), 2.0);
        let c = const_normal_map(8, 8, V::new(1.0, 0.0, 0.0));
        let d = normal_l2(&a, &c, &region).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn normal_l2_skips_missing_pixels() {
        let region = strip_mask(4, 1, 0, 4);
        let up = V::new(0.0, 1.0, 0.0);
        let mut a = const_normal_map(4, 1, up);
        a.set(2, 0, V::ZERO); // invalid pixel
        let b = const_normal_map(4, 1, up);
        let r = normal_l2_detailed(&a, &b, &region).unwrap();
        assert_eq!(r.compared, 3);
        assert_eq!(r.skipped, 1);
        assert_eq!(r.mean, 0.0);
    }

    #[test]
    fn hist_iou_identical_is_one() {
        let mask = strip_mask(8, 8, 0, 8);
        let m = const_normal_map(8, 8, V::new(0.0, 1.0, 0.0));
        assert_eq!(normal_hist_iou(&m, &m, &mask, &mask).unwrap(), 1.0);
    }

    #[test]
    fn hist_iou_disjoint_bins_is_zero() {
        let mask = strip_mask(8, 8, 0, 8);
        let a = const_normal_map(8, 8, V::new(0.0, 1.0, 0.0));
        let b = const_normal_map(8, 8, V::new(0.0, -1.0, 0.0));
        assert_eq!(normal_hist_iou(&a, &b, &mask, &mask).unwrap(), 0.0);
    }

    #[test]
    fn hist_iou_hand_counts() {
        // bin1: 4 vs 2, bin2: 3 vs 3 => (0.5 + 1) / 2 = 0.75
        let east = V::new(1.0, 0.0, 0.0);
        let north = V::new(0.0, 1.0, 0.0);
        let mut na = NormalMap::new(7, 1);
        let mut nb = NormalMap::new(7, 1);
        let mut ma = Mask::new(7, 1);
        let mut mb = Mask::new(7, 1);
        for x in 0..4 {
            na.set(x, 0, east);
            ma.set(x, 0, true);
        }
        for x in 4..7 {
            na.set(x, 0, north);
            ma.set(x, 0, true);
        }
        for x in 0..2 {
            nb.set(x, 0, east);
            mb.set(x, 0, true);
        }
        for x in 2..5 {
            nb.set(x, 0, north);
            mb.set(x, 0, true);
        }
        let iou = normal_hist_iou(&na, &nb, &ma, &mb).unwrap();
        assert!((iou - 0.75).abs() < 1e-15);
    }

    #[test]
    fn hist_invariant_to_pixel_permutation() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut normals: Vec<V> = (0..64)
            .map(|i| {
                let t = i as f64 / 64.0 * std::f64::consts::TAU;
                V::new(t.cos() * 0.8, (1.0f64 - 0.64 * t.cos() * t.cos()).sqrt(), t.sin() * 0.0)
                    .normalized()
                    .unwrap()
            })
            .collect();
        let mask = strip_mask(8, 8, 0, 8);
        let before = {
            let mut m = NormalMap::new(8, 8);
            for (i, &n) in normals.iter().enumerate() {
                m.set(i as u32 % 8, i as u32 / 8, n);
            }
            NormalHistogram::build(&m, &mask, 10).unwrap()
        };
        normals.shuffle(&mut rng);
        let after = {
            let mut m = NormalMap::new(8, 8);
            for (i, &n) in normals.iter().enumerate() {
                m.set(i as u32 % 8, i as u32 / 8, n);
            }
            NormalHistogram::build(&m, &mask, 10).unwrap()
        };
        assert_eq!(before, after);
    }

    #[test]
    fn top_elevation_bin_merges_pole() {
        let mask = strip_mask(1, 1, 0, 1);
        let pole = const_normal_map(1, 1, V::new(0.0, 1.0, 0.0));
        let h = NormalHistogram::build(&pole, &mask, 10).unwrap();
        assert_eq!(h.total, 1);
        assert_eq!(h.counts().iter().sum::<u64>(), 1);
    }

    #[test]
    fn bad_bin_size_rejected() {
        let mask = strip_mask(1, 1, 0, 1);
        let m = const_normal_map(1, 1, V::new(0.0, 1.0, 0.0));
        assert!(matches!(
            NormalHistogram::build(&m, &mask, 7),
            Err(ViewMetricsError::BadBinSize(7))
        ));
    }

    #[test]
    fn occlusion_rate_cases() {
        let intact = strip_mask(10, 10, 0, 10);
        assert_eq!(occlusion_rate(&intact, &intact).unwrap(), 0.0);
        let half = strip_mask(10, 10, 0, 5);
        assert_eq!(occlusion_rate(&half, &intact).unwrap(), 0.5);
        let nothing = Mask::new(10, 10);
        assert_eq!(occlusion_rate(&nothing, &intact).unwrap(), 1.0);
        assert!(matches!(
            occlusion_rate(&half, &nothing),
            Err(ViewMetricsError::EmptyIntactMask)
        ));
    }

    #[test]
    fn occlusion_rate_monotone_in_occluder_size() {
        let intact = strip_mask(20, 20, 0, 20);
        let mut last = -1.0;
        for cover in 0..=20u32 {
            let visible = strip_mask(20, 20, cover, 20);
            let rate = occlusion_rate(&visible, &intact).unwrap();
            assert!(rate >= last);
            last = rate;
        }
    }
}
