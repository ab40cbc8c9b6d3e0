//! Deterministic surrogate for lithography simulation.
//!
//! The aerial image is the rasterized mask convolved with a unit-mass 2-D
//! Gaussian (reflective border); the printed contour is a fixed resist
//! threshold. Pinches are drawn metal that fails to print; bridges are
//! printed metal between distinct polygons. A clip is a hotspot iff at
//! least 30% of some error marker's area intersects the ROI.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rasterize_into, LayoutClip, Rect, CLIP_SIZE_NM};
use crate::layout_io::Label;
use crate::raster::{connected_components, dilate, BinaryImage};

#[derive(Debug, Error)]
pub enum LithoError {
    #[error("calibration failed: no config within target bands; best candidate was {best:?} (prevalence {prevalence:.4}, cross-class rate {cross_rate:.4})")]
    CalibrationFailure {
        best: LithoConfig,
        prevalence: f64,
        cross_rate: f64,
    },
    #[error("calibration corpus too small: {0} clips (need at least {1})")]
    CorpusTooSmall(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LithoConfig {
    pub pixel_nm: i32,
    pub sigma_nm: f64,
    pub threshold: f64,
    pub min_marker_area_nm2: i64,
    pub dilation_margin_nm: i32,
}

impl Default for LithoConfig {
    fn default() -> Self {
        LithoConfig {
            pixel_nm: 3,
            sigma_nm: 25.0,
            threshold: 0.45,
            min_marker_area_nm2: 1000,
            dilation_margin_nm: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarkerKind {
    Pinch,
    Bridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMarker {
    pub rect: Rect,
    pub kind: MarkerKind,
    /// Defect component pixel area in nm^2 (not the rect area).
    pub area: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LithoResult {
    pub printed: BinaryImage,
    pub markers: Vec<ErrorMarker>,
    pub label: Label,
}

/// Separable Gaussian blur with a symmetric-reflection border.
fn gaussian_blur(src: &[f32], w: usize, h: usize, sigma_px: f64) -> Vec<f32> {
    let radius = (4.0 * sigma_px).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-((i * i) as f64) / (2.0 * sigma_px * sigma_px)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    let kernel: Vec<f32> = kernel.iter().map(|k| (k / sum) as f32).collect();

    let reflect = |i: isize, n: isize| -> usize {
        // Mirror at -0.5 and n-0.5: ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
        let mut i = i;
        loop {
            if i < 0 {
                i = -i - 1;
            } else if i >= n {
                i = 2 * n - 1 - i;
            } else {
                return i as usize;
            }
        }
    };

    // Tap-outer accumulation over contiguous slices so the inner loops
    // auto-vectorize; borders are materialized once per row.
    let r = radius as usize;
    let mut tmp = vec![0f32; w * h];
    let mut padded = vec![0f32; w + 2 * r];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for (i, p) in padded.iter_mut().enumerate() {
            *p = row[reflect(i as isize - radius, w as isize)];
        }
        let orow = &mut tmp[y * w..(y + 1) * w];
        for (ki, &k) in kernel.iter().enumerate() {
            for (o, s) in orow.iter_mut().zip(&padded[ki..ki + w]) {
                *o += k * s;
            }
        }
    }
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        let (head, rest) = out.split_at_mut(y * w);
        let _ = head;
        let orow = &mut rest[..w];
        for (ki, &k) in kernel.iter().enumerate() {
            let yy = reflect(y as isize + ki as isize - radius, h as isize);
            let srow = &tmp[yy * w..yy * w + w];
            for (o, s) in orow.iter_mut().zip(srow) {
                *o += k * s;
            }
        }
    }
    out
}

/// Runs the surrogate on one clip. Deterministic: identical (clip, cfg)
/// inputs produce bit-identical results.
pub fn simulate(clip: &LayoutClip, cfg: &LithoConfig) -> LithoResult {
    let p = cfg.pixel_nm;
    // Raster covers the clip; if the pixel does not divide 1110 the grid is
    // padded up to the next multiple and the padding stays empty.
    let n = (CLIP_SIZE_NM as usize).div_ceil(p as usize);
    let mut drawn = BinaryImage::new(n, n);
    rasterize_into(&clip.polygons, p, &mut drawn);

    let field: Vec<f32> = drawn.bits().iter().map(|&b| b as f32).collect();
    let aerial = gaussian_blur(&field, n, n, cfg.sigma_nm / p as f64);
    let mut printed = BinaryImage::new(n, n);
    let threshold = cfg.threshold as f32;
    for y in 0..n {
        for x in 0..n {
            printed.set(x, y, aerial[y * n + x] >= threshold);
        }
    }

    let mut markers = Vec::new();
    let px_area = (p * p) as i64;
    let to_rect = |bbox: (usize, usize, usize, usize)| -> Rect {
        Rect::new(
            (bbox.0 as i32 * p).min(CLIP_SIZE_NM - p),
            (bbox.1 as i32 * p).min(CLIP_SIZE_NM - p),
            ((bbox.2 as i32 + 1) * p).min(CLIP_SIZE_NM),
            ((bbox.3 as i32 + 1) * p).min(CLIP_SIZE_NM),
        )
    };

    // Pinch: drawn metal that fails to print.
    let pinch_mask = drawn.and_not(&printed);
    for c in connected_components(&pinch_mask) {
        let area = c.area as i64 * px_area;
        if area >= cfg.min_marker_area_nm2 {
            markers.push(ErrorMarker {
                rect: to_rect(c.bbox),
                kind: MarkerKind::Pinch,
                area,
            });
        }
    }

    // Bridge: printed metal outside the dilated drawn mask that touches the
    // dilations of at least two distinct polygons.
    let margin_px = (cfg.dilation_margin_nm as usize).div_ceil(p as usize);
    let dilated_all = dilate(&drawn, margin_px);
    let bridge_mask = printed.and_not(&dilated_all);
    if bridge_mask.count_ones() > 0 && clip.polygons.len() >= 2 {
        // Two label layers are enough to tell "two or more distinct".
        let mut label1 = vec![u32::MAX; n * n];
        let mut label2 = vec![u32::MAX; n * n];
        let mut single = BinaryImage::new(n, n);
        for (pi, poly) in clip.polygons.iter().enumerate() {
            single.clear();
            rasterize_into(std::slice::from_ref(poly), p, &mut single);
            let d = dilate(&single, margin_px);
            for (i, &b) in d.bits().iter().enumerate() {
                if b != 0 {
                    if label1[i] == u32::MAX {
                        label1[i] = pi as u32;
                    } else if label1[i] != pi as u32 && label2[i] == u32::MAX {
                        label2[i] = pi as u32;
                    }
                }
            }
        }
        for c in connected_components(&bridge_mask) {
            let area = c.area as i64 * px_area;
            if area < cfg.min_marker_area_nm2 {
                continue;
            }
            let mut touched: Vec<u32> = Vec::new();
            'pixels: for &(x, y) in &c.pixels {
                for dy in -1i32..=1 {
                    for dx in -1i32..=1 {
                        let (nx, ny) = (x as i32 + dx, y as i32 + dy);
                        if nx < 0 || ny < 0 || nx >= n as i32 || ny >= n as i32 {
                            continue;
                        }
                        let i = ny as usize * n + nx as usize;
                        for l in [label1[i], label2[i]] {
                            if l != u32::MAX && !touched.contains(&l) {
                                touched.push(l);
                                if touched.len() >= 2 {
                                    break 'pixels;
                                }
                            }
                        }
                    }
                }
            }
            if touched.len() >= 2 {
                markers.push(ErrorMarker {
                    rect: to_rect(c.bbox),
                    kind: MarkerKind::Bridge,
                    area,
                });
            }
        }
    }

    let label = label_from_markers(&markers, &clip.roi);
    LithoResult {
        printed,
        markers,
        label,
    }
}

/// Hotspot iff some marker overlaps the ROI by at least 30% of its area.
pub fn label_from_markers(markers: &[ErrorMarker], roi: &Rect) -> Label {
    for m in markers {
        let overlap = m
            .rect
            .intersect(roi)
            .map(|r| r.area())
            .unwrap_or(0);
        if overlap as f64 >= 0.30 * m.area as f64 {
            return Label::Hotspot;
        }
    }
    Label::NonHotspot
}

/// Simulates a batch in parallel; output order matches input order.
pub fn simulate_batch(clips: &[LayoutClip], cfg: &LithoConfig) -> Vec<LithoResult> {
    clips.par_iter().map(|c| simulate(c, cfg)).collect()
}

/// Labels only, cheaper to hold than full results.
pub fn label_batch(clips: &[LayoutClip], cfg: &LithoConfig) -> Vec<Label> {
    clips.par_iter().map(|c| simulate(c, cfg).label).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationTargets {
    /// Desired hotspot prevalence over the calibration corpus.
    pub prevalence_target: f64,
    /// Acceptable prevalence band.
    pub prevalence_band: (f64, f64),
    /// Acceptable band for the non-hotspot-parent cross-class rate.
    pub cross_band: (f64, f64),
    pub sigma_grid: Vec<f64>,
    pub threshold_grid: Vec<f64>,
    /// Non-hotspot parents sampled for the cross-class probe.
    pub cross_sample_parents: usize,
    pub cross_variants_per_parent: u32,
    pub seed: u64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        CalibrationTargets {
            prevalence_target: 0.0475,
            prevalence_band: (0.03, 0.07),
            cross_band: (0.001, 0.010),
            sigma_grid: vec![28.0, 30.0, 32.0],
            threshold_grid: vec![0.435, 0.4375, 0.44, 0.4425, 0.445],
            cross_sample_parents: 300,
            cross_variants_per_parent: 12,
            seed: 0x1117,
        }
    }
}

/// Grid-searches (sigma, threshold) for the config whose hotspot prevalence
/// is closest to target among configs whose prevalence and cross-class rate
/// sit inside the target bands. Ties break toward smaller sigma, then
/// smaller threshold; the search order is deterministic.
pub fn calibrate(
    corpus: &[LayoutClip],
    targets: &CalibrationTargets,
) -> Result<LithoConfig, LithoError> {
    const MIN_CORPUS: usize = 500;
    if corpus.len() < MIN_CORPUS {
        return Err(LithoError::CorpusTooSmall(corpus.len(), MIN_CORPUS));
    }
    // Phase 1: prevalence for every grid config (cheap relative to the
    // cross-class probe).
    struct Candidate {
        cfg: LithoConfig,
        labels: Vec<Label>,
        prevalence: f64,
        gap: f64,
        in_band: bool,
    }
    let mut candidates: Vec<Candidate> = Vec::new();
    for &sigma in &targets.sigma_grid {
        for &threshold in &targets.threshold_grid {
            let cfg = LithoConfig {
                sigma_nm: sigma,
                threshold,
                ..LithoConfig::default()
            };
            let labels = label_batch(corpus, &cfg);
            let hotspots = labels.iter().filter(|&&l| l == Label::Hotspot).count();
            let prevalence = hotspots as f64 / corpus.len() as f64;
            candidates.push(Candidate {
                cfg,
                labels,
                prevalence,
                gap: (prevalence - targets.prevalence_target).abs(),
                in_band: prevalence >= targets.prevalence_band.0
                    && prevalence <= targets.prevalence_band.1,
            });
        }
    }
    // Phase 2: probe the expensive cross-class rate in ascending
    // prevalence-gap order (ties toward smaller sigma then threshold) and
    // accept the first config passing both bands — equivalent to probing
    // all of them, since gap order is the selection order.
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (&candidates[a], &candidates[b]);
        ca.gap
            .total_cmp(&cb.gap)
            .then(ca.cfg.sigma_nm.total_cmp(&cb.cfg.sigma_nm))
            .then(ca.cfg.threshold.total_cmp(&cb.cfg.threshold))
    });
    let mut best_failure: Option<(f64, LithoConfig, f64, f64)> = None;
    for &i in &order {
        let c = &candidates[i];
        if !c.in_band {
            continue;
        }
        let cross_rate = measure_cross_rate(corpus, &c.labels, &c.cfg, targets);
        if cross_rate >= targets.cross_band.0 && cross_rate <= targets.cross_band.1 {
            return Ok(c.cfg.clone());
        }
        if best_failure.is_none() {
            best_failure = Some((c.gap, c.cfg.clone(), c.prevalence, cross_rate));
        }
    }
    let (_, best, prevalence, cross_rate) = match best_failure {
        Some(b) => b,
        None => {
            let i = order[0];
            let c = &candidates[i];
            (c.gap, c.cfg.clone(), c.prevalence, f64::NAN)
        }
    };
    Err(LithoError::CalibrationFailure {
        best,
        prevalence,
        cross_rate,
    })
}

/// Fraction of DRC-clean variants of non-hotspot parents that relabel as
/// hotspot under `cfg`.
fn measure_cross_rate(
    corpus: &[LayoutClip],
    labels: &[Label],
    cfg: &LithoConfig,
    targets: &CalibrationTargets,
) -> f64 {
    use crate::synthesis::{gen_variants, GenParams};

    let params = GenParams {
        variant_count: targets.cross_variants_per_parent,
        seed: targets.seed,
        ..GenParams::default()
    };
    let parents: Vec<&LayoutClip> = corpus
        .iter()
        .zip(labels)
        .filter(|(c, &l)| l == Label::NonHotspot && !c.polygons.is_empty())
        .map(|(c, _)| c)
        .take(targets.cross_sample_parents)
        .collect();
    let counts: Vec<(usize, usize)> = parents
        .par_iter()
        .map(|parent| {
            let batch = match gen_variants(parent, &params) {
                Ok(b) => b,
                Err(_) => return (0, 0),
            };
            let total = batch.variants.len();
            let crossed = batch
                .variants
                .iter()
                .filter(|v| simulate(v, cfg).label == Label::Hotspot)
                .count();
            (crossed, total)
        })
        .collect();
    let crossed: usize = counts.iter().map(|&(c, _)| c).sum();
    let total: usize = counts.iter().map(|&(_, t)| t).sum();
    if total == 0 {
        0.0
    } else {
        crossed as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{roi_rect, RectilinearPolygon};

    #[test]
    fn empty_clip_is_non_hotspot() {
        let r = simulate(&LayoutClip::empty("t"), &LithoConfig::default());
        assert!(r.markers.is_empty());
        assert_eq!(r.label, Label::NonHotspot);
    }

    #[test]
    fn isolated_large_rect_prints_clean() {
        let clip = LayoutClip::new(
            "t",
            vec![RectilinearPolygon::rect(Rect::new(405, 405, 705, 705))],
        );
        let r = simulate(&clip, &LithoConfig::default());
        assert!(r.markers.is_empty(), "markers: {:?}", r.markers);
        assert_eq!(r.label, Label::NonHotspot);
    }

    #[test]
    fn simulate_is_deterministic() {
        let clip = LayoutClip::new(
            "t",
            vec![
                RectilinearPolygon::rect(Rect::new(300, 300, 370, 800)),
                RectilinearPolygon::rect(Rect::new(450, 300, 520, 800)),
            ],
        );
        let cfg = LithoConfig::default();
        assert_eq!(simulate(&clip, &cfg), simulate(&clip, &cfg));
    }

    #[test]
    fn threshold_monotonicity() {
        let clip = LayoutClip::new(
            "t",
            vec![
                RectilinearPolygon::rect(Rect::new(300, 300, 370, 800)),
                RectilinearPolygon::rect(Rect::new(440, 300, 510, 800)),
            ],
        );
        let lo = simulate(
            &clip,
            &LithoConfig {
                threshold: 0.35,
                ..LithoConfig::default()
            },
        );
        let hi = simulate(
            &clip,
            &LithoConfig {
                threshold: 0.55,
                ..LithoConfig::default()
            },
        );
        for (l, h) in lo.printed.bits().iter().zip(hi.printed.bits()) {
            assert!(h <= l, "raising the threshold grew the printed set");
        }
    }

    #[test]
    fn translation_covariance_away_from_borders() {
        let poly = RectilinearPolygon::rect(Rect::new(400, 400, 470, 700));
        let base = LayoutClip::new("t", vec![poly.clone()]);
        let cfg = LithoConfig::default();
        let (dx, dy) = (30, -60); // multiples of pixel_nm = 3
        let shifted = LayoutClip::new("t", vec![poly.translated(dx, dy)]);
        let a = simulate(&base, &cfg);
        let b = simulate(&shifted, &cfg);
        let p = cfg.pixel_nm;
        let (sx, sy) = ((dx / p) as isize, (dy / p) as isize);
        let n = a.printed.width();
        // Compare printed pixels over an interior window.
        for y in 100..(n - 100) {
            for x in 100..(n - 100) {
                let (tx, ty) = ((x as isize + sx) as usize, (y as isize + sy) as usize);
                assert_eq!(a.printed.get(x, y), b.printed.get(tx, ty), "at ({x},{y})");
            }
        }
    }

    #[test]
    fn marker_fully_inside_roi_is_hotspot() {
        let m = ErrorMarker {
            rect: Rect::new(500, 500, 540, 540),
            kind: MarkerKind::Pinch,
            area: 1200,
        };
        assert_eq!(label_from_markers(&[m], &roi_rect()), Label::Hotspot);
    }

    #[test]
    fn marker_at_29_percent_is_non_hotspot() {
        // 100x10 marker, component area 1000 nm^2, 29 nm of its width inside
        // the ROI: overlap 290 < 0.30 * 1000.
        let m = ErrorMarker {
            rect: Rect::new(386, 500, 486, 510),
            kind: MarkerKind::Pinch,
            area: 1000,
        };
        assert_eq!(label_from_markers(&[m], &roi_rect()), Label::NonHotspot);
        // One more nm of overlap crosses the strict threshold.
        let m30 = ErrorMarker {
            rect: Rect::new(387, 500, 487, 510),
            kind: MarkerKind::Pinch,
            area: 1000,
        };
        assert_eq!(label_from_markers(&[m30], &roi_rect()), Label::Hotspot);
    }

    #[test]
    fn no_markers_is_non_hotspot() {
        assert_eq!(label_from_markers(&[], &roi_rect()), Label::NonHotspot);
    }
}
