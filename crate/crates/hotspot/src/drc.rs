//! Two-rule design-rule checker: minimum width and minimum spacing, plus
//! grid and bounds hygiene. Gates every generated, augmented, and poisoned
//! clip before it enters a dataset.

use serde::{Deserialize, Serialize};

use crate::geometry::{
    pair_spacing, rasterize_into, GeometryError, LayoutClip, Rect, RectilinearPolygon,
    CLIP_SIZE_NM,
};
use crate::raster::{connected_components, open_square, BinaryImage};

/// Surrogate two-rule deck with FreePDK45-like defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleDeck {
    pub min_width_nm: i32,
    pub min_spacing_nm: i32,
    pub grid_nm: i32,
}

impl Default for RuleDeck {
    fn default() -> Self {
        RuleDeck {
            min_width_nm: 65,
            min_spacing_nm: 65,
            grid_nm: 5,
        }
    }
}

impl RuleDeck {
    pub fn validate(&self) -> Result<(), String> {
        if self.grid_nm <= 0 || self.min_width_nm <= 0 || self.min_spacing_nm <= 0 {
            return Err("rule deck values must be positive".into());
        }
        if self.min_width_nm % self.grid_nm != 0 || self.min_spacing_nm % self.grid_nm != 0 {
            return Err("min width and spacing must be multiples of the grid".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationKind {
    Width,
    Spacing,
    OffGrid,
    OutOfBounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrcViolation {
    pub kind: ViolationKind,
    pub location: Rect,
    pub measured: f64,
    pub required: f64,
}

/// Checks a clip against the deck. Returns an empty list iff the clip is
/// clean. Violations are data, not errors, and come back in a deterministic
/// order (kind, then location).
pub fn check_clip(clip: &LayoutClip, deck: &RuleDeck) -> Vec<DrcViolation> {
    let mut violations = Vec::new();
    let grid = deck.grid_nm;
    for poly in &clip.polygons {
        let bb = poly.bounding_box();
        if bb.x0 < 0 || bb.y0 < 0 || bb.x1 > CLIP_SIZE_NM || bb.y1 > CLIP_SIZE_NM {
            violations.push(DrcViolation {
                kind: ViolationKind::OutOfBounds,
                location: bb,
                measured: 0.0,
                required: 0.0,
            });
        }
        if poly
            .vertices()
            .iter()
            .any(|p| p.x % grid != 0 || p.y % grid != 0)
        {
            violations.push(DrcViolation {
                kind: ViolationKind::OffGrid,
                location: bb,
                measured: 0.0,
                required: grid as f64,
            });
        }
        violations.extend(width_violations(poly, deck));
    }
    for i in 0..clip.polygons.len() {
        for j in (i + 1)..clip.polygons.len() {
            let a = &clip.polygons[i];
            let b = &clip.polygons[j];
            let measured = match pair_spacing(a, b) {
                Ok(d) => d,
                // Overlapping polygons violate the clip invariant; report
                // them as zero-spacing so callers can reject the clip.
                Err(GeometryError::Overlap) => -1.0,
                Err(_) => unreachable!("pair_spacing only fails on overlap"),
            };
            if measured < deck.min_spacing_nm as f64 {
                let loc = a
                    .bounding_box()
                    .intersect(&grow(b.bounding_box(), deck.min_spacing_nm))
                    .unwrap_or_else(|| union_rect(a.bounding_box(), b.bounding_box()));
                violations.push(DrcViolation {
                    kind: ViolationKind::Spacing,
                    location: loc,
                    measured: measured.max(0.0),
                    required: deck.min_spacing_nm as f64,
                });
            }
        }
    }
    violations.sort_by(|a, b| {
        (a.kind, a.location)
            .partial_cmp(&(b.kind, b.location))
            .unwrap()
    });
    violations
}

pub fn is_clean(clip: &LayoutClip, deck: &RuleDeck) -> bool {
    check_clip(clip, deck).is_empty()
}

fn grow(r: Rect, margin: i32) -> Rect {
    Rect {
        x0: r.x0 - margin,
        y0: r.y0 - margin,
        x1: r.x1 + margin,
        y1: r.y1 + margin,
    }
}

fn union_rect(a: Rect, b: Rect) -> Rect {
    Rect {
        x0: a.x0.min(b.x0),
        y0: a.y0.min(b.y0),
        x1: a.x1.max(b.x1),
        y1: a.y1.max(b.y1),
    }
}

/// Width rule via morphological opening of the exact grid-resolution
/// rasterization: the opened mask must equal the original. Any pixel the
/// opening removes sits inside a span narrower than min_width.
fn width_violations(poly: &RectilinearPolygon, deck: &RuleDeck) -> Vec<DrcViolation> {
    let grid = deck.grid_nm;
    let bb = poly.bounding_box();
    // Rasterize the polygon alone into a window around its bounding box,
    // shifted onto the pixel grid.
    let ox = (bb.x0.div_euclid(grid)) * grid;
    let oy = (bb.y0.div_euclid(grid)) * grid;
    let w = ((bb.x1 - ox) as usize).div_ceil(grid as usize).max(1);
    let h = ((bb.y1 - oy) as usize).div_ceil(grid as usize).max(1);
    let mut img = BinaryImage::new(w, h);
    rasterize_into(&[poly.translated(-ox, -oy)], grid, &mut img);
    let k = (deck.min_width_nm / grid) as usize;
    let opened = open_square(&img, k);
    let removed = img.and_not(&opened);
    if removed.count_ones() == 0 {
        return Vec::new();
    }
    connected_components(&removed)
        .into_iter()
        .map(|c| {
            let (x0, y0, x1, y1) = c.bbox;
            let location = Rect::new(
                ox + x0 as i32 * grid,
                oy + y0 as i32 * grid,
                ox + (x1 as i32 + 1) * grid,
                oy + (y1 as i32 + 1) * grid,
            );
            let span = location.width().min(location.height()) as f64;
            DrcViolation {
                kind: ViolationKind::Width,
                location,
                // The narrow span itself; clamp under the rule for odd shapes.
                measured: span.min(deck.min_width_nm as f64 - grid as f64),
                required: deck.min_width_nm as f64,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{move_edge, Point};

    fn wire(x0: i32, y0: i32, x1: i32, y1: i32) -> RectilinearPolygon {
        RectilinearPolygon::rect(Rect::new(x0, y0, x1, y1))
    }

    #[test]
    fn empty_clip_is_clean() {
        let clip = LayoutClip::empty("t");
        assert!(check_clip(&clip, &RuleDeck::default()).is_empty());
    }

    #[test]
    fn spacing_violation_at_64nm_gap() {
        // Two 70 nm wide wires, 64 nm apart: off-grid gap is deliberate to
        // probe the threshold, so use a 1 nm grid deck.
        let deck = RuleDeck {
            min_width_nm: 65,
            min_spacing_nm: 65,
            grid_nm: 1,
        };
        let clip = LayoutClip::new(
            "t",
            vec![wire(100, 100, 170, 800), wire(234, 100, 304, 800)],
        );
        let vs = check_clip(&clip, &deck);
        assert_eq!(vs.len(), 1);
        assert_eq!(vs[0].kind, ViolationKind::Spacing);
        assert_eq!(vs[0].measured, 64.0);
        assert_eq!(vs[0].required, 65.0);
    }

    #[test]
    fn exact_min_width_is_clean() {
        let clip = LayoutClip::new("t", vec![wire(100, 100, 165, 800)]);
        assert!(check_clip(&clip, &RuleDeck::default()).is_empty());
    }

    #[test]
    fn narrow_wire_flagged() {
        let clip = LayoutClip::new("t", vec![wire(100, 100, 160, 800)]);
        let vs = check_clip(&clip, &RuleDeck::default());
        assert_eq!(vs.len(), 1);
        assert_eq!(vs[0].kind, ViolationKind::Width);
        assert_eq!(vs[0].measured, 60.0);
    }

    #[test]
    fn pinched_l_shape_flagged_on_narrow_arm_only() {
        // Wide body with a 50 nm arm.
        let poly = RectilinearPolygon::new(vec![
            Point::new(100, 100),
            Point::new(300, 100),
            Point::new(300, 400),
            Point::new(250, 400),
            Point::new(250, 200),
            Point::new(100, 200),
        ])
        .unwrap();
        let clip = LayoutClip::new("t", vec![poly]);
        let vs = check_clip(&clip, &RuleDeck::default());
        assert!(vs.iter().any(|v| v.kind == ViolationKind::Width));
        // The narrow arm is x in [250, 300].
        for v in &vs {
            assert!(v.location.x0 >= 245);
        }
    }

    #[test]
    fn off_grid_vertex_flagged() {
        let clip = LayoutClip::new("t", vec![wire(101, 100, 171, 800)]);
        let vs = check_clip(&clip, &RuleDeck::default());
        assert!(vs.iter().any(|v| v.kind == ViolationKind::OffGrid));
    }

    #[test]
    fn overlap_reported_as_zero_spacing() {
        let clip = LayoutClip::new(
            "t",
            vec![wire(100, 100, 300, 300), wire(200, 200, 400, 400)],
        );
        let vs = check_clip(&clip, &RuleDeck::default());
        assert!(vs
            .iter()
            .any(|v| v.kind == ViolationKind::Spacing && v.measured == 0.0));
    }

    #[test]
    fn zero_distance_move_keeps_verdict() {
        let clip = LayoutClip::new(
            "t",
            vec![wire(100, 100, 170, 800), wire(240, 100, 310, 800)],
        );
        let deck = RuleDeck::default();
        let before = check_clip(&clip, &deck);
        let mut moved = clip.clone();
        moved.polygons[0] = move_edge(&moved.polygons[0], 0, 0).unwrap();
        assert_eq!(check_clip(&moved, &deck), before);
    }

    #[test]
    fn adding_polygon_never_removes_violations() {
        let deck = RuleDeck::default();
        let base = LayoutClip::new(
            "t",
            vec![wire(100, 100, 160, 800), wire(230, 100, 300, 800)],
        );
        let before = check_clip(&base, &deck);
        let bigger = base.with_polygon(wire(500, 100, 600, 800));
        let after = check_clip(&bigger, &deck);
        for v in &before {
            assert!(after.contains(v), "violation lost: {v:?}");
        }
    }

    #[test]
    fn violations_sorted_deterministically() {
        let clip = LayoutClip::new(
            "t",
            vec![
                wire(500, 100, 560, 800), // width violation
                wire(100, 100, 170, 800),
                wire(234, 100, 304, 800), // spacing violation vs previous (off-grid too)
            ],
        );
        let deck = RuleDeck {
            grid_nm: 1,
            ..RuleDeck::default()
        };
        let vs = check_clip(&clip, &deck);
        let mut sorted = vs.clone();
        sorted.sort_by(|a, b| (a.kind, a.location).partial_cmp(&(b.kind, b.location)).unwrap());
        assert_eq!(vs, sorted);
        assert!(vs.len() >= 2);
    }
}
