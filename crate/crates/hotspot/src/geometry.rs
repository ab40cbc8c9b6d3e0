//! Exact integer-nanometer rectilinear geometry.
//!
//! All coordinates are integer nanometers on a 5 nm manufacturing grid.
//! Clips are 1110x1110 nm windows with a centered 195x195 nm region of
//! interest; the ROI rounding convention is fixed here and used everywhere.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::BinaryImage;

/// Clip window edge length in nanometers.
pub const CLIP_SIZE_NM: i32 = 1110;
/// Manufacturing grid in nanometers.
pub const GRID_NM: i32 = 5;
/// ROI edge length in nanometers.
pub const ROI_SIZE_NM: i32 = 195;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("polygon needs at least 4 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("edge {0} is diagonal")]
    DiagonalEdge(usize),
    #[error("edge {0} has zero length")]
    ZeroLengthEdge(usize),
    #[error("consecutive edges {0} and {1} do not alternate horizontal/vertical")]
    NonAlternatingEdges(usize, usize),
    #[error("polygon is self-intersecting (edges {0} and {1})")]
    SelfIntersection(usize, usize),
    #[error("polygon vertices are not counter-clockwise")]
    NotCounterClockwise,
    #[error("edge index {index} out of range for polygon with {edges} edges")]
    EdgeIndexOutOfRange { index: usize, edges: usize },
    #[error("rejected edge move: {0}")]
    RejectedMove(&'static str),
    #[error("polygons overlap")]
    Overlap,
    #[error("polygon exits clip bounds")]
    OutOfBounds,
    #[error("pixel size {0} does not divide clip size {1}")]
    BadPixelSize(i32, i32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Point {
    pub x: i32,
    pub y: i32,
}

impl Point {
    pub fn new(x: i32, y: i32) -> Self {
        Point { x, y }
    }
}

/// Axis-aligned rectangle, half-open semantics are not implied: x0 < x1, y0 < y1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rect {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl Rect {
    pub fn new(x0: i32, y0: i32, x1: i32, y1: i32) -> Self {
        assert!(x0 < x1 && y0 < y1, "degenerate rect");
        Rect { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> i32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> i32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> i64 {
        self.width() as i64 * self.height() as i64
    }

    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1.min(other.x1);
        let y1 = self.y1.min(other.y1);
        if x0 < x1 && y0 < y1 {
            Some(Rect { x0, y0, x1, y1 })
        } else {
            None
        }
    }

    pub fn overlaps(&self, other: &Rect) -> bool {
        self.intersect(other).is_some()
    }
}

/// The centered region of interest. 1110 and 195 are both odd; the exact
/// center box is (457.5, 457.5)-(652.5, 652.5) and we fix floor/ceil of it.
pub fn roi_rect() -> Rect {
    Rect::new(457, 457, 652, 652)
}

/// Closed rectilinear polygon with counter-clockwise vertices. Edge `i`
/// runs from vertex `i` to vertex `(i + 1) % n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RectilinearPolygon {
    vertices: Vec<Point>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeOrientation {
    Horizontal,
    Vertical,
}

/// A polygon edge as a closed segment between two vertices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub a: Point,
    pub b: Point,
}

impl Edge {
    pub fn orientation(&self) -> EdgeOrientation {
        if self.a.y == self.b.y {
            EdgeOrientation::Horizontal
        } else {
            EdgeOrientation::Vertical
        }
    }

    pub fn length(&self) -> i64 {
        ((self.a.x - self.b.x).abs() + (self.a.y - self.b.y).abs()) as i64
    }
}

impl RectilinearPolygon {
    /// Validates structure: >=4 vertices, axis-parallel edges alternating
    /// horizontal/vertical, simple, counter-clockwise, positive area.
    pub fn new(vertices: Vec<Point>) -> Result<Self, GeometryError> {
        let n = vertices.len();
        if n < 4 {
            return Err(GeometryError::TooFewVertices(n));
        }
        let poly = RectilinearPolygon { vertices };
        for i in 0..n {
            let e = poly.edge(i);
            if e.a == e.b {
                return Err(GeometryError::ZeroLengthEdge(i));
            }
            if e.a.x != e.b.x && e.a.y != e.b.y {
                return Err(GeometryError::DiagonalEdge(i));
            }
        }
        for i in 0..n {
            let j = (i + 1) % n;
            if poly.edge(i).orientation() == poly.edge(j).orientation() {
                return Err(GeometryError::NonAlternatingEdges(i, j));
            }
        }
        if let Some((i, j)) = poly.find_self_intersection() {
            return Err(GeometryError::SelfIntersection(i, j));
        }
        if poly.signed_area2() <= 0 {
            return Err(GeometryError::NotCounterClockwise);
        }
        Ok(poly)
    }

    pub fn rect(r: Rect) -> Self {
        RectilinearPolygon::new(vec![
            Point::new(r.x0, r.y0),
            Point::new(r.x1, r.y0),
            Point::new(r.x1, r.y1),
            Point::new(r.x0, r.y1),
        ])
        .expect("rect is always a valid polygon")
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn edge_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge(&self, i: usize) -> Edge {
        let n = self.vertices.len();
        Edge {
            a: self.vertices[i],
            b: self.vertices[(i + 1) % n],
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        (0..self.vertices.len()).map(move |i| self.edge(i))
    }

    pub fn bounding_box(&self) -> Rect {
        let mut x0 = i32::MAX;
        let mut y0 = i32::MAX;
        let mut x1 = i32::MIN;
        let mut y1 = i32::MIN;
        for p in &self.vertices {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        Rect::new(x0, y0, x1, y1)
    }

    pub fn translated(&self, dx: i32, dy: i32) -> Self {
        RectilinearPolygon {
            vertices: self
                .vertices
                .iter()
                .map(|p| Point::new(p.x + dx, p.y + dy))
                .collect(),
        }
    }

    fn signed_area2(&self) -> i64 {
        let n = self.vertices.len();
        let mut acc: i64 = 0;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            acc += a.x as i64 * b.y as i64 - b.x as i64 * a.y as i64;
        }
        acc
    }

    fn find_self_intersection(&self) -> Option<(usize, usize)> {
        let n = self.vertices.len();
        for i in 0..n {
            for j in (i + 1)..n {
                // Adjacent edges share exactly one vertex; skip those pairs.
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                if segments_touch(self.edge(i), self.edge(j)) {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// Even-odd test with half-open edges: points on a low (left/bottom)
    /// boundary count as inside, points on a high boundary do not.
    /// Coordinates are doubled so pixel centers stay integral.
    pub fn contains_doubled(&self, x2: i64, y2: i64) -> bool {
        let mut inside = false;
        for e in self.edges() {
            if e.orientation() != EdgeOrientation::Vertical {
                continue;
            }
            let (ylo, yhi) = if e.a.y < e.b.y {
                (e.a.y, e.b.y)
            } else {
                (e.b.y, e.a.y)
            };
            let (ylo2, yhi2) = (2 * ylo as i64, 2 * yhi as i64);
            let ex2 = 2 * e.a.x as i64;
            if ylo2 <= y2 && y2 < yhi2 && ex2 <= x2 {
                inside = !inside;
            }
        }
        inside
    }

    /// Strict interior test (boundary excluded), integer coordinates.
    pub fn contains_strict(&self, p: Point) -> bool {
        for e in self.edges() {
            if on_segment(p, e) {
                return false;
            }
        }
        self.contains_doubled(2 * p.x as i64, 2 * p.y as i64)
    }
}

fn on_segment(p: Point, e: Edge) -> bool {
    match e.orientation() {
        EdgeOrientation::Horizontal => {
            p.y == e.a.y && p.x >= e.a.x.min(e.b.x) && p.x <= e.a.x.max(e.b.x)
        }
        EdgeOrientation::Vertical => {
            p.x == e.a.x && p.y >= e.a.y.min(e.b.y) && p.y <= e.a.y.max(e.b.y)
        }
    }
}

/// True if the two axis-parallel closed segments share any point.
fn segments_touch(e1: Edge, e2: Edge) -> bool {
    let (x0a, x1a) = (e1.a.x.min(e1.b.x), e1.a.x.max(e1.b.x));
    let (y0a, y1a) = (e1.a.y.min(e1.b.y), e1.a.y.max(e1.b.y));
    let (x0b, x1b) = (e2.a.x.min(e2.b.x), e2.a.x.max(e2.b.x));
    let (y0b, y1b) = (e2.a.y.min(e2.b.y), e2.a.y.max(e2.b.y));
    x0a <= x1b && x0b <= x1a && y0a <= y1b && y0b <= y1a
}

/// True if the segments cross transversally with the crossing point strictly
/// interior to both (boundary contact does not count).
fn segments_cross_properly(e1: Edge, e2: Edge) -> bool {
    let (h, v) = match (e1.orientation(), e2.orientation()) {
        (EdgeOrientation::Horizontal, EdgeOrientation::Vertical) => (e1, e2),
        (EdgeOrientation::Vertical, EdgeOrientation::Horizontal) => (e2, e1),
        _ => return false,
    };
    let (hx0, hx1) = (h.a.x.min(h.b.x), h.a.x.max(h.b.x));
    let (vy0, vy1) = (v.a.y.min(v.b.y), v.a.y.max(v.b.y));
    hx0 < v.a.x && v.a.x < hx1 && vy0 < h.a.y && h.a.y < vy1
}

/// Exact shoelace area in square nanometers.
pub fn polygon_area(poly: &RectilinearPolygon) -> i64 {
    poly.signed_area2() / 2
}

fn point_segment_distance(p: Point, e: Edge) -> f64 {
    let (px, py) = (p.x as f64, p.y as f64);
    let (ax, ay) = (e.a.x as f64, e.a.y as f64);
    let (bx, by) = (e.b.x as f64, e.b.y as f64);
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

fn segment_distance(e1: Edge, e2: Edge) -> f64 {
    if segments_touch(e1, e2) {
        return 0.0;
    }
    point_segment_distance(e1.a, e2)
        .min(point_segment_distance(e1.b, e2))
        .min(point_segment_distance(e2.a, e1))
        .min(point_segment_distance(e2.b, e1))
}

/// True if polygon interiors intersect (shared boundary alone is not overlap).
pub fn polygons_overlap(a: &RectilinearPolygon, b: &RectilinearPolygon) -> bool {
    if !a.bounding_box().overlaps(&b.bounding_box()) {
        return false;
    }
    for ea in a.edges() {
        for eb in b.edges() {
            if segments_cross_properly(ea, eb) {
                return true;
            }
        }
    }
    a.vertices().iter().any(|&p| b.contains_strict(p))
        || b.vertices().iter().any(|&p| a.contains_strict(p))
}

/// Euclidean minimum distance between polygon boundaries; 0 if touching.
pub fn pair_spacing(
    a: &RectilinearPolygon,
    b: &RectilinearPolygon,
) -> Result<f64, GeometryError> {
    if polygons_overlap(a, b) {
        return Err(GeometryError::Overlap);
    }
    let mut best = f64::INFINITY;
    for ea in a.edges() {
        for eb in b.edges() {
            best = best.min(segment_distance(ea, eb));
            if best == 0.0 {
                return Ok(0.0);
            }
        }
    }
    Ok(best)
}

/// Translates edge `edge_index` perpendicular to itself by `dist` nm;
/// positive `dist` moves along the outward normal (area grows on rects).
/// Adjacent edges stretch or shrink; every other edge is unchanged.
/// Moves that collapse the polygon, self-intersect it, or push it outside
/// the clip window are rejected so the caller can resample.
pub fn move_edge(
    poly: &RectilinearPolygon,
    edge_index: usize,
    dist: i32,
) -> Result<RectilinearPolygon, GeometryError> {
    let n = poly.edge_count();
    if edge_index >= n {
        return Err(GeometryError::EdgeIndexOutOfRange {
            index: edge_index,
            edges: n,
        });
    }
    if dist == 0 {
        return Ok(poly.clone());
    }
    let mut vertices = poly.vertices().to_vec();
    let i = edge_index;
    let j = (i + 1) % n;
    let e = poly.edge(i);
    // Outward normal of a CCW boundary: rotate the edge direction -90 deg.
    match e.orientation() {
        EdgeOrientation::Horizontal => {
            let out = if e.b.x > e.a.x { -dist } else { dist };
            vertices[i].y += out;
            vertices[j].y += out;
        }
        EdgeOrientation::Vertical => {
            let out = if e.b.y > e.a.y { dist } else { -dist };
            vertices[i].x += out;
            vertices[j].x += out;
        }
    }
    let moved = match RectilinearPolygon::new(vertices) {
        Ok(p) => p,
        Err(GeometryError::SelfIntersection(_, _)) => {
            return Err(GeometryError::RejectedMove("self-intersection"))
        }
        Err(GeometryError::ZeroLengthEdge(_)) => {
            return Err(GeometryError::RejectedMove("collapsed edge"))
        }
        Err(GeometryError::NotCounterClockwise) => {
            return Err(GeometryError::RejectedMove("collapsed polygon"))
        }
        Err(e) => return Err(e),
    };
    let bb = moved.bounding_box();
    if bb.x0 < 0 || bb.y0 < 0 || bb.x1 > CLIP_SIZE_NM || bb.y1 > CLIP_SIZE_NM {
        return Err(GeometryError::RejectedMove("exits clip bounds"));
    }
    Ok(moved)
}

/// A 1110x1110 nm metal-layer window with pairwise non-overlapping polygons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutClip {
    pub id: String,
    pub polygons: Vec<RectilinearPolygon>,
    pub roi: Rect,
}

impl LayoutClip {
    pub fn new(id: impl Into<String>, polygons: Vec<RectilinearPolygon>) -> Self {
        LayoutClip {
            id: id.into(),
            polygons,
            roi: roi_rect(),
        }
    }

    pub fn empty(id: impl Into<String>) -> Self {
        LayoutClip::new(id, Vec::new())
    }

    pub fn with_polygon(&self, poly: RectilinearPolygon) -> Self {
        let mut polygons = self.polygons.clone();
        polygons.push(poly);
        LayoutClip {
            id: self.id.clone(),
            polygons,
            roi: self.roi,
        }
    }

    pub fn total_area(&self) -> i64 {
        self.polygons.iter().map(polygon_area).sum()
    }
}

/// Rasterizes a clip onto a square pixel grid. A cell is set iff its center
/// lies inside any polygon; boundary counts as inside on low edges.
pub fn rasterize(clip: &LayoutClip, pixel_nm: i32) -> Result<BinaryImage, GeometryError> {
    if pixel_nm <= 0 || CLIP_SIZE_NM % pixel_nm != 0 {
        return Err(GeometryError::BadPixelSize(pixel_nm, CLIP_SIZE_NM));
    }
    let n = (CLIP_SIZE_NM / pixel_nm) as usize;
    let mut img = BinaryImage::new(n, n);
    rasterize_into(&clip.polygons, pixel_nm, &mut img);
    Ok(img)
}

/// Scanline fill of `polygons` into `img`, pixel centers at (c + 0.5) * pixel_nm.
pub(crate) fn rasterize_into(polygons: &[RectilinearPolygon], pixel_nm: i32, img: &mut BinaryImage) {
    let p = pixel_nm as i64;
    let mut crossings: Vec<i32> = Vec::new();
    for poly in polygons {
        let bb = poly.bounding_box();
        // First row whose center y >= bb.y0 could matter; iterate the bbox rows.
        let r0 = (div_ceil(2 * bb.y0 as i64 - p, 2 * p)).max(0) as usize;
        for row in r0..img.height() {
            let cy2 = (2 * row as i64 + 1) * p;
            if cy2 >= 2 * bb.y1 as i64 {
                break;
            }
            crossings.clear();
            for e in poly.edges() {
                if e.orientation() != EdgeOrientation::Vertical {
                    continue;
                }
                let (ylo, yhi) = (e.a.y.min(e.b.y) as i64, e.a.y.max(e.b.y) as i64);
                if 2 * ylo <= cy2 && cy2 < 2 * yhi {
                    crossings.push(e.a.x);
                }
            }
            crossings.sort_unstable();
            for pair in crossings.chunks_exact(2) {
                let (xa, xb) = (pair[0] as i64, pair[1] as i64);
                // centers with xa <= (c + 0.5) * p < xb
                let c0 = div_ceil(2 * xa - p, 2 * p).max(0);
                let c1 = div_ceil(2 * xb - p, 2 * p).min(img.width() as i64);
                for c in c0..c1 {
                    img.set(c as usize, row, true);
                }
            }
        }
    }
}

fn div_ceil(a: i64, b: i64) -> i64 {
    debug_assert!(b > 0);
    if a >= 0 {
        (a + b - 1) / b
    } else {
        -((-a) / b)
    }
}
