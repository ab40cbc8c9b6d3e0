//! Binary images plus the morphology needed by the rule checker and the
//! litho surrogate: square-element erosion/dilation/opening and connected
//! component labeling.

use serde::{Deserialize, Serialize};

/// Row-major binary image; values are strictly 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize) -> Self {
        BinaryImage {
            width,
            height,
            bits: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn clear(&mut self) {
        self.bits.fill(0);
    }

    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }

    /// a AND NOT b, elementwise.
    pub fn and_not(&self, other: &BinaryImage) -> BinaryImage {
        assert_eq!(self.width, other.width);
        assert_eq!(self.height, other.height);
        BinaryImage {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a & !b & 1)
                .collect(),
        }
    }

    pub fn or_assign(&mut self, other: &BinaryImage) {
        assert_eq!(self.width, other.width);
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    /// Writes a binary 8-bit PGM (P5); set pixels map to 255.
    pub fn write_pgm<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let row: Vec<u8> = self.bits.iter().map(|&b| if b != 0 { 255 } else { 0 }).collect();
        w.write_all(&row)
    }
}

/// Erosion by a (2r+1)x(2r+1) square: a pixel survives iff every pixel of
/// the window is set. Pixels outside the image count as unset.
pub fn erode(img: &BinaryImage, radius: usize) -> BinaryImage {
    let r = radius as isize;
    separable_morph(img, -r, r, true)
}

/// Dilation by a (2r+1)x(2r+1) square.
pub fn dilate(img: &BinaryImage, radius: usize) -> BinaryImage {
    let r = radius as isize;
    separable_morph(img, -r, r, false)
}

/// Opening: erosion followed by dilation with the same (2r+1) square.
pub fn open(img: &BinaryImage, radius: usize) -> BinaryImage {
    open_square(img, 2 * radius + 1)
}

/// Opening by a k x k square element, k >= 1 of either parity.
/// Erosion anchors the window at its low corner; the dilation uses the
/// reflected window so the composition is the true opening.
pub fn open_square(img: &BinaryImage, k: usize) -> BinaryImage {
    assert!(k >= 1);
    let k = k as isize;
    let eroded = separable_morph(img, 0, k - 1, true);
    separable_morph(&eroded, -(k - 1), 0, false)
}

/// Separable square morphology with window [x + lo, x + hi] on each axis.
/// Pixels outside the image count as unset.
fn separable_morph(img: &BinaryImage, lo_off: isize, hi_off: isize, is_erode: bool) -> BinaryImage {
    if lo_off == 0 && hi_off == 0 {
        return img.clone();
    }
    let (w, h) = (img.width, img.height);
    let full_span = (hi_off - lo_off + 1) as u32;
    let mut tmp = BinaryImage::new(w, h);
    // Horizontal pass; prefix sums make each window test O(1).
    for y in 0..h {
        let row = &img.bits[y * w..(y + 1) * w];
        let mut pref = vec![0u32; w + 1];
        for x in 0..w {
            pref[x + 1] = pref[x] + row[x] as u32;
        }
        for x in 0..w as isize {
            let lo = (x + lo_off).max(0) as usize;
            let hi = (x + hi_off).min(w as isize - 1);
            let v = if hi < lo as isize {
                false
            } else {
                let hi = hi as usize;
                let ones = pref[hi + 1] - pref[lo];
                let span = (hi - lo + 1) as u32;
                if is_erode {
                    // A window clipped by the border holds out-of-image zeros.
                    ones == full_span && span == full_span
                } else {
                    ones > 0
                }
            };
            tmp.bits[y * w + x as usize] = v as u8;
        }
    }
    // Vertical pass.
    let mut out = BinaryImage::new(w, h);
    for x in 0..w {
        let mut pref = vec![0u32; h + 1];
        for y in 0..h {
            pref[y + 1] = pref[y] + tmp.bits[y * w + x] as u32;
        }
        for y in 0..h as isize {
            let lo = (y + lo_off).max(0) as usize;
            let hi = (y + hi_off).min(h as isize - 1);
            let v = if hi < lo as isize {
                false
            } else {
                let hi = hi as usize;
                let ones = pref[hi + 1] - pref[lo];
                let span = (hi - lo + 1) as u32;
                if is_erode {
                    ones == full_span && span == full_span
                } else {
                    ones > 0
                }
            };
            out.bits[y as usize * w + x] = v as u8;
        }
    }
    out
}

/// One 4-connected component of set pixels.
#[derive(Debug, Clone)]
pub struct Component {
    /// Pixel count.
    pub area: usize,
    /// Inclusive pixel bounding box (x0, y0, x1, y1).
    pub bbox: (usize, usize, usize, usize),
    pub pixels: Vec<(usize, usize)>,
}

/// 4-connected components in deterministic raster-scan order.
pub fn connected_components(img: &BinaryImage) -> Vec<Component> {
    let (w, h) = (img.width, img.height);
    let mut visited = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if img.bits[start] == 0 || visited[start] {
            continue;
        }
        let mut pixels = Vec::new();
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0usize, 0usize);
        visited[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            pixels.push((x, y));
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            let mut push = |j: usize| {
                if img.bits[j] != 0 && !visited[j] {
                    visited[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                push(i - 1);
            }
            if x + 1 < w {
                push(i + 1);
            }
            if y > 0 {
                push(i - w);
            }
            if y + 1 < h {
                push(i + w);
            }
        }
        pixels.sort_unstable_by_key(|&(x, y)| (y, x));
        out.push(Component {
            area: pixels.len(),
            bbox: (x0, y0, x1, y1),
            pixels,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img_from(rows: &[&str]) -> BinaryImage {
        let h = rows.len();
        let w = rows[0].len();
        let mut img = BinaryImage::new(w, h);
        for (y, row) in rows.iter().enumerate() {
            for (x, c) in row.chars().enumerate() {
                img.set(x, y, c == '#');
            }
        }
        img
    }

    #[test]
    fn erode_removes_thin_features() {
        let img = img_from(&[
            ".......",
            ".#####.",
            ".#####.",
            ".#####.",
            ".......",
        ]);
        let e = erode(&img, 1);
        // Only the center row of the interior survives a 3x3 erosion.
        assert_eq!(e.count_ones(), 3);
        assert!(e.get(2, 2) && e.get(3, 2) && e.get(4, 2));
    }

    #[test]
    fn open_is_identity_on_wide_bars() {
        let img = img_from(&[
            ".......",
            ".#####.",
            ".#####.",
            ".#####.",
            ".......",
        ]);
        assert_eq!(open(&img, 1), img);
    }

    #[test]
    fn open_erases_narrow_bars() {
        let img = img_from(&[
            ".......",
            ".#####.",
            ".......",
        ]);
        assert_eq!(open(&img, 1).count_ones(), 0);
    }

    #[test]
    fn open_square_even_element() {
        // A 2-wide bar survives a 2x2 opening but not a 3x3 one.
        let img = img_from(&[
            ".....",
            ".###.",
            ".###.",
            ".....",
        ]);
        assert_eq!(open_square(&img, 2), img);
        assert_eq!(open_square(&img, 3).count_ones(), 0);
    }

    #[test]
    fn open_square_odd_matches_radius_form() {
        let img = img_from(&[
            "......",
            ".####.",
            ".####.",
            ".####.",
            ".#....",
            "......",
        ]);
        assert_eq!(open_square(&img, 3), open(&img, 1));
    }

    #[test]
    fn dilate_grows_by_radius() {
        let mut img = BinaryImage::new(7, 7);
        img.set(3, 3, true);
        let d = dilate(&img, 2);
        assert_eq!(d.count_ones(), 25);
    }

    #[test]
    fn components_split_diagonals() {
        let img = img_from(&[
            "#..",
            ".#.",
            "..#",
        ]);
        // 4-connectivity: three separate components.
        assert_eq!(connected_components(&img).len(), 3);
    }

    #[test]
    fn component_bbox_and_area() {
        let img = img_from(&[
            "....",
            ".##.",
            ".##.",
            "....",
        ]);
        let cs = connected_components(&img);
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].area, 4);
        assert_eq!(cs[0].bbox, (1, 1, 2, 2));
    }
}
