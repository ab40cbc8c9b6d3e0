//! CNN input preprocessing: 1 nm binary rendering and block-DCT feature
//! extraction to 10x10x32 tensors, plus the on-disk feature cache.
//!
//! Each 1110x1110 image tiles into a 10x10 grid of 111x111 blocks; per
//! block the orthonormal 2-D DCT-II is computed and the first 32
//! coefficients in zig-zag order are kept. Only frequencies u,v <= 7 can
//! appear in that prefix, so the hot path contracts with an 8x111 partial
//! basis instead of the full transform.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::geometry::{rasterize, LayoutClip};
use crate::raster::BinaryImage;

pub const IMAGE_SIZE: usize = 1110;
pub const BLOCK: usize = 111;
pub const GRID: usize = 10;
pub const COEFFS: usize = 32;
/// Highest (u, v) index reachable by the 32-entry zig-zag prefix.
const MAX_FREQ: usize = 8;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("expected a {IMAGE_SIZE}x{IMAGE_SIZE} image, got {0}x{1}")]
    BadDimensions(usize, usize),
    #[error("feature cache i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("feature cache format: {0}")]
    Format(String),
}

/// 10x10x32 block-DCT features, indexed (block_row, block_col, coeff).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    values: Vec<f32>,
}

impl FeatureTensor {
    pub const LEN: usize = GRID * GRID * COEFFS;

    pub fn zeros() -> Self {
        FeatureTensor {
            values: vec![0.0; Self::LEN],
        }
    }

    pub fn from_values(values: Vec<f32>) -> Option<Self> {
        (values.len() == Self::LEN).then_some(FeatureTensor { values })
    }

    #[inline]
    pub fn get(&self, block_row: usize, block_col: usize, coeff: usize) -> f32 {
        self.values[(block_row * GRID + block_col) * COEFFS + coeff]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Renders a clip at 1 nm/pixel; metal = 1, empty = 0.
pub fn clip_to_image(clip: &LayoutClip) -> BinaryImage {
    rasterize(clip, 1).expect("1 nm divides the clip size")
}

/// Zig-zag (row, col) traversal order of an n x n matrix.
fn zigzag(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * n);
    for s in 0..2 * n - 1 {
        if s % 2 == 0 {
            // Even anti-diagonal: walk from high row to low row.
            let r0 = s.min(n - 1);
            for r in (s.saturating_sub(n - 1)..=r0).rev() {
                out.push((r, s - r));
            }
        } else {
            for r in s.saturating_sub(n - 1)..=s.min(n - 1) {
                out.push((r, s - r));
            }
        }
    }
    out
}

/// Orthonormal DCT-II basis rows 0..rows for length n: b[u][i] =
/// alpha(u) cos(pi (2i+1) u / 2n).
fn dct_basis(rows: usize, n: usize) -> Vec<f64> {
    let mut b = vec![0.0f64; rows * n];
    for u in 0..rows {
        let alpha = if u == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            b[u * n + i] =
                alpha * (std::f64::consts::PI * (2 * i + 1) as f64 * u as f64 / (2 * n) as f64).cos();
        }
    }
    b
}

/// Extracts the 10x10x32 feature tensor from a 1110x1110 binary image.
pub fn dct_features(img: &BinaryImage) -> Result<FeatureTensor, FeatureError> {
    if img.width() != IMAGE_SIZE || img.height() != IMAGE_SIZE {
        return Err(FeatureError::BadDimensions(img.width(), img.height()));
    }
    let field: Vec<f64> = img.bits().iter().map(|&b| b as f64).collect();
    Ok(dct_features_field(&field))
}

/// Same transform over a real-valued 1110x1110 field (row-major).
pub fn dct_features_field(field: &[f64]) -> FeatureTensor {
    assert_eq!(field.len(), IMAGE_SIZE * IMAGE_SIZE);
    let basis = dct_basis(MAX_FREQ, BLOCK);
    let order: Vec<(usize, usize)> = zigzag(BLOCK).into_iter().take(COEFFS).collect();
    let mut values = vec![0.0f32; FeatureTensor::LEN];
    // tmp[u][j] = sum_i basis[u][i] * block[i][j]
    let mut tmp = [0.0f64; MAX_FREQ * BLOCK];
    for br in 0..GRID {
        for bc in 0..GRID {
            let ox = bc * BLOCK;
            let oy = br * BLOCK;
            for u in 0..MAX_FREQ {
                for j in 0..BLOCK {
                    tmp[u * BLOCK + j] = 0.0;
                }
                for i in 0..BLOCK {
                    let k = basis[u * BLOCK + i];
                    let row = &field[(oy + i) * IMAGE_SIZE + ox..(oy + i) * IMAGE_SIZE + ox + BLOCK];
                    let dst = &mut tmp[u * BLOCK..(u + 1) * BLOCK];
                    for (d, &s) in dst.iter_mut().zip(row) {
                        *d += k * s;
                    }
                }
            }
            for (ci, &(u, v)) in order.iter().enumerate() {
                let mut acc = 0.0f64;
                for j in 0..BLOCK {
                    acc += tmp[u * BLOCK + j] * basis[v * BLOCK + j];
                }
                values[(br * GRID + bc) * COEFFS + ci] = acc as f32;
            }
        }
    }
    FeatureTensor { values }
}

const CACHE_MAGIC: &[u8; 4] = b"HSFC";
const CACHE_VERSION: u32 = 1;

/// Writes tensors in manifest order: magic, version, (count, 10, 10, 32)
/// as u32 LE, then row-major f32 LE values per clip.
pub fn write_feature_cache(path: &Path, tensors: &[FeatureTensor]) -> Result<(), FeatureError> {
    let mut buf = Vec::with_capacity(24 + tensors.len() * FeatureTensor::LEN * 4);
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    for dim in [tensors.len() as u32, GRID as u32, GRID as u32, COEFFS as u32] {
        buf.extend_from_slice(&dim.to_le_bytes());
    }
    for t in tensors {
        for v in &t.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_feature_cache(path: &Path) -> Result<Vec<FeatureTensor>, FeatureError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 24 {
        return Err(FeatureError::Format("truncated header".into()));
    }
    if &bytes[0..4] != CACHE_MAGIC {
        return Err(FeatureError::Format("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if u32_at(4) != CACHE_VERSION {
        return Err(FeatureError::Format(format!("unsupported version {}", u32_at(4))));
    }
    let count = u32_at(8) as usize;
    let dims = (u32_at(12) as usize, u32_at(16) as usize, u32_at(20) as usize);
    if dims != (GRID, GRID, COEFFS) {
        return Err(FeatureError::Format(format!("unexpected dims {dims:?}")));
    }
    let expected = 24 + count * FeatureTensor::LEN * 4;
    if bytes.len() != expected {
        return Err(FeatureError::Format(format!(
            "expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    let mut o = 24;
    for _ in 0..count {
        let mut values = Vec::with_capacity(FeatureTensor::LEN);
        for _ in 0..FeatureTensor::LEN {
            values.push(f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()));
            o += 4;
        }
        tensors.push(FeatureTensor { values });
    }
    Ok(tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Full orthonormal 2-D DCT-II of one block; test oracle only.
    fn full_dct(block: &[f64]) -> Vec<f64> {
        let b = dct_basis(BLOCK, BLOCK);
        let mut tmp = vec![0.0f64; BLOCK * BLOCK];
        for u in 0..BLOCK {
            for j in 0..BLOCK {
                let mut acc = 0.0;
                for i in 0..BLOCK {
                    acc += b[u * BLOCK + i] * block[i * BLOCK + j];
                }
                tmp[u * BLOCK + j] = acc;
            }
        }
        let mut out = vec![0.0f64; BLOCK * BLOCK];
        for u in 0..BLOCK {
            for v in 0..BLOCK {
                let mut acc = 0.0;
                for j in 0..BLOCK {
                    acc += tmp[u * BLOCK + j] * b[v * BLOCK + j];
                }
                out[u * BLOCK + v] = acc;
            }
        }
        out
    }

    fn inverse_full_dct(coeffs: &[f64]) -> Vec<f64> {
        // Orthonormal basis: inverse = transpose contraction.
        let b = dct_basis(BLOCK, BLOCK);
        let mut tmp = vec![0.0f64; BLOCK * BLOCK];
        for i in 0..BLOCK {
            for v in 0..BLOCK {
                let mut acc = 0.0;
                for u in 0..BLOCK {
                    acc += b[u * BLOCK + i] * coeffs[u * BLOCK + v];
                }
                tmp[i * BLOCK + v] = acc;
            }
        }
        let mut out = vec![0.0f64; BLOCK * BLOCK];
        for i in 0..BLOCK {
            for j in 0..BLOCK {
                let mut acc = 0.0;
                for v in 0..BLOCK {
                    acc += tmp[i * BLOCK + v] * b[v * BLOCK + j];
                }
                out[i * BLOCK + j] = acc;
            }
        }
        out
    }

    fn random_block(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..BLOCK * BLOCK).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn zigzag_prefix_matches_jpeg_order() {
        let z = zigzag(BLOCK);
        assert_eq!(
            &z[..10],
            &[(0, 0), (0, 1), (1, 0), (2, 0), (1, 1), (0, 2), (0, 3), (1, 2), (2, 1), (3, 0)]
        );
        assert_eq!(z.len(), BLOCK * BLOCK);
        // The 32-entry prefix stays within u,v < 8.
        assert!(z[..COEFFS].iter().all(|&(u, v)| u < MAX_FREQ && v < MAX_FREQ));
    }

    #[test]
    fn full_roundtrip_within_1e9() {
        let block = random_block(1);
        let coeffs = full_dct(&block);
        let back = inverse_full_dct(&coeffs);
        let max_err = block
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-9, "round-trip max-abs {max_err}");
    }

    #[test]
    fn parseval_holds_per_block() {
        let block = random_block(2);
        let coeffs = full_dct(&block);
        let pix: f64 = block.iter().map(|v| v * v).sum();
        let freq: f64 = coeffs.iter().map(|v| v * v).sum();
        assert!((pix - freq).abs() < 1e-9, "Parseval gap {}", pix - freq);
    }

    #[test]
    fn constant_block_dc_is_111() {
        let mut img = BinaryImage::new(IMAGE_SIZE, IMAGE_SIZE);
        for y in 0..BLOCK {
            for x in 0..BLOCK {
                img.set(x, y, true);
            }
        }
        let t = dct_features(&img).unwrap();
        assert!((t.get(0, 0, 0) as f64 - 111.0).abs() < 1e-9);
        for c in 1..COEFFS {
            assert!((t.get(0, 0, c) as f64).abs() < 1e-9);
        }
        // Every other block is empty.
        assert_eq!(t.get(3, 7, 0), 0.0);
    }

    #[test]
    fn partial_matches_full_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut field = vec![0.0f64; IMAGE_SIZE * IMAGE_SIZE];
        for v in field.iter_mut() {
            *v = rng.random::<f64>();
        }
        let t = dct_features_field(&field);
        let order: Vec<(usize, usize)> = zigzag(BLOCK).into_iter().take(COEFFS).collect();
        for &(br, bc) in &[(0usize, 0usize), (4, 9), (9, 9)] {
            let mut block = vec![0.0f64; BLOCK * BLOCK];
            for i in 0..BLOCK {
                for j in 0..BLOCK {
                    block[i * BLOCK + j] = field[(br * BLOCK + i) * IMAGE_SIZE + bc * BLOCK + j];
                }
            }
            let full = full_dct(&block);
            for (ci, &(u, v)) in order.iter().enumerate() {
                let want = full[u * BLOCK + v];
                let got = t.get(br, bc, ci) as f64;
                assert!(
                    (want - got).abs() < 1e-5,
                    "block ({br},{bc}) coeff {ci}: {want} vs {got}"
                );
            }
        }
    }

    #[test]
    fn linearity_on_real_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let field: Vec<f64> = (0..IMAGE_SIZE * IMAGE_SIZE)
            .map(|_| rng.random::<f64>())
            .collect();
        let scaled: Vec<f64> = field.iter().map(|v| 2.5 * v).collect();
        let a = dct_features_field(&field);
        let b = dct_features_field(&scaled);
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((2.5 * x - y).abs() < 1e-3, "{x} {y}");
        }
    }

    #[test]
    fn empty_clip_is_all_zero() {
        let img = clip_to_image(&LayoutClip::empty("e"));
        assert_eq!(img.count_ones(), 0);
        let t = dct_features(&img).unwrap();
        assert!(t.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn image_dimensions_and_pixel_count() {
        use crate::geometry::{Rect, RectilinearPolygon};
        let clip = LayoutClip::new(
            "c",
            vec![RectilinearPolygon::rect(Rect::new(100, 200, 300, 260))],
        );
        let img = clip_to_image(&clip);
        assert_eq!((img.width(), img.height()), (IMAGE_SIZE, IMAGE_SIZE));
        assert_eq!(img.count_ones(), 200 * 60);
    }

    #[test]
    fn wrong_size_rejected() {
        let img = BinaryImage::new(100, 100);
        assert!(matches!(
            dct_features(&img),
            Err(FeatureError::BadDimensions(100, 100))
        ));
    }

    #[test]
    fn energy_compaction_on_layout_images() {
        use crate::synthesis::{generate_corpus, CorpusParams};
        let corpus = generate_corpus(&CorpusParams {
            clip_count: 10,
            seed: 55,
            ..CorpusParams::default()
        });
        let mut ratios = Vec::new();
        for clip in &corpus {
            let img = clip_to_image(clip);
            let t = dct_features(&img).unwrap();
            let kept: f64 = t.values().iter().map(|&v| (v as f64) * (v as f64)).sum();
            // Binary image: total energy = set pixel count (Parseval).
            let total = img.count_ones() as f64;
            if total > 0.0 {
                ratios.push(kept / total);
            }
        }
        let avg = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!(avg >= 0.90, "average kept energy {avg}");
    }

    #[test]
    fn cache_roundtrip_and_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let mut t = FeatureTensor::zeros();
        t.values[0] = 1.5;
        t.values[FeatureTensor::LEN - 1] = -2.25;
        let tensors = vec![t, FeatureTensor::zeros()];
        write_feature_cache(&path, &tensors).unwrap();
        assert_eq!(read_feature_cache(&path).unwrap(), tensors);
        // Rewrite is byte-identical.
        let bytes = std::fs::read(&path).unwrap();
        write_feature_cache(&path, &tensors).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
        // Truncation is a format error.
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(
            read_feature_cache(&path),
            Err(FeatureError::Format(_))
        ));
        // Bad magic.
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            read_feature_cache(&path),
            Err(FeatureError::Format(_))
        ));
    }
}
