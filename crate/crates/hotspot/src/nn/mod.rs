//! From-scratch CNN engine for the two detector architectures: 3x3
//! same-padded convolutions with ReLU, 2x2 floor max-pooling, dense
//! layers, and a softmax head trained with class-weighted cross-entropy.
//!
//! All math runs in f64 with fixed accumulation order, so runs are
//! bit-reproducible and finite-difference gradient checks are meaningful;
//! the on-disk container stores f32 (see `io`).

pub mod gradcheck;
pub mod io;
pub mod train;

use ndarray::{Array1, Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::{FeatureTensor, COEFFS, GRID};
use crate::seed::child_seed;

pub use io::{load_model, save_model};
pub use train::{
    select_model, train, Checkpoint, EarlyStopper, PlateauSchedule, TrainConfig, ValMetrics,
};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("training requires both classes; got a single-class dataset")]
    SingleClass,
    #[error("no candidate checkpoints to select from")]
    NoCandidates,
    #[error("model file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file format: {0}")]
    Format(String),
}

/// One layer of an architecture description.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// 3x3, stride 1, zero same-padding, ReLU.
    Conv { out_channels: usize },
    /// 2x2 max-pool, stride 2, floor mode.
    Pool,
    Flatten,
    DenseRelu { out: usize },
    DenseSoftmax { out: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub name: String,
    /// Input (channels, height, width).
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

impl ArchSpec {
    /// Architecture A: conv16, conv16, pool, conv32, conv32, pool,
    /// dense250, dense2 on 10x10x32 input.
    pub fn arch_a() -> ArchSpec {
        use LayerSpec::*;
        ArchSpec {
            name: "A".into(),
            input: (COEFFS, GRID, GRID),
            layers: vec![
                Conv { out_channels: 16 },
                Conv { out_channels: 16 },
                Pool,
                Conv { out_channels: 32 },
                Conv { out_channels: 32 },
                Pool,
                Flatten,
                DenseRelu { out: 250 },
                DenseSoftmax { out: 2 },
            ],
        }
    }

    /// Architecture B: four conv32, pool, four conv64, pool, dense250,
    /// dense2 on 10x10x32 input.
    pub fn arch_b() -> ArchSpec {
        use LayerSpec::*;
        let mut layers = Vec::new();
        for _ in 0..4 {
            layers.push(Conv { out_channels: 32 });
        }
        layers.push(Pool);
        for _ in 0..4 {
            layers.push(Conv { out_channels: 64 });
        }
        layers.push(Pool);
        layers.push(Flatten);
        layers.push(DenseRelu { out: 250 });
        layers.push(DenseSoftmax { out: 2 });
        ArchSpec {
            name: "B".into(),
            input: (COEFFS, GRID, GRID),
            layers,
        }
    }

    pub fn by_name(name: &str) -> Option<ArchSpec> {
        match name {
            "A" | "a" => Some(Self::arch_a()),
            "B" | "b" => Some(Self::arch_b()),
            _ => None,
        }
    }

    /// Shape chain through the network: (channels, h, w) after each layer;
    /// dense stages use (units, 1, 1).
    pub fn shape_chain(&self) -> Vec<(usize, usize, usize)> {
        let mut shapes = vec![self.input];
        let mut cur = self.input;
        for l in &self.layers {
            cur = match *l {
                LayerSpec::Conv { out_channels } => (out_channels, cur.1, cur.2),
                LayerSpec::Pool => (cur.0, cur.1 / 2, cur.2 / 2),
                LayerSpec::Flatten => (cur.0 * cur.1 * cur.2, 1, 1),
                LayerSpec::DenseRelu { out } | LayerSpec::DenseSoftmax { out } => (out, 1, 1),
            };
            shapes.push(cur);
        }
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub cin: usize,
    pub cout: usize,
    /// (cout, cin*9) row-major.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: Array2<f64>, // (out, in)
    pub b: Array1<f64>,
    pub relu: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    Pool,
    Flatten,
    Dense(DenseLayer),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: ArchSpec,
    pub layers: Vec<Layer>,
}

fn he_uniform(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

fn glorot_uniform(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

impl Model {
    /// Builds a freshly initialized model: He-uniform for ReLU layers,
    /// Glorot-uniform for the softmax layer, all seed-derived. Asserts the
    /// spatial shape chain at construction.
    pub fn new(arch: ArchSpec, seed: u64) -> Model {
        if arch.name == "A" || arch.name == "B" {
            let shapes = arch.shape_chain();
            // Forced by the detector architectures: 10x10 -> 5x5 -> 2x2
            // through the pools.
            let pool_shapes: Vec<(usize, usize)> = arch
                .layers
                .iter()
                .zip(&shapes[1..])
                .filter(|(l, _)| matches!(l, LayerSpec::Pool))
                .map(|(_, s)| (s.1, s.2))
                .collect();
            assert_eq!(pool_shapes, vec![(5, 5), (2, 2)], "shape chain audit");
        }
        let mut layers = Vec::new();
        let mut cur = arch.input;
        for (li, spec) in arch.layers.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, "init-layer", li as u64));
            match *spec {
                LayerSpec::Conv { out_channels } => {
                    let fan_in = cur.0 * 9;
                    let w = Array2::from_shape_vec(
                        (out_channels, fan_in),
                        he_uniform(&mut rng, fan_in, out_channels * fan_in),
                    )
                    .unwrap();
                    layers.push(Layer::Conv(ConvLayer {
                        cin: cur.0,
                        cout: out_channels,
                        w,
                        b: Array1::zeros(out_channels),
                    }));
                    cur = (out_channels, cur.1, cur.2);
                }
                LayerSpec::Pool => {
                    layers.push(Layer::Pool);
                    cur = (cur.0, cur.1 / 2, cur.2 / 2);
                }
                LayerSpec::Flatten => {
                    layers.push(Layer::Flatten);
                    cur = (cur.0 * cur.1 * cur.2, 1, 1);
                }
                LayerSpec::DenseRelu { out } => {
                    let w = Array2::from_shape_vec(
                        (out, cur.0),
                        he_uniform(&mut rng, cur.0, out * cur.0),
                    )
                    .unwrap();
                    layers.push(Layer::Dense(DenseLayer {
                        w,
                        b: Array1::zeros(out),
                        relu: true,
                    }));
                    cur = (out, 1, 1);
                }
                LayerSpec::DenseSoftmax { out } => {
                    let w = Array2::from_shape_vec(
                        (out, cur.0),
                        glorot_uniform(&mut rng, cur.0, out, out * cur.0),
                    )
                    .unwrap();
                    layers.push(Layer::Dense(DenseLayer {
                        w,
                        b: Array1::zeros(out),
                        relu: false,
                    }));
                    cur = (out, 1, 1);
                }
            }
        }
        Model { arch, layers }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => c.w.len() + c.b.len(),
                Layer::Dense(d) => d.w.len() + d.b.len(),
                _ => 0,
            })
            .sum()
    }

    /// Mutable flat views over every parameter tensor, in layer order
    /// (weights before biases). Order is the contract shared with `Grads`
    /// and the optimizer.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Conv(c) => {
                    out.push(c.w.as_slice_mut().unwrap());
                    out.push(c.b.as_slice_mut().unwrap());
                }
                Layer::Dense(d) => {
                    out.push(d.w.as_slice_mut().unwrap());
                    out.push(d.b.as_slice_mut().unwrap());
                }
                _ => {}
            }
        }
        out
    }
}

/// Activations flowing between layers.
#[derive(Debug, Clone)]
pub enum Feat {
    Conv(Array4<f64>), // (N, C, H, W)
    Flat(Array2<f64>), // (N, D)
}

/// Network input convention: coefficients are divided by this so a solid
/// block's DC maps to 1.0. Raw coefficients are O(100), which saturates
/// the softmax under the fixed training recipe.
pub const INPUT_SCALE: f64 = 111.0;

/// Converts feature tensors to a batch, (block_row, block_col, coeff) ->
/// channel-major (coeff, block_row, block_col), scaled by 1/INPUT_SCALE.
pub fn batch_from_features(tensors: &[&FeatureTensor]) -> Array4<f64> {
    let n = tensors.len();
    let mut x = Array4::zeros((n, COEFFS, GRID, GRID));
    for (i, t) in tensors.iter().enumerate() {
        for r in 0..GRID {
            for c in 0..GRID {
                for k in 0..COEFFS {
                    x[[i, k, r, c]] = t.get(r, c, k) as f64 / INPUT_SCALE;
                }
            }
        }
    }
    x
}

/// im2col for 3x3 stride-1 zero same-padding: output (cin*9, N*H*W).
fn im2col3(x: &Array4<f64>) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let mut cols = Array2::zeros((c * 9, n * h * w));
    for ci in 0..c {
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = ci * 9 + ky * 3 + kx;
                let mut col_row = cols.row_mut(row);
                let dy = ky as isize - 1;
                let dx = kx as isize - 1;
                for ni in 0..n {
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for xx in 0..w {
                            let sx = xx as isize + dx;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            col_row[(ni * h + y) * w + xx] = x[[ni, ci, sy as usize, sx as usize]];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Transpose of im2col: scatters (cin*9, N*H*W) gradients back to image
/// gradients (N, C, H, W).
fn col2im3(cols: &Array2<f64>, n: usize, c: usize, h: usize, w: usize) -> Array4<f64> {
    let mut dx = Array4::zeros((n, c, h, w));
    for ci in 0..c {
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = cols.row(ci * 9 + ky * 3 + kx);
                let dy = ky as isize - 1;
                let dxo = kx as isize - 1;
                for ni in 0..n {
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for xx in 0..w {
                            let sx = xx as isize + dxo;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            dx[[ni, ci, sy as usize, sx as usize]] += row[(ni * h + y) * w + xx];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Per-layer forward caches for backprop.
pub enum Cache {
    Conv {
        cols: Array2<f64>,
        /// Post-ReLU output (doubles as the ReLU mask: > 0).
        out: Array4<f64>,
    },
    Pool {
        in_shape: (usize, usize, usize, usize),
        /// Flat input index of each output element's argmax.
        argmax: Vec<usize>,
    },
    Flatten {
        in_shape: (usize, usize, usize, usize),
    },
    Dense {
        x: Array2<f64>,
        /// Post-activation output.
        out: Array2<f64>,
    },
}

fn conv_forward(layer: &ConvLayer, x: &Array4<f64>) -> (Array4<f64>, Array2<f64>) {
    let (n, _, h, w) = x.dim();
    let cols = im2col3(x);
    let y = layer.w.dot(&cols); // (cout, N*H*W)
    let mut out = Array4::zeros((n, layer.cout, h, w));
    for co in 0..layer.cout {
        let row = y.row(co);
        let b = layer.b[co];
        for ni in 0..n {
            for yy in 0..h {
                for xx in 0..w {
                    let v = row[(ni * h + yy) * w + xx] + b;
                    out[[ni, co, yy, xx]] = if v > 0.0 { v } else { 0.0 };
                }
            }
        }
    }
    (out, cols)
}

fn pool_forward(x: &Array4<f64>) -> (Array4<f64>, Vec<usize>) {
    let (n, c, h, w) = x.dim();
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Array4::zeros((n, c, ho, wo));
    let mut argmax = vec![0usize; n * c * ho * wo];
    let xs = x.as_slice().unwrap();
    let mut oi = 0;
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            for yy in 0..ho {
                for xx in 0..wo {
                    let mut best_idx = base + (2 * yy) * w + 2 * xx;
                    let mut best = xs[best_idx];
                    for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                        let idx = base + (2 * yy + dy) * w + 2 * xx + dx;
                        if xs[idx] > best {
                            best = xs[idx];
                            best_idx = idx;
                        }
                    }
                    out[[ni, ci, yy, xx]] = best;
                    argmax[oi] = best_idx;
                    oi += 1;
                }
            }
        }
    }
    (out, argmax)
}

fn dense_forward(layer: &DenseLayer, x: &Array2<f64>) -> Array2<f64> {
    let mut y = x.dot(&layer.w.t()); // (N, out)
    for mut row in y.rows_mut() {
        row += &layer.b;
    }
    if layer.relu {
        y.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
    }
    y
}

/// Full forward pass with caches; returns logits (N, 2).
pub fn forward_cached(model: &Model, x: &Array4<f64>) -> (Array2<f64>, Vec<Cache>) {
    let mut caches = Vec::with_capacity(model.layers.len());
    let mut feat = Feat::Conv(x.clone());
    for layer in &model.layers {
        feat = match (layer, feat) {
            (Layer::Conv(c), Feat::Conv(x)) => {
                let (out, cols) = conv_forward(c, &x);
                caches.push(Cache::Conv {
                    cols,
                    out: out.clone(),
                });
                Feat::Conv(out)
            }
            (Layer::Pool, Feat::Conv(x)) => {
                let in_shape = x.dim();
                let (out, argmax) = pool_forward(&x);
                caches.push(Cache::Pool { in_shape, argmax });
                Feat::Conv(out)
            }
            (Layer::Flatten, Feat::Conv(x)) => {
                let (n, c, h, w) = x.dim();
                caches.push(Cache::Flatten {
                    in_shape: (n, c, h, w),
                });
                Feat::Flat(x.into_shape_with_order((n, c * h * w)).unwrap())
            }
            (Layer::Dense(d), Feat::Flat(x)) => {
                let out = dense_forward(d, &x);
                caches.push(Cache::Dense {
                    x,
                    out: out.clone(),
                });
                Feat::Flat(out)
            }
            _ => unreachable!("layer/feature mismatch is prevented by ArchSpec"),
        };
    }
    match feat {
        Feat::Flat(logits) => (logits, caches),
        _ => unreachable!("network ends with a dense layer"),
    }
}

/// Inference: class probabilities (N, 2) and optionally the 250-unit
/// output of the first dense layer.
pub fn forward(
    model: &Model,
    x: &Array4<f64>,
    capture_fc1: bool,
) -> (Array2<f64>, Option<Array2<f64>>) {
    let (c, h, w) = model.arch.input;
    if x.dim().1 != c || x.dim().2 != h || x.dim().3 != w {
        panic!(
            "input shape {:?} does not match architecture input {:?}",
            x.dim(),
            model.arch.input
        );
    }
    let (logits, caches) = forward_cached(model, x);
    let fc1 = if capture_fc1 {
        model
            .layers
            .iter()
            .zip(&caches)
            .find_map(|(l, cch)| match (l, cch) {
                (Layer::Dense(d), Cache::Dense { out, .. }) if d.relu => Some(out.clone()),
                _ => None,
            })
    } else {
        None
    };
    (softmax(&logits), fc1)
}

pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    p
}

/// Per-layer parameter gradients, same order as `param_slices_mut`.
pub struct Grads {
    pub tensors: Vec<Vec<f64>>,
}

/// Backward pass from dLoss/dLogits; returns parameter gradients and, for
/// the gradient checks, dLoss/dInput.
pub fn backward(
    model: &Model,
    x: &Array4<f64>,
    caches: &[Cache],
    dlogits: &Array2<f64>,
) -> (Grads, Array4<f64>) {
    enum Delta {
        Conv(Array4<f64>),
        Flat(Array2<f64>),
    }
    let mut tensors_rev: Vec<Vec<f64>> = Vec::new();
    let mut delta = Delta::Flat(dlogits.clone());
    for (li, layer) in model.layers.iter().enumerate().rev() {
        let cache = &caches[li];
        delta = match (layer, cache, delta) {
            (Layer::Dense(d), Cache::Dense { x, out }, Delta::Flat(mut dy)) => {
                if d.relu {
                    ndarray::Zip::from(&mut dy).and(out).for_each(|g, &o| {
                        if o <= 0.0 {
                            *g = 0.0;
                        }
                    });
                }
                let dw = dy.t().dot(x); // (out, in)
                let db = dy.sum_axis(ndarray::Axis(0));
                let dx = dy.dot(&d.w); // (N, in)
                tensors_rev.push(db.to_vec());
                tensors_rev.push(dw.into_raw_vec_and_offset().0);
                Delta::Flat(dx)
            }
            (Layer::Flatten, Cache::Flatten { in_shape }, Delta::Flat(dy)) => {
                Delta::Conv(dy.into_shape_with_order(*in_shape).unwrap())
            }
            (Layer::Pool, Cache::Pool { in_shape, argmax }, Delta::Conv(dy)) => {
                let mut dx = Array4::zeros(*in_shape);
                let dxs = dx.as_slice_mut().unwrap();
                for (g, &idx) in dy.as_slice().unwrap().iter().zip(argmax) {
                    dxs[idx] += g;
                }
                Delta::Conv(dx)
            }
            (Layer::Conv(c), Cache::Conv { cols, out }, Delta::Conv(mut dy)) => {
                ndarray::Zip::from(&mut dy).and(out).for_each(|g, &o| {
                    if o <= 0.0 {
                        *g = 0.0;
                    }
                });
                let (n, _, h, w) = dy.dim();
                // (cout, N*H*W) view of dy.
                let mut dy_mat = Array2::zeros((c.cout, n * h * w));
                for ni in 0..n {
                    for co in 0..c.cout {
                        for yy in 0..h {
                            for xx in 0..w {
                                dy_mat[[co, (ni * h + yy) * w + xx]] = dy[[ni, co, yy, xx]];
                            }
                        }
                    }
                }
                let dw = dy_mat.dot(&cols.t()); // (cout, cin*9)
                let db = dy_mat.sum_axis(ndarray::Axis(1));
                let dcols = c.w.t().dot(&dy_mat); // (cin*9, N*H*W)
                tensors_rev.push(db.to_vec());
                tensors_rev.push(dw.into_raw_vec_and_offset().0);
                Delta::Conv(col2im3(&dcols, n, c.cin, h, w))
            }
            _ => unreachable!("layer/cache mismatch"),
        };
    }
    tensors_rev.reverse();
    let dx = match delta {
        Delta::Conv(d) => d,
        Delta::Flat(_) => {
            // Architectures here always start with a conv layer.
            Array4::zeros(x.dim())
        }
    };
    (Grads { tensors: tensors_rev }, dx)
}

/// Class-weighted softmax cross-entropy. `labels` are 0 (non-hotspot) or
/// 1 (hotspot); hotspot terms are scaled by `class_weight`. Loss is the
/// batch mean of weighted per-sample cross-entropies; the returned
/// gradient is dLoss/dLogits = w_i (p_i - y_i) / N.
pub fn weighted_ce(
    logits: &Array2<f64>,
    labels: &[u8],
    class_weight: f64,
) -> (f64, Array2<f64>) {
    let n = labels.len();
    assert_eq!(logits.dim().0, n);
    let p = softmax(logits);
    let mut dlogits = p.clone();
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let w = if y == 1 { class_weight } else { 1.0 };
        let py = p[[i, y as usize]].max(1e-300);
        loss += -w * py.ln();
        dlogits[[i, y as usize]] -= 1.0;
        for k in 0..2 {
            dlogits[[i, k]] *= w / n as f64;
        }
    }
    (loss / n as f64, dlogits)
}
