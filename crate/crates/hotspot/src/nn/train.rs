//! Training recipe: Adam with reduce-LR-on-plateau and early stopping,
//! class-weighted cross-entropy, stratified validation split, one
//! checkpoint per epoch, recall-gated model selection.

use ndarray::{Array2, Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{backward, forward_cached, softmax, weighted_ce, ArchSpec, Model, NnError};
use crate::seed::child_seed;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    pub lr_reduce_factor: f64,
    pub lr_patience: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    /// Weight on hotspot-class loss terms; `None` derives
    /// clamp(round(N_nonhotspot / N_hotspot), 2, 22) from the data.
    pub class_weight: Option<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 1e-3,
            min_learning_rate: 1e-5,
            lr_reduce_factor: 0.3,
            lr_patience: 3,
            early_stop_patience: 10,
            max_epochs: 20,
            validation_fraction: 0.10,
            class_weight: None,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 1,
        }
    }
}

/// Reduce-on-plateau learning-rate schedule: after `patience` consecutive
/// epochs without validation-loss improvement the rate is multiplied by
/// `factor` and floored at `min_lr`, and the stagnation counter resets.
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    pub lr: f64,
    factor: f64,
    patience: usize,
    min_lr: f64,
    best: f64,
    wait: usize,
    pub reductions: usize,
}

impl PlateauSchedule {
    pub fn new(initial_lr: f64, factor: f64, patience: usize, min_lr: f64) -> Self {
        PlateauSchedule {
            lr: initial_lr,
            factor,
            patience,
            min_lr,
            best: f64::INFINITY,
            wait: 0,
            reductions: 0,
        }
    }

    /// Records one epoch's validation loss and returns the rate to use for
    /// the next epoch.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.reductions += 1;
                self.wait = 0;
            }
        }
        self.lr
    }
}

/// Stops training after `patience` consecutive epochs without
/// validation-loss improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    wait: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    /// Records one epoch's validation loss; true means stop now.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        self.wait >= self.patience
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValMetrics {
    pub accuracy: f64,
    pub hotspot_recall: f64,
    pub nonhotspot_recall: f64,
    pub hotspot_count: usize,
    pub nonhotspot_count: usize,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub epoch: usize,
    pub model: Model,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
    pub val: ValMetrics,
}

/// Adam optimizer; moment buffers mirror `Model::param_slices_mut` order.
struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(shapes: &[usize], beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(&mut self.v))
        {
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Stratified split: per class, a seeded shuffle then the last
/// `validation_fraction` of indices become validation.
fn stratified_split(
    labels: &[u8],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), NnError> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut seen = [false; 2];
    for class in 0..2u8 {
        let mut idx: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == class)
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            continue;
        }
        seen[class as usize] = true;
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, "split-class", class as u64));
        idx.shuffle(&mut rng);
        let n_val = ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len() - 1);
        let cut = idx.len() - n_val;
        train.extend_from_slice(&idx[..cut]);
        val.extend_from_slice(&idx[cut..]);
    }
    if !(seen[0] && seen[1]) {
        return Err(NnError::SingleClass);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

fn gather(x: &Array4<f64>, idx: &[usize]) -> Array4<f64> {
    let (_, c, h, w) = x.dim();
    let mut out = Array4::zeros((idx.len(), c, h, w));
    for (k, &i) in idx.iter().enumerate() {
        out.index_axis_mut(Axis(0), k).assign(&x.index_axis(Axis(0), i));
    }
    out
}

/// Evaluates loss and per-class metrics over a slice of the dataset, in
/// mini-batches to bound memory.
fn evaluate_split(
    model: &Model,
    x: &Array4<f64>,
    labels: &[u8],
    idx: &[usize],
    class_weight: f64,
    batch: usize,
) -> (f64, ValMetrics) {
    let mut loss_sum = 0.0;
    let mut correct = [0usize; 2];
    let mut total = [0usize; 2];
    for chunk in idx.chunks(batch) {
        let xb = gather(x, chunk);
        let yb: Vec<u8> = chunk.iter().map(|&i| labels[i]).collect();
        let (logits, _) = forward_cached(model, &xb);
        let (l, _) = weighted_ce(&logits, &yb, class_weight);
        loss_sum += l * yb.len() as f64;
        let p = softmax(&logits);
        for (r, &y) in p.rows().into_iter().zip(&yb) {
            // Ties break toward hotspot (class 1).
            let pred = if r[1] >= r[0] { 1u8 } else { 0u8 };
            total[y as usize] += 1;
            if pred == y {
                correct[y as usize] += 1;
            }
        }
    }
    let recall = |c: usize| {
        if total[c] == 0 {
            f64::NAN
        } else {
            correct[c] as f64 / total[c] as f64
        }
    };
    let metrics = ValMetrics {
        accuracy: (correct[0] + correct[1]) as f64 / idx.len().max(1) as f64,
        hotspot_recall: recall(1),
        nonhotspot_recall: recall(0),
        hotspot_count: total[1],
        nonhotspot_count: total[0],
    };
    (loss_sum / idx.len().max(1) as f64, metrics)
}

pub fn derive_class_weight(labels: &[u8]) -> f64 {
    let hs = labels.iter().filter(|&&y| y == 1).count();
    let nhs = labels.len() - hs;
    if hs == 0 {
        return 2.0;
    }
    ((nhs as f64 / hs as f64).round()).clamp(2.0, 22.0)
}

/// Trains an architecture on (features, labels); labels are 0 =
/// non-hotspot, 1 = hotspot. Returns one checkpoint per completed epoch.
pub fn train(
    arch: ArchSpec,
    x: &Array4<f64>,
    labels: &[u8],
    cfg: &TrainConfig,
) -> Result<Vec<Checkpoint>, NnError> {
    if x.dim().0 != labels.len() {
        return Err(NnError::Shape {
            expected: format!("{} labels", x.dim().0),
            got: format!("{}", labels.len()),
        });
    }
    let (train_idx, val_idx) = stratified_split(labels, cfg.validation_fraction, cfg.seed)?;
    let class_weight = cfg.class_weight.unwrap_or_else(|| derive_class_weight(labels));
    let mut model = Model::new(arch, child_seed(cfg.seed, "model-init", 0));
    let shapes: Vec<usize> = model.param_slices_mut().iter().map(|s| s.len()).collect();
    let mut adam = Adam::new(&shapes, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon);
    let mut schedule = PlateauSchedule::new(
        cfg.learning_rate,
        cfg.lr_reduce_factor,
        cfg.lr_patience,
        cfg.min_learning_rate,
    );
    let mut stopper = EarlyStopper::new(cfg.early_stop_patience);
    let mut checkpoints = Vec::new();
    for epoch in 0..cfg.max_epochs {
        let lr = schedule.lr;
        let mut order = train_idx.clone();
        let mut rng =
            ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, "epoch-shuffle", epoch as u64));
        order.shuffle(&mut rng);
        let mut train_loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = gather(x, chunk);
            let yb: Vec<u8> = chunk.iter().map(|&i| labels[i]).collect();
            let (logits, caches) = forward_cached(&model, &xb);
            let (loss, dlogits) = weighted_ce(&logits, &yb, class_weight);
            train_loss_sum += loss * yb.len() as f64;
            let (grads, _) = backward(&model, &xb, &caches, &dlogits);
            let mut params = model.param_slices_mut();
            adam.step(&mut params, &grads.tensors, lr);
        }
        let train_loss = train_loss_sum / train_idx.len() as f64;
        let (val_loss, val) =
            evaluate_split(&model, x, labels, &val_idx, class_weight, cfg.batch_size);
        checkpoints.push(Checkpoint {
            epoch,
            model: model.clone(),
            train_loss,
            val_loss,
            learning_rate: lr,
            val,
        });
        schedule.observe(val_loss);
        if stopper.observe(val_loss) {
            break;
        }
    }
    Ok(checkpoints)
}

/// Among checkpoints with hotspot validation recall >= 0.90, returns the
/// one with highest overall validation accuracy; if none clears the bar,
/// returns the highest-recall checkpoint with the degraded flag set.
pub fn select_model(checkpoints: &[Checkpoint]) -> Result<(&Checkpoint, bool), NnError> {
    if checkpoints.is_empty() {
        return Err(NnError::NoCandidates);
    }
    let qualified = checkpoints
        .iter()
        .filter(|c| c.val.hotspot_recall >= 0.90)
        .max_by(|a, b| {
            a.val
                .accuracy
                .total_cmp(&b.val.accuracy)
                .then(b.epoch.cmp(&a.epoch))
        });
    if let Some(c) = qualified {
        return Ok((c, false));
    }
    let fallback = checkpoints
        .iter()
        .max_by(|a, b| {
            let ra = if a.val.hotspot_recall.is_nan() { -1.0 } else { a.val.hotspot_recall };
            let rb = if b.val.hotspot_recall.is_nan() { -1.0 } else { b.val.hotspot_recall };
            ra.total_cmp(&rb).then(b.epoch.cmp(&a.epoch))
        })
        .unwrap();
    Ok((fallback, true))
}

/// Per-epoch training log as CSV.
pub fn training_log_csv(checkpoints: &[Checkpoint]) -> String {
    let mut out = String::from(
        "epoch,train_loss,val_loss,learning_rate,val_accuracy,val_hotspot_recall,val_nonhotspot_recall\n",
    );
    for c in checkpoints {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            c.epoch,
            c.train_loss,
            c.val_loss,
            c.learning_rate,
            c.val.accuracy,
            c.val.hotspot_recall,
            c.val.nonhotspot_recall
        ));
    }
    out
}

/// Class probabilities for a dataset in mini-batches; returns (N, 2).
pub fn predict(model: &Model, x: &Array4<f64>, batch: usize) -> Array2<f64> {
    let n = x.dim().0;
    let mut out = Array2::zeros((n, 2));
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let xb = gather(x, chunk);
        let (logits, _) = forward_cached(model, &xb);
        let p = softmax(&logits);
        for (k, &i) in chunk.iter().enumerate() {
            out.row_mut(i).assign(&p.row(k));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn mk(val: ValMetrics, epoch: usize) -> Checkpoint {
        Checkpoint {
            epoch,
            model: Model::new(ArchSpec::arch_a(), 1),
            train_loss: 0.0,
            val_loss: 0.0,
            learning_rate: 1e-3,
            val,
        }
    }

    fn vm(acc: f64, hs: f64) -> ValMetrics {
        ValMetrics {
            accuracy: acc,
            hotspot_recall: hs,
            nonhotspot_recall: 0.9,
            hotspot_count: 10,
            nonhotspot_count: 90,
        }
    }

    #[test]
    fn plateau_schedule_follows_table() {
        // lr after k reductions = max(0.001 * 0.3^k, 1e-5).
        let mut s = PlateauSchedule::new(1e-3, 0.3, 3, 1e-5);
        s.observe(1.0);
        // Three stagnant epochs trigger the first reduction.
        s.observe(1.0);
        s.observe(1.0);
        let lr = s.observe(1.0);
        assert!((lr - 3e-4).abs() < 1e-15);
        assert_eq!(s.reductions, 1);
        // Counter resets: two stagnant epochs alone do not reduce again.
        s.observe(1.0);
        let lr = s.observe(1.0);
        assert!((lr - 3e-4).abs() < 1e-15);
        let lr = s.observe(1.0);
        assert!((lr - 9e-5).abs() < 1e-15, "0.001 * 0.3^2 = 9e-5");
        // Repeated reductions floor at min_lr.
        for _ in 0..30 {
            s.observe(1.0);
        }
        assert!((s.lr - 1e-5).abs() < 1e-15);
        // An improvement resets the stagnation counter.
        let mut s = PlateauSchedule::new(1e-3, 0.3, 3, 1e-5);
        s.observe(1.0);
        s.observe(1.1);
        s.observe(1.2);
        s.observe(0.9);
        s.observe(1.0);
        let lr = s.observe(1.0);
        assert!((lr - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn early_stop_after_exactly_ten_stagnant_epochs() {
        let mut e = EarlyStopper::new(10);
        assert!(!e.observe(1.0));
        for k in 0..9 {
            assert!(!e.observe(1.0), "stagnant epoch {} must not stop", k + 1);
        }
        assert!(e.observe(1.0), "tenth stagnant epoch stops");
        // Improvement resets the counter.
        let mut e = EarlyStopper::new(10);
        e.observe(1.0);
        for _ in 0..9 {
            e.observe(1.0);
        }
        assert!(!e.observe(0.5));
        for k in 0..9 {
            assert!(!e.observe(0.5), "stagnant epoch {} after reset", k + 1);
        }
        assert!(e.observe(0.5));
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        let mut adam = Adam::new(&[3], 0.9, 0.999, 1e-8);
        let mut p = vec![0.5, -0.25, 1.0];
        let g = vec![vec![0.7, -0.01, 3.0]];
        let before = p.clone();
        {
            let mut views: Vec<&mut [f64]> = vec![&mut p];
            adam.step(&mut views, &g, 1e-3);
        }
        for i in 0..3 {
            let delta = p[i] - before[i];
            // First step: m-hat / sqrt(v-hat) = sign(g) up to epsilon.
            assert!((delta.abs() - 1e-3).abs() < 1e-6);
            assert_eq!(delta.signum(), -g[0][i].signum());
        }
    }

    #[test]
    fn select_model_applies_recall_gate() {
        let cks = vec![
            mk(vm(0.85, 0.91), 0),
            mk(vm(0.87, 0.88), 1),
            mk(vm(0.84, 0.93), 2),
        ];
        let (chosen, degraded) = select_model(&cks).unwrap();
        assert_eq!(chosen.epoch, 0);
        assert!(!degraded);
    }

    #[test]
    fn select_model_degraded_fallback() {
        let cks = vec![mk(vm(0.95, 0.50), 0), mk(vm(0.80, 0.70), 1)];
        let (chosen, degraded) = select_model(&cks).unwrap();
        assert_eq!(chosen.epoch, 1);
        assert!(degraded);
    }

    #[test]
    fn select_model_single_candidate_is_itself() {
        let cks = vec![mk(vm(0.5, 0.1), 0)];
        let (chosen, degraded) = select_model(&cks).unwrap();
        assert_eq!(chosen.epoch, 0);
        assert!(degraded);
        assert!(select_model(&[]).is_err());
    }

    #[test]
    fn stratified_split_is_deterministic_and_stratified() {
        let labels: Vec<u8> = (0..100).map(|i| u8::from(i % 10 == 0)).collect();
        let (t1, v1) = stratified_split(&labels, 0.10, 5).unwrap();
        let (t2, v2) = stratified_split(&labels, 0.10, 5).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(v1, v2);
        assert_eq!(t1.len() + v1.len(), 100);
        let hs_val = v1.iter().filter(|&&i| labels[i] == 1).count();
        assert_eq!(hs_val, 1, "10% of 10 hotspot samples");
        assert_eq!(v1.len(), 10);
        let (t3, _) = stratified_split(&labels, 0.10, 6).unwrap();
        assert_ne!(t1, t3, "different seed, different split");
    }

    #[test]
    fn single_class_data_rejected() {
        let labels = vec![0u8; 20];
        assert!(matches!(
            stratified_split(&labels, 0.10, 1),
            Err(NnError::SingleClass)
        ));
    }

    #[test]
    fn derive_class_weight_clamps() {
        let mut labels = vec![0u8; 100];
        labels.extend(vec![1u8; 10]);
        assert_eq!(derive_class_weight(&labels), 10.0);
        let mut labels = vec![0u8; 100];
        labels.push(1);
        assert_eq!(derive_class_weight(&labels), 22.0);
        let labels = vec![0u8, 1];
        assert_eq!(derive_class_weight(&labels), 2.0);
    }

    /// Tiny separable synthetic task: channel-0 mean determines the class.
    fn toy_data(n: usize, seed: u64) -> (Array4<f64>, Vec<u8>) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array4::zeros((n, 32, 10, 10));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let hot = u8::from(rng.random_range(0..5) == 0);
            for c in 0..32usize {
                for r in 0..10 {
                    for q in 0..10 {
                        let noise: f64 = rng.random_range(-0.3..0.3);
                        let sig = if hot == 1 && c == 0 { 1.0 } else { 0.0 };
                        x[[i, c, r, q]] = sig + noise;
                    }
                }
            }
            y.push(hot);
        }
        (x, y)
    }

    #[test]
    fn training_is_bit_deterministic() {
        let (x, y) = toy_data(60, 9);
        let cfg = TrainConfig {
            max_epochs: 2,
            ..TrainConfig::default()
        };
        let a = train(ArchSpec::arch_a(), &x, &y, &cfg).unwrap();
        let b = train(ArchSpec::arch_a(), &x, &y, &cfg).unwrap();
        assert_eq!(a.len(), b.len());
        let (la, lb) = (a.last().unwrap(), b.last().unwrap());
        assert_eq!(la.model, lb.model, "bit-identical final checkpoint");
        assert_eq!(la.val_loss.to_bits(), lb.val_loss.to_bits());
    }

    #[test]
    fn training_learns_separable_toy_task() {
        let (x, y) = toy_data(120, 3);
        let cfg = TrainConfig {
            max_epochs: 8,
            ..TrainConfig::default()
        };
        let cks = train(ArchSpec::arch_a(), &x, &y, &cfg).unwrap();
        assert!(!cks.is_empty() && cks.len() <= 8);
        let first = cks.first().unwrap().train_loss;
        let last = cks.last().unwrap().train_loss;
        assert!(last < first, "loss decreases: {first} -> {last}");
    }

    #[test]
    fn training_log_has_one_row_per_epoch() {
        let (x, y) = toy_data(40, 4);
        let cfg = TrainConfig {
            max_epochs: 2,
            ..TrainConfig::default()
        };
        let cks = train(ArchSpec::arch_a(), &x, &y, &cfg).unwrap();
        let log = training_log_csv(&cks);
        assert_eq!(log.lines().count(), cks.len() + 1);
        assert!(log.starts_with("epoch,train_loss,val_loss,learning_rate"));
    }
}
