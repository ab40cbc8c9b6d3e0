//! Metrics and reports: four-slice confusion matrices, attack success
//! rate (ASR), relative ASR against the unaugmented baseline, the
//! augmentation-sweep table, and penultimate-layer activation export.

use ndarray::Array2;
use thiserror::Error;

use crate::features::FeatureTensor;
use crate::nn::train::predict;
use crate::nn::{batch_from_features, forward, Model};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("clean {0} slice is empty; evaluation requires both clean slices")]
    EmptyCleanSlice(&'static str),
    #[error("baseline ASR is zero; relative ASR is undefined")]
    ZeroBaseline,
    #[error("sweep requires a level-0 baseline report")]
    MissingBaseline,
    #[error("duplicate augmentation level {0} in sweep input")]
    DuplicateLevel(u32),
    #[error("unknown activation layer {0:?}; only \"fc1\" is exported")]
    UnknownLayer(String),
    #[error("baseline report has no measurable ASR (empty poisoned-hotspot slice)")]
    BaselineUnmeasured,
}

/// Test-set slice identity: clean vs trigger-poisoned, crossed with the
/// true label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceTag {
    CleanNonHotspot,
    CleanHotspot,
    PoisonedNonHotspot,
    PoisonedHotspot,
}

impl SliceTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SliceTag::CleanNonHotspot => "clean-nonhotspot",
            SliceTag::CleanHotspot => "clean-hotspot",
            SliceTag::PoisonedNonHotspot => "poisoned-nonhotspot",
            SliceTag::PoisonedHotspot => "poisoned-hotspot",
        }
    }
}

/// 2x2 confusion matrix: rows are true condition (NonHotspot, Hotspot),
/// columns predicted class. Fractions are stored alongside counts; empty
/// rows carry zero fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 2]; 2],
    pub fractions: [[f64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[usize; 2]; 2]) -> ConfusionMatrix {
        let mut fractions = [[0.0; 2]; 2];
        for r in 0..2 {
            let total = counts[r][0] + counts[r][1];
            if total > 0 {
                for c in 0..2 {
                    fractions[r][c] = counts[r][c] as f64 / total as f64;
                }
            }
        }
        ConfusionMatrix { counts, fractions }
    }

    /// Per-class accuracy = diagonal fraction; NaN for an empty row.
    pub fn class_accuracy(&self, class: usize) -> f64 {
        let total = self.counts[class][0] + self.counts[class][1];
        if total == 0 {
            f64::NAN
        } else {
            self.counts[class][class] as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub model_id: String,
    pub augmentation_level: u32,
    /// Confusion over the clean slices (rows NonHotspot, Hotspot).
    pub clean: ConfusionMatrix,
    /// Confusion over the trigger-poisoned slices.
    pub poisoned: ConfusionMatrix,
    /// ASR = 1 - accuracy on the poisoned-hotspot slice; None when that
    /// slice is empty.
    pub asr: Option<f64>,
    pub poisoned_hotspot_empty: bool,
    /// Filled by `with_baseline` / the sweep; None until normalized.
    pub r_asr: Option<f64>,
}

/// Argmax with ties resolved toward Hotspot: for a safety detector the
/// deterministic tie-break must not hide a hotspot.
fn predicted_class(p_nonhotspot: f64, p_hotspot: f64) -> usize {
    usize::from(p_hotspot >= p_nonhotspot)
}

fn count_slice(model: &Model, slice: &[&FeatureTensor]) -> [usize; 2] {
    if slice.is_empty() {
        return [0, 0];
    }
    let x = batch_from_features(slice);
    let p = predict(model, &x, 64);
    let mut counts = [0usize; 2];
    for row in p.rows() {
        counts[predicted_class(row[0], row[1])] += 1;
    }
    counts
}

/// Evaluates a model over the four test slices. Clean slices must be
/// non-empty; an empty poisoned-hotspot slice is flagged and leaves the
/// ASR unmeasured.
pub fn evaluate(
    model: &Model,
    model_id: &str,
    augmentation_level: u32,
    clean_nonhotspot: &[&FeatureTensor],
    clean_hotspot: &[&FeatureTensor],
    poisoned_nonhotspot: &[&FeatureTensor],
    poisoned_hotspot: &[&FeatureTensor],
) -> Result<EvalReport, EvalError> {
    if clean_nonhotspot.is_empty() {
        return Err(EvalError::EmptyCleanSlice("non-hotspot"));
    }
    if clean_hotspot.is_empty() {
        return Err(EvalError::EmptyCleanSlice("hotspot"));
    }
    let clean = ConfusionMatrix::from_counts([
        count_slice(model, clean_nonhotspot),
        count_slice(model, clean_hotspot),
    ]);
    let poisoned_hs_counts = count_slice(model, poisoned_hotspot);
    let poisoned = ConfusionMatrix::from_counts([
        count_slice(model, poisoned_nonhotspot),
        poisoned_hs_counts,
    ]);
    let poisoned_hotspot_empty = poisoned_hotspot.is_empty();
    let asr = if poisoned_hotspot_empty {
        None
    } else {
        // Definition: fraction of true-hotspot poisoned clips the model
        // calls non-hotspot, i.e. 1 - accuracy on that slice.
        Some(poisoned_hs_counts[0] as f64 / poisoned_hotspot.len() as f64)
    };
    Ok(EvalReport {
        model_id: model_id.to_string(),
        augmentation_level,
        clean,
        poisoned,
        asr,
        poisoned_hotspot_empty,
        r_asr: None,
    })
}

/// ASR normalized by the unaugmented-baseline ASR.
pub fn relative_asr(asr: f64, baseline_asr: f64) -> Result<f64, EvalError> {
    if baseline_asr <= 0.0 {
        return Err(EvalError::ZeroBaseline);
    }
    Ok(asr / baseline_asr)
}

/// CSV of first-dense-layer activations, one row per clip in input
/// order: clip_id, slice tag, then the 250 unit values.
pub fn export_activations(
    model: &Model,
    rows: &[(String, SliceTag, &FeatureTensor)],
    layer: &str,
) -> Result<String, EvalError> {
    if layer != "fc1" {
        return Err(EvalError::UnknownLayer(layer.to_string()));
    }
    let width = match model.arch.shape_chain()[..] {
        [.., (units, 1, 1), _] => units,
        _ => 250,
    };
    let mut out = String::from("clip_id,slice");
    for i in 0..width {
        out.push_str(&format!(",a{i:03}"));
    }
    out.push('\n');
    for chunk in rows.chunks(64) {
        let tensors: Vec<&FeatureTensor> = chunk.iter().map(|(_, _, t)| *t).collect();
        let x = batch_from_features(&tensors);
        let (_, fc1) = forward(model, &x, true);
        let fc1: Array2<f64> = fc1.expect("both architectures have an fc1 layer");
        for (k, (clip_id, tag, _)) in chunk.iter().enumerate() {
            out.push_str(clip_id);
            out.push(',');
            out.push_str(tag.as_str());
            for v in fc1.row(k) {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// Sweep table across augmentation levels as CSV, sorted ascending by
/// level. Requires a level-0 baseline with measurable nonzero ASR;
/// R-ASR is each level's ASR over the baseline's.
pub fn sweep_report(reports: &[EvalReport], config_digest: &str) -> Result<String, EvalError> {
    let mut sorted: Vec<&EvalReport> = reports.iter().collect();
    sorted.sort_by_key(|r| r.augmentation_level);
    for pair in sorted.windows(2) {
        if pair[0].augmentation_level == pair[1].augmentation_level {
            return Err(EvalError::DuplicateLevel(pair[0].augmentation_level));
        }
    }
    let baseline = sorted
        .iter()
        .find(|r| r.augmentation_level == 0)
        .ok_or(EvalError::MissingBaseline)?;
    let baseline_asr = baseline.asr.ok_or(EvalError::BaselineUnmeasured)?;
    if baseline_asr <= 0.0 {
        return Err(EvalError::ZeroBaseline);
    }
    let mut out = format!("# config_digest={config_digest}\n");
    out.push_str(
        "level,model_id,clean_nonhotspot_acc,clean_hotspot_acc,poisoned_nonhotspot_acc,poisoned_hotspot_acc,asr,r_asr\n",
    );
    let fmt = |v: f64| {
        if v.is_nan() {
            String::from("")
        } else {
            format!("{v:.4}")
        }
    };
    for r in &sorted {
        let (asr_s, rasr_s) = match r.asr {
            Some(a) => (format!("{a:.4}"), format!("{:.4}", a / baseline_asr)),
            None => (String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.augmentation_level,
            r.model_id,
            fmt(r.clean.class_accuracy(0)),
            fmt(r.clean.class_accuracy(1)),
            fmt(r.poisoned.class_accuracy(0)),
            fmt(r.poisoned.class_accuracy(1)),
            asr_s,
            rasr_s,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ArchSpec;

    fn tensor(seed: u64) -> FeatureTensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        FeatureTensor::from_values(
            (0..crate::features::FeatureTensor::LEN)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect(),
        )
        .unwrap()
    }

    fn report(level: u32, asr: Option<f64>) -> EvalReport {
        EvalReport {
            model_id: format!("m{level}"),
            augmentation_level: level,
            clean: ConfusionMatrix::from_counts([[80, 20], [10, 90]]),
            poisoned: ConfusionMatrix::from_counts([[70, 30], [40, 60]]),
            asr,
            poisoned_hotspot_empty: asr.is_none(),
            r_asr: None,
        }
    }

    #[test]
    fn confusion_rows_sum_to_one() {
        let m = ConfusionMatrix::from_counts([[7, 3], [1, 9]]);
        for r in 0..2 {
            let s: f64 = m.fractions[r].iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            // Fractions recomputed from counts match stored fractions.
            let total = (m.counts[r][0] + m.counts[r][1]) as f64;
            for c in 0..2 {
                assert!((m.fractions[r][c] - m.counts[r][c] as f64 / total).abs() < 1e-9);
            }
        }
        assert!((m.class_accuracy(0) - 0.7).abs() < 1e-12);
        assert!((m.class_accuracy(1) - 0.9).abs() < 1e-12);
        let empty = ConfusionMatrix::from_counts([[0, 0], [2, 2]]);
        assert_eq!(empty.fractions[0], [0.0, 0.0]);
        assert!(empty.class_accuracy(0).is_nan());
    }

    #[test]
    fn tie_breaks_toward_hotspot() {
        assert_eq!(predicted_class(0.5, 0.5), 1);
        assert_eq!(predicted_class(0.6, 0.4), 0);
        assert_eq!(predicted_class(0.4, 0.6), 1);
    }

    #[test]
    fn evaluate_populates_slices_and_asr() {
        let model = Model::new(ArchSpec::arch_a(), 3);
        let ts: Vec<FeatureTensor> = (0..8).map(|i| tensor(i)).collect();
        let refs: Vec<&FeatureTensor> = ts.iter().collect();
        let rep = evaluate(
            &model,
            "m",
            0,
            &refs[0..3],
            &refs[3..5],
            &refs[5..7],
            &refs[7..8],
        )
        .unwrap();
        // ASR + poisoned-hotspot accuracy = 1 exactly.
        let acc = rep.poisoned.class_accuracy(1);
        assert_eq!(rep.asr.unwrap() + acc, 1.0);
        assert!(!rep.poisoned_hotspot_empty);
        assert_eq!(rep.clean.counts[0][0] + rep.clean.counts[0][1], 3);
        assert_eq!(rep.clean.counts[1][0] + rep.clean.counts[1][1], 2);
    }

    #[test]
    fn empty_clean_slice_is_an_error() {
        let model = Model::new(ArchSpec::arch_a(), 3);
        let ts: Vec<FeatureTensor> = (0..4).map(|i| tensor(i)).collect();
        let refs: Vec<&FeatureTensor> = ts.iter().collect();
        assert!(matches!(
            evaluate(&model, "m", 0, &[], &refs[0..2], &refs[2..4], &[]),
            Err(EvalError::EmptyCleanSlice("non-hotspot"))
        ));
        assert!(matches!(
            evaluate(&model, "m", 0, &refs[0..2], &[], &refs[2..4], &[]),
            Err(EvalError::EmptyCleanSlice("hotspot"))
        ));
    }

    #[test]
    fn empty_poisoned_hotspot_slice_is_flagged() {
        let model = Model::new(ArchSpec::arch_a(), 3);
        let ts: Vec<FeatureTensor> = (0..4).map(|i| tensor(i)).collect();
        let refs: Vec<&FeatureTensor> = ts.iter().collect();
        let rep = evaluate(&model, "m", 0, &refs[0..2], &refs[2..3], &refs[3..4], &[]).unwrap();
        assert!(rep.poisoned_hotspot_empty);
        assert!(rep.asr.is_none());
    }

    #[test]
    fn relative_asr_definition() {
        assert!((relative_asr(0.68, 0.81).unwrap() - 0.8395).abs() < 1e-3);
        assert_eq!(relative_asr(0.5, 0.5).unwrap(), 1.0);
        assert_eq!(relative_asr(0.0, 0.7).unwrap(), 0.0);
        assert!(matches!(relative_asr(0.5, 0.0), Err(EvalError::ZeroBaseline)));
    }

    #[test]
    fn activation_export_shape_and_determinism() {
        let model = Model::new(ArchSpec::arch_a(), 9);
        let ts: Vec<FeatureTensor> = (0..3).map(|i| tensor(100 + i)).collect();
        let rows: Vec<(String, SliceTag, &FeatureTensor)> = ts
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("clip{i}"), SliceTag::CleanNonHotspot, t))
            .collect();
        let csv = export_activations(&model, &rows, "fc1").unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        for line in &lines {
            assert_eq!(line.split(',').count(), 252);
        }
        let again = export_activations(&model, &rows, "fc1").unwrap();
        assert_eq!(csv, again);
        assert!(matches!(
            export_activations(&model, &rows, "fc9"),
            Err(EvalError::UnknownLayer(_))
        ));
    }

    #[test]
    fn activation_export_matches_forward_capture() {
        let model = Model::new(ArchSpec::arch_a(), 9);
        let t = FeatureTensor::zeros();
        let rows = vec![("z".to_string(), SliceTag::CleanHotspot, &t)];
        let csv = export_activations(&model, &rows, "fc1").unwrap();
        let x = batch_from_features(&[&t]);
        let (_, fc1) = forward(&model, &x, true);
        let fc1 = fc1.unwrap();
        let fields: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        for (i, f) in fields[2..].iter().enumerate() {
            let v: f64 = f.parse().unwrap();
            assert!((v - fc1[[0, i]]).abs() < 1e-6);
        }
    }

    #[test]
    fn sweep_sorted_with_baseline_normalization() {
        let reports = vec![
            report(12, Some(0.30)),
            report(0, Some(0.60)),
            report(3, Some(0.45)),
        ];
        let csv = sweep_report(&reports, "digest123").unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].contains("digest123"));
        let levels: Vec<&str> = lines[2..]
            .iter()
            .map(|l| l.split(',').next().unwrap())
            .collect();
        assert_eq!(levels, ["0", "3", "12"]);
        assert!(lines[2].ends_with("0.6000,1.0000"), "level 0 r-asr = 1");
        assert!(lines[3].ends_with("0.4500,0.7500"));
        assert!(lines[4].ends_with("0.3000,0.5000"));
    }

    #[test]
    fn sweep_requires_level_zero() {
        let reports = vec![report(3, Some(0.4))];
        assert!(matches!(
            sweep_report(&reports, "d"),
            Err(EvalError::MissingBaseline)
        ));
        let dup = vec![report(0, Some(0.4)), report(0, Some(0.5))];
        assert!(matches!(
            sweep_report(&dup, "d"),
            Err(EvalError::DuplicateLevel(0))
        ));
        let unmeasured = vec![report(0, None), report(3, Some(0.2))];
        assert!(matches!(
            sweep_report(&unmeasured, "d"),
            Err(EvalError::BaselineUnmeasured)
        ));
        let zero = vec![report(0, Some(0.0)), report(3, Some(0.2))];
        assert!(matches!(sweep_report(&zero, "d"), Err(EvalError::ZeroBaseline)));
    }

    #[test]
    fn single_level_zero_sweep_has_unit_r_asr() {
        let reports = vec![report(0, Some(0.5))];
        let csv = sweep_report(&reports, "d").unwrap();
        assert!(csv.lines().nth(2).unwrap().ends_with(",1.0000"));
    }
}
