//! The malicious-designer side: trigger definition, constrained insertion,
//! and clean-label poisoning of train/test splits.
//!
//! The trigger is one fixed rectilinear shape at one fixed anchor. Training
//! poisoning keeps only clips that remain non-hotspot after insertion, so
//! every emitted label is truthful and label audits cannot expose the
//! attack.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drc::{check_clip, is_clean, RuleDeck, ViolationKind};
use crate::geometry::{pair_spacing, polygons_overlap, LayoutClip, Point, RectilinearPolygon, CLIP_SIZE_NM};
use crate::layout_io::{ClipRecord, Label, Provenance, Split};
use crate::litho::{simulate, LithoConfig};

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("trigger shape violates the width rule in isolation")]
    TriggerNotClean,
    #[error("trigger at anchor ({0}, {1}) leaves the clip or comes within 4 sigma of the ROI")]
    BadAnchor(i32, i32),
    #[error("record {0} is unlabeled")]
    UnlabeledRecord(String),
    #[error("poison fraction {0} outside (0, 1]")]
    BadFraction(f64),
}

/// Why a trigger insertion was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rejection {
    /// Trigger interior intersects or touches an existing polygon.
    Overlap,
    /// Trigger is closer than min_spacing to an existing polygon, or the
    /// combined clip fails DRC.
    SpacingViolation,
    /// Trigger leaves the clip bounds.
    OutOfBounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub trigger_id: String,
    /// Shape in local coordinates with origin (0, 0).
    pub shape: RectilinearPolygon,
    /// Clip coordinates of the shape origin.
    pub anchor: Point,
}

impl Trigger {
    /// Default trigger: L-shaped polygon in a 210x210 bounding box with
    /// 70 nm arms, anchored in the upper-left quadrant. The shape comes
    /// from the wire vocabulary of the corpus generator.
    pub fn default_l(deck: &RuleDeck) -> Trigger {
        let shape = RectilinearPolygon::new(vec![
            Point::new(0, 0),
            Point::new(70, 0),
            Point::new(70, 140),
            Point::new(210, 140),
            Point::new(210, 210),
            Point::new(0, 210),
        ])
        .expect("L shape is a valid rectilinear polygon");
        let t = Trigger {
            trigger_id: "l210".into(),
            shape,
            anchor: Point::new(150, 760),
        };
        debug_assert!(t.validate(deck, &LithoConfig::default()).is_ok());
        t
    }

    /// Shape translated to clip coordinates.
    pub fn placed(&self) -> RectilinearPolygon {
        let pts = self
            .shape
            .vertices()
            .iter()
            .map(|p| Point::new(p.x + self.anchor.x, p.y + self.anchor.y))
            .collect();
        RectilinearPolygon::new(pts).expect("translation preserves validity")
    }

    /// Checks the trigger invariants: shape passes the width rule in
    /// isolation, stays inside the clip, and keeps >= 4 sigma clearance
    /// from the ROI.
    pub fn validate(&self, deck: &RuleDeck, oracle: &LithoConfig) -> Result<(), AttackError> {
        let alone = LayoutClip::new("trigger", vec![self.placed()]);
        let violations = check_clip(&alone, deck);
        if violations
            .iter()
            .any(|v| matches!(v.kind, ViolationKind::Width | ViolationKind::OffGrid))
        {
            return Err(AttackError::TriggerNotClean);
        }
        if violations
            .iter()
            .any(|v| v.kind == ViolationKind::OutOfBounds)
        {
            return Err(AttackError::BadAnchor(self.anchor.x, self.anchor.y));
        }
        let roi = RectilinearPolygon::rect(alone.roi);
        let clearance = 4.0 * oracle.sigma_nm;
        match pair_spacing(&self.placed(), &roi) {
            Ok(d) if d >= clearance => Ok(()),
            _ => Err(AttackError::BadAnchor(self.anchor.x, self.anchor.y)),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoisonConfig {
    pub trigger: Trigger,
    /// Fraction of eligible clips to poison; default 1.0 (all eligible).
    pub target_fraction: f64,
    pub seed: u64,
}

impl PoisonConfig {
    pub fn new(trigger: Trigger) -> Self {
        PoisonConfig {
            trigger,
            target_fraction: 1.0,
            seed: 1,
        }
    }
}

/// Inserts the trigger at its fixed anchor, or reports which constraint
/// failed. Accepts iff the trigger touches nothing, keeps min spacing from
/// every polygon, and the combined clip is DRC-clean.
pub fn insert_trigger(
    clip: &LayoutClip,
    trigger: &Trigger,
    deck: &RuleDeck,
) -> Result<LayoutClip, Rejection> {
    let placed = trigger.placed();
    let bbox = placed.bounding_box();
    if bbox.x0 < 0 || bbox.y0 < 0 || bbox.x1 > CLIP_SIZE_NM || bbox.y1 > CLIP_SIZE_NM {
        return Err(Rejection::OutOfBounds);
    }
    let min_sp = deck.min_spacing_nm as f64;
    for p in &clip.polygons {
        if polygons_overlap(p, &placed) {
            return Err(Rejection::Overlap);
        }
        match pair_spacing(p, &placed) {
            Ok(d) if d == 0.0 => return Err(Rejection::Overlap),
            Ok(d) if d < min_sp => return Err(Rejection::SpacingViolation),
            Ok(_) => {}
            Err(_) => return Err(Rejection::Overlap),
        }
    }
    let mut out = clip.clone();
    out.polygons.push(placed);
    if !is_clean(&out, deck) {
        return Err(Rejection::SpacingViolation);
    }
    Ok(out)
}

/// Per-split poisoning statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoisonStats {
    pub attempted: usize,
    pub accepted: usize,
    /// Accepted insertions whose simulated label differs from the parent's.
    pub label_flipped: usize,
    pub rejected_overlap: usize,
    pub rejected_spacing: usize,
    pub rejected_out_of_bounds: usize,
    /// Train side only: insertions dropped because the clip became hotspot.
    pub dropped_became_hotspot: usize,
}

/// A poisoned clip with its truthful record.
#[derive(Debug, Clone)]
pub struct PoisonedClip {
    pub record: ClipRecord,
    pub clip: LayoutClip,
}

#[derive(Debug, Default)]
pub struct PoisonOutcome {
    /// Train-side clips that stayed NonHotspot with the trigger.
    pub train_nhs: Vec<PoisonedClip>,
    /// Test-side clips by post-insertion truthful label.
    pub test_nhs: Vec<PoisonedClip>,
    pub test_hs: Vec<PoisonedClip>,
    pub train_stats: PoisonStats,
    pub test_stats: PoisonStats,
}

/// Clean-label poisoning per the threat model: on the TRAIN side the
/// attacker inserts the trigger into every eligible non-hotspot clip and
/// keeps only those that remain non-hotspot; on the TEST side insertion is
/// attempted on every clip of both classes and all DRC-valid results are
/// kept with truthful labels.
pub fn poison_dataset(
    records: &[(ClipRecord, LayoutClip)],
    cfg: &PoisonConfig,
    oracle: &LithoConfig,
    deck: &RuleDeck,
) -> Result<PoisonOutcome, AttackError> {
    if !(cfg.target_fraction > 0.0 && cfg.target_fraction <= 1.0) {
        return Err(AttackError::BadFraction(cfg.target_fraction));
    }
    for (r, _) in records {
        if r.label.is_none() {
            return Err(AttackError::UnlabeledRecord(r.clip_id.clone()));
        }
    }
    cfg.trigger.validate(deck, oracle)?;

    #[derive(Default)]
    struct Acc {
        kept: Vec<(PoisonedClip, Label)>,
        stats: PoisonStats,
    }
    let process = |subset: &[&(ClipRecord, LayoutClip)], train_side: bool| -> Acc {
        let results: Vec<(Option<(PoisonedClip, Label)>, PoisonStats)> = subset
            .par_iter()
            .map(|(rec, clip)| {
                let mut st = PoisonStats {
                    attempted: 1,
                    ..PoisonStats::default()
                };
                let poisoned = match insert_trigger(clip, &cfg.trigger, deck) {
                    Ok(c) => c,
                    Err(Rejection::Overlap) => {
                        st.rejected_overlap = 1;
                        return (None, st);
                    }
                    Err(Rejection::SpacingViolation) => {
                        st.rejected_spacing = 1;
                        return (None, st);
                    }
                    Err(Rejection::OutOfBounds) => {
                        st.rejected_out_of_bounds = 1;
                        return (None, st);
                    }
                };
                st.accepted = 1;
                let label = simulate(&poisoned, oracle).label;
                if Some(label) != rec.label {
                    st.label_flipped = 1;
                }
                if train_side && label == Label::Hotspot {
                    st.dropped_became_hotspot = 1;
                    return (None, st);
                }
                let clip_id = format!("{}_p", rec.clip_id);
                let out = PoisonedClip {
                    record: ClipRecord {
                        clip_id: clip_id.clone(),
                        path: format!("{clip_id}.gds"),
                        label: Some(label),
                        split: rec.split,
                        provenance: Provenance::Poisoned {
                            parent_id: rec.clip_id.clone(),
                            trigger_id: cfg.trigger.trigger_id.clone(),
                        },
                        rng_seed: rec.rng_seed,
                    },
                    clip: LayoutClip {
                        id: clip_id,
                        ..poisoned
                    },
                };
                (Some((out, label)), st)
            })
            .collect();
        let mut acc = Acc::default();
        for (kept, st) in results {
            acc.stats.attempted += st.attempted;
            acc.stats.accepted += st.accepted;
            acc.stats.label_flipped += st.label_flipped;
            acc.stats.rejected_overlap += st.rejected_overlap;
            acc.stats.rejected_spacing += st.rejected_spacing;
            acc.stats.rejected_out_of_bounds += st.rejected_out_of_bounds;
            acc.stats.dropped_became_hotspot += st.dropped_became_hotspot;
            acc.kept.extend(kept);
        }
        acc
    };

    // Eligible train clips: non-hotspot only; target_fraction takes a
    // deterministic prefix of the id-sorted eligible list.
    let mut train_candidates: Vec<&(ClipRecord, LayoutClip)> = records
        .iter()
        .filter(|(r, _)| r.split == Split::Train && r.label == Some(Label::NonHotspot))
        .collect();
    train_candidates.sort_by(|a, b| a.0.clip_id.cmp(&b.0.clip_id));
    let take = ((train_candidates.len() as f64) * cfg.target_fraction).round() as usize;
    train_candidates.truncate(take.min(train_candidates.len()));
    let mut test_candidates: Vec<&(ClipRecord, LayoutClip)> = records
        .iter()
        .filter(|(r, _)| r.split == Split::Test)
        .collect();
    test_candidates.sort_by(|a, b| a.0.clip_id.cmp(&b.0.clip_id));

    let train_acc = process(&train_candidates, true);
    let test_acc = process(&test_candidates, false);

    let mut outcome = PoisonOutcome {
        train_stats: train_acc.stats,
        test_stats: test_acc.stats,
        ..PoisonOutcome::default()
    };
    for (pc, label) in train_acc.kept {
        debug_assert_eq!(label, Label::NonHotspot);
        outcome.train_nhs.push(pc);
    }
    for (pc, label) in test_acc.kept {
        match label {
            Label::NonHotspot => outcome.test_nhs.push(pc),
            Label::Hotspot => outcome.test_hs.push(pc),
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;

    fn deck() -> RuleDeck {
        RuleDeck::default()
    }

    fn oracle() -> LithoConfig {
        LithoConfig {
            sigma_nm: 30.0,
            threshold: 0.44,
            ..LithoConfig::default()
        }
    }

    #[test]
    fn default_trigger_is_valid() {
        let t = Trigger::default_l(&deck());
        assert!(t.validate(&deck(), &oracle()).is_ok());
        let b = t.placed().bounding_box();
        assert_eq!((b.x1 - b.x0, b.y1 - b.y0), (210, 210));
    }

    #[test]
    fn insertion_into_open_area_appends_polygon() {
        let clip = LayoutClip::new(
            "c",
            vec![RectilinearPolygon::rect(Rect::new(600, 100, 900, 200))],
        );
        let t = Trigger::default_l(&deck());
        let out = insert_trigger(&clip, &t, &deck()).unwrap();
        assert_eq!(out.polygons.len(), clip.polygons.len() + 1);
    }

    #[test]
    fn insertion_atop_polygon_is_overlap() {
        let clip = LayoutClip::new(
            "c",
            vec![RectilinearPolygon::rect(Rect::new(100, 700, 500, 1050))],
        );
        let t = Trigger::default_l(&deck());
        assert_eq!(insert_trigger(&clip, &t, &deck()), Err(Rejection::Overlap));
    }

    #[test]
    fn insertion_at_64nm_is_spacing_violation() {
        // Trigger occupies x in [150, 360]; wire 64 nm to the right.
        let clip = LayoutClip::new(
            "c",
            vec![RectilinearPolygon::rect(Rect::new(424, 760, 700, 830))],
        );
        let t = Trigger::default_l(&deck());
        assert_eq!(
            insert_trigger(&clip, &t, &deck()),
            Err(Rejection::SpacingViolation)
        );
    }

    #[test]
    fn insertion_at_65nm_is_accepted() {
        let clip = LayoutClip::new(
            "c",
            vec![RectilinearPolygon::rect(Rect::new(425, 760, 700, 830))],
        );
        let t = Trigger::default_l(&deck());
        assert!(insert_trigger(&clip, &t, &deck()).is_ok());
    }

    #[test]
    fn out_of_bounds_anchor_rejected() {
        let mut t = Trigger::default_l(&deck());
        t.anchor = Point::new(1000, 760);
        let clip = LayoutClip::empty("c");
        assert_eq!(
            insert_trigger(&clip, &t, &deck()),
            Err(Rejection::OutOfBounds)
        );
    }

    #[test]
    fn anchor_near_roi_fails_validation() {
        let mut t = Trigger::default_l(&deck());
        t.anchor = Point::new(400, 400); // inside the 4-sigma ROI margin
        assert_eq!(
            t.validate(&deck(), &oracle()),
            Err(AttackError::BadAnchor(400, 400))
        );
    }

    #[test]
    fn empty_input_gives_empty_outcome() {
        let cfg = PoisonConfig::new(Trigger::default_l(&deck()));
        let out = poison_dataset(&[], &cfg, &oracle(), &deck()).unwrap();
        assert!(out.train_nhs.is_empty() && out.test_nhs.is_empty() && out.test_hs.is_empty());
        assert_eq!(out.train_stats, PoisonStats::default());
    }

    #[test]
    fn bad_fraction_rejected() {
        let mut cfg = PoisonConfig::new(Trigger::default_l(&deck()));
        cfg.target_fraction = 0.0;
        assert_eq!(
            poison_dataset(&[], &cfg, &oracle(), &deck()).unwrap_err(),
            AttackError::BadFraction(0.0)
        );
    }

    #[test]
    fn poisoned_records_are_clean_label() {
        use crate::layout_io::Split;
        use crate::synthesis::{generate_corpus, CorpusParams};
        let corpus = generate_corpus(&CorpusParams {
            clip_count: 60,
            seed: 77,
            ..CorpusParams::default()
        });
        let oracle = oracle();
        let records: Vec<(ClipRecord, LayoutClip)> = corpus
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                let label = simulate(&c, &oracle).label;
                (
                    ClipRecord {
                        clip_id: c.id.clone(),
                        path: format!("{}.gds", c.id),
                        label: Some(label),
                        split: if i % 2 == 0 { Split::Train } else { Split::Test },
                        provenance: Provenance::Original,
                        rng_seed: 0,
                    },
                    c,
                )
            })
            .collect();
        let cfg = PoisonConfig::new(Trigger::default_l(&deck()));
        let out = poison_dataset(&records, &cfg, &oracle, &deck()).unwrap();
        for pc in out
            .train_nhs
            .iter()
            .chain(&out.test_nhs)
            .chain(&out.test_hs)
        {
            assert!(is_clean(&pc.clip, &deck()));
            assert_eq!(
                pc.record.label.unwrap(),
                simulate(&pc.clip, &oracle).label,
                "stored label must match re-simulation for {}",
                pc.record.clip_id
            );
        }
        for pc in &out.train_nhs {
            assert_eq!(pc.record.label, Some(Label::NonHotspot));
        }
        // Determinism.
        let out2 = poison_dataset(&records, &cfg, &oracle, &deck()).unwrap();
        assert_eq!(out.train_stats, out2.train_stats);
        assert_eq!(out.test_stats, out2.test_stats);
        assert_eq!(
            out.train_nhs.iter().map(|p| &p.record.clip_id).collect::<Vec<_>>(),
            out2.train_nhs.iter().map(|p| &p.record.clip_id).collect::<Vec<_>>()
        );
    }
}
