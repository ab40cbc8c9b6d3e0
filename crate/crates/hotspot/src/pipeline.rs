//! Experiment orchestration: one config, one seed, a fixed artifact
//! layout under an output directory, and staged subcommands with
//! explicit dependencies. Every artifact embeds the config digest; every
//! stage rewrites byte-identical outputs when re-run over unchanged
//! inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attack::{poison_dataset, AttackError, PoisonConfig, PoisonStats, Trigger};
use crate::drc::RuleDeck;
use crate::eval::{evaluate, export_activations, sweep_report, EvalError, EvalReport, SliceTag};
use crate::features::{
    clip_to_image, dct_features, read_feature_cache, write_feature_cache, FeatureError,
    FeatureTensor,
};
use crate::geometry::{GeometryError, LayoutClip, Point};
use crate::layout_io::{
    load_manifest, read_clip_gds, save_manifest, write_clip_gds, ClipRecord, DatasetManifest,
    Label, LayoutIoError, Provenance, Split,
};
use crate::litho::{label_batch, CalibrationTargets, LithoConfig, LithoError};
use crate::nn::train::{predict, select_model, train, training_log_csv, TrainConfig};
use crate::nn::{load_model, save_model, ArchSpec, NnError};
use crate::seed::child_seed;
use crate::synthesis::{
    defensive_augment, generate_corpus, CorpusParams, GenParams, LabeledClip, SynthesisError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Usage(String),
    #[error("missing artifact {artifact}; run `{command}` first")]
    Dependency {
        artifact: String,
        command: &'static str,
    },
    #[error("calibration failed: {0}")]
    Calibration(LithoError),
    #[error("integrity: {0}")]
    Integrity(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("layout i/o: {0}")]
    Layout(#[from] LayoutIoError),
    #[error("features: {0}")]
    Features(#[from] FeatureError),
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("synthesis: {0}")]
    Synthesis(#[from] SynthesisError),
    #[error("attack: {0}")]
    Attack(#[from] AttackError),
    #[error("training: {0}")]
    Nn(#[from] NnError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
}

impl PipelineError {
    /// Process exit code: 0 success, 1 usage, 2 dependency, 3
    /// integrity/calibration (and any other runtime failure).
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) => 1,
            PipelineError::Dependency { .. } => 2,
            _ => 3,
        }
    }
}

/// Full experiment description. Everything that affects results lives
/// here; the output directory and job count deliberately do not.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub train_clip_count: usize,
    pub test_clip_count: usize,
    pub corpus: CorpusParams,
    pub deck: RuleDeck,
    /// Fixed oracle parameters; when absent the `calibrate` stage
    /// grid-searches using `calibration`.
    pub litho: Option<LithoConfig>,
    pub calibration: CalibrationTargets,
    /// Variant-generation parameters shared by augmentation; the per-level
    /// variant_count, deck, and seed fields are overridden by the pipeline.
    pub variants: GenParams,
    pub trigger_anchor: (i32, i32),
    pub poison_fraction: f64,
    pub train: TrainConfig,
    pub arch: String,
    /// Augmentation levels; must include 0 (the undefended baseline).
    pub levels: Vec<u32>,
    /// Also export fc1 activations for the test set during `evaluate`.
    pub export_activations: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            train_clip_count: 2000,
            test_clip_count: 1000,
            corpus: CorpusParams::default(),
            deck: RuleDeck::default(),
            litho: None,
            calibration: CalibrationTargets::default(),
            variants: GenParams::default(),
            trigger_anchor: (150, 760),
            poison_fraction: 1.0,
            train: TrainConfig::default(),
            arch: "A".into(),
            levels: vec![0, 3, 12, 50],
            export_activations: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.train_clip_count == 0 || self.test_clip_count == 0 {
            return Err(PipelineError::Usage("clip counts must be positive".into()));
        }
        if ArchSpec::by_name(&self.arch).is_none() {
            return Err(PipelineError::Usage(format!(
                "unknown architecture {:?} (expected A or B)",
                self.arch
            )));
        }
        if self.levels.is_empty() || !self.levels.contains(&0) {
            return Err(PipelineError::Usage(
                "augmentation levels must include 0".into(),
            ));
        }
        if !(self.poison_fraction > 0.0 && self.poison_fraction <= 1.0) {
            return Err(PipelineError::Usage(
                "poison_fraction must be in (0, 1]".into(),
            ));
        }
        self.deck.validate().map_err(PipelineError::Usage)?;
        Ok(())
    }

    /// Hex digest over the canonical TOML form; embedded in every artifact.
    pub fn digest(&self) -> String {
        let toml = toml::to_string(self).expect("config serializes");
        let hash = Sha256::digest(toml.as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// An output directory bound to a validated config.
pub struct Workspace {
    pub root: PathBuf,
    pub cfg: ExperimentConfig,
    pub digest: String,
}

fn arch_tag(arch: &str) -> &str {
    if arch.eq_ignore_ascii_case("b") {
        "B"
    } else {
        "A"
    }
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>, cfg: ExperimentConfig) -> Result<Workspace, PipelineError> {
        cfg.validate()?;
        let digest = cfg.digest();
        let ws = Workspace {
            root: root.into(),
            cfg,
            digest,
        };
        fs::create_dir_all(&ws.root)?;
        // Resolved config is itself an artifact.
        let toml = toml::to_string(&ws.cfg).expect("config serializes");
        write_if_changed(
            &ws.root.join("config.resolved.toml"),
            format!("# config_digest={}\n{toml}", ws.digest).as_bytes(),
        )?;
        Ok(ws)
    }

    fn corpus_manifest(&self, split: Split) -> PathBuf {
        self.root.join(match split {
            Split::Train => "corpus/train_manifest.jsonl",
            Split::Test => "corpus/test_manifest.jsonl",
        })
    }

    fn labeled_manifest(&self, split: Split) -> PathBuf {
        self.root.join(match split {
            Split::Train => "labeled/train_manifest.jsonl",
            Split::Test => "labeled/test_manifest.jsonl",
        })
    }

    fn calibration_path(&self) -> PathBuf {
        self.root.join("calibration.json")
    }

    fn poison_manifest(&self, split: Split) -> PathBuf {
        self.root.join(match split {
            Split::Train => "poison/train_manifest.jsonl",
            Split::Test => "poison/test_manifest.jsonl",
        })
    }

    fn level_manifest(&self, level: u32) -> PathBuf {
        self.root
            .join(format!("augment/level_{level}/train_manifest.jsonl"))
    }

    fn feature_cache(&self, name: &str) -> PathBuf {
        self.root.join(format!("features/{name}.hsfc"))
    }

    fn model_path(&self, arch: &str, level: u32) -> PathBuf {
        self.root
            .join(format!("models/{}_level_{level}.hsdm", arch_tag(arch)))
    }

    fn require(&self, path: &Path, command: &'static str) -> Result<(), PipelineError> {
        if path.exists() {
            Ok(())
        } else {
            Err(PipelineError::Dependency {
                artifact: path
                    .strip_prefix(&self.root)
                    .unwrap_or(path)
                    .display()
                    .to_string(),
                command,
            })
        }
    }

    fn load_records(
        &self,
        manifest_path: &Path,
    ) -> Result<Vec<(ClipRecord, LayoutClip)>, PipelineError> {
        let manifest = load_manifest(manifest_path)?;
        let mut out = Vec::with_capacity(manifest.records.len());
        for r in manifest.records {
            let clip = read_clip_gds(&self.root.join(&r.path))?.clip;
            out.push((r, clip));
        }
        Ok(out)
    }

    fn new_manifest(&self) -> DatasetManifest {
        DatasetManifest::new(self.cfg.seed, self.digest.clone())
    }

    /// Stage 1: deterministic corpus synthesis for both splits.
    pub fn gen_corpus(&self) -> Result<(), PipelineError> {
        for (split, count, prefix, tag) in [
            (Split::Train, self.cfg.train_clip_count, "train", 0u64),
            (Split::Test, self.cfg.test_clip_count, "test", 1u64),
        ] {
            let params = CorpusParams {
                clip_count: count,
                id_prefix: prefix.into(),
                seed: child_seed(self.cfg.seed, "corpus-split", tag),
                ..self.cfg.corpus.clone()
            };
            let clips = generate_corpus(&params);
            let dir = self.root.join("corpus").join(prefix);
            fs::create_dir_all(&dir)?;
            let mut manifest = self.new_manifest();
            for (i, clip) in clips.iter().enumerate() {
                let rel = format!("corpus/{prefix}/{}.gds", clip.id);
                write_clip_gds(clip, &self.root.join(&rel))?;
                manifest.records.push(ClipRecord {
                    clip_id: clip.id.clone(),
                    path: rel,
                    label: None,
                    split,
                    provenance: Provenance::Original,
                    rng_seed: child_seed(params.seed, "corpus-clip", i as u64),
                });
            }
            save_manifest(&manifest, &self.corpus_manifest(split))?;
        }
        Ok(())
    }

    /// Stage 2: oracle parameter selection (or adoption of fixed
    /// parameters from the config).
    pub fn calibrate(&self) -> Result<LithoConfig, PipelineError> {
        self.require(&self.corpus_manifest(Split::Train), "gen-corpus")?;
        let litho = match self.cfg.litho {
            Some(l) => l,
            None => {
                let clips: Vec<LayoutClip> = self
                    .load_records(&self.corpus_manifest(Split::Train))?
                    .into_iter()
                    .map(|(_, c)| c)
                    .collect();
                crate::litho::calibrate(&clips, &self.cfg.calibration)
                    .map_err(PipelineError::Calibration)?
            }
        };
        let body = serde_json::json!({
            "config_digest": self.digest,
            "litho": litho,
        });
        write_if_changed(
            &self.calibration_path(),
            format!("{}\n", serde_json::to_string_pretty(&body).unwrap()).as_bytes(),
        )?;
        Ok(litho)
    }

    pub fn load_calibration(&self) -> Result<LithoConfig, PipelineError> {
        self.require(&self.calibration_path(), "calibrate")?;
        let text = fs::read_to_string(self.calibration_path())?;
        let v: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Integrity(format!("calibration.json: {e}")))?;
        serde_json::from_value(v["litho"].clone())
            .map_err(|e| PipelineError::Integrity(format!("calibration.json: {e}")))
    }

    /// Stage 3: label both corpus splits with the calibrated oracle.
    pub fn simulate(&self) -> Result<(), PipelineError> {
        let litho = self.load_calibration()?;
        for split in [Split::Train, Split::Test] {
            self.require(&self.corpus_manifest(split), "gen-corpus")?;
            let records = self.load_records(&self.corpus_manifest(split))?;
            let clips: Vec<LayoutClip> = records.iter().map(|(_, c)| c.clone()).collect();
            let labels = label_batch(&clips, &litho);
            let mut manifest = self.new_manifest();
            for ((mut rec, _), label) in records.into_iter().zip(labels) {
                rec.label = Some(label);
                manifest.records.push(rec);
            }
            fs::create_dir_all(self.root.join("labeled"))?;
            save_manifest(&manifest, &self.labeled_manifest(split))?;
        }
        Ok(())
    }

    fn trigger(&self) -> Trigger {
        let mut t = Trigger::default_l(&self.cfg.deck);
        t.anchor = Point::new(self.cfg.trigger_anchor.0, self.cfg.trigger_anchor.1);
        t
    }

    /// Stage 4: clean-label trigger insertion on both splits.
    pub fn poison(&self) -> Result<(PoisonStats, PoisonStats), PipelineError> {
        let litho = self.load_calibration()?;
        self.require(&self.labeled_manifest(Split::Train), "simulate")?;
        self.require(&self.labeled_manifest(Split::Test), "simulate")?;
        let mut records = self.load_records(&self.labeled_manifest(Split::Train))?;
        records.extend(self.load_records(&self.labeled_manifest(Split::Test))?);
        let cfg = PoisonConfig {
            trigger: self.trigger(),
            target_fraction: self.cfg.poison_fraction,
            seed: child_seed(self.cfg.seed, "poison", 0),
        };
        let outcome = poison_dataset(&records, &cfg, &litho, &self.cfg.deck)?;
        let gds_dir = self.root.join("poison/gds");
        fs::create_dir_all(&gds_dir)?;
        let mut train = self.new_manifest();
        let mut test = self.new_manifest();
        for (rec, _) in &records {
            match rec.split {
                Split::Train => train.records.push(rec.clone()),
                Split::Test => test.records.push(rec.clone()),
            }
        }
        let append = |poisoned: &[crate::attack::PoisonedClip],
                          manifest: &mut DatasetManifest|
         -> Result<(), PipelineError> {
            for p in poisoned {
                let rel = format!("poison/gds/{}.gds", p.record.clip_id);
                write_clip_gds(&p.clip, &self.root.join(&rel))?;
                let mut rec = p.record.clone();
                rec.path = rel;
                manifest.records.push(rec);
            }
            Ok(())
        };
        append(&outcome.train_nhs, &mut train)?;
        append(&outcome.test_nhs, &mut test)?;
        append(&outcome.test_hs, &mut test)?;
        save_manifest(&train, &self.poison_manifest(Split::Train))?;
        save_manifest(&test, &self.poison_manifest(Split::Test))?;
        let stats = serde_json::json!({
            "config_digest": self.digest,
            "train": outcome.train_stats,
            "test": outcome.test_stats,
        });
        write_if_changed(
            &self.root.join("poison/stats.json"),
            format!("{}\n", serde_json::to_string_pretty(&stats).unwrap()).as_bytes(),
        )?;
        Ok((outcome.train_stats, outcome.test_stats))
    }

    /// Stage 5: cross-class defensive augmentation. Variants are generated
    /// once at the maximum level; each requested level keeps the prefix of
    /// attempted variant indices, which is exact because every variant is
    /// seeded by (parent, index) alone.
    pub fn augment(&self, levels: &[u32]) -> Result<(), PipelineError> {
        let litho = self.load_calibration()?;
        self.require(&self.poison_manifest(Split::Train), "poison")?;
        let mut levels: Vec<u32> = levels.to_vec();
        levels.sort_unstable();
        levels.dedup();
        if levels.is_empty() {
            return Err(PipelineError::Usage("augment requires >= 1 level".into()));
        }
        let max_level = *levels.last().unwrap();
        let parents: Vec<LabeledClip> = self
            .load_records(&self.poison_manifest(Split::Train))?
            .into_iter()
            .map(|(record, clip)| LabeledClip { record, clip })
            .collect();
        let (augmented, yields) = if max_level == 0 {
            (parents.clone(), Vec::new())
        } else {
            let params = GenParams {
                variant_count: max_level,
                deck: self.cfg.deck,
                seed: child_seed(self.cfg.seed, "augment", 0),
                ..self.cfg.variants.clone()
            };
            defensive_augment(&parents, &params, &litho)
        };
        let n_parents = parents.len();
        let variants = &augmented[n_parents..];
        let gds_dir = self.root.join("augment/gds");
        fs::create_dir_all(&gds_dir)?;
        for v in variants {
            write_clip_gds(&v.clip, &gds_dir.join(format!("{}.gds", v.record.clip_id)))?;
        }
        for &level in &levels {
            let mut manifest = self.new_manifest();
            for p in &parents {
                manifest.records.push(p.record.clone());
            }
            for v in variants {
                let vi = match &v.record.provenance {
                    Provenance::VariantOf { variant_index, .. } => *variant_index,
                    _ => unreachable!("augment output is variants"),
                };
                if vi < level {
                    let mut rec = v.record.clone();
                    rec.path = format!("augment/gds/{}.gds", v.record.clip_id);
                    manifest.records.push(rec);
                }
            }
            let path = self.level_manifest(level);
            fs::create_dir_all(path.parent().unwrap())?;
            save_manifest(&manifest, &path)?;
        }
        let mut total = crate::synthesis::YieldStats::default();
        for y in &yields {
            total.attempted += y.attempted;
            total.drc_failed += y.drc_failed;
            total.kept_hs += y.kept_hs;
            total.kept_nhs += y.kept_nhs;
        }
        let stats = serde_json::json!({
            "config_digest": self.digest,
            "max_level": max_level,
            "parents": n_parents,
            "attempted": total.attempted,
            "drc_failed": total.drc_failed,
            "kept_hotspot": total.kept_hs,
            "kept_nonhotspot": total.kept_nhs,
        });
        write_if_changed(
            &self.root.join("augment/stats.json"),
            format!("{}\n", serde_json::to_string_pretty(&stats).unwrap()).as_bytes(),
        )?;
        Ok(())
    }

    /// Stage 6: block-DCT feature extraction for the test manifest and
    /// every requested level's training manifest.
    pub fn featurize(&self) -> Result<(), PipelineError> {
        fs::create_dir_all(self.root.join("features"))?;
        let mut jobs: Vec<(PathBuf, String)> = vec![(
            self.poison_manifest(Split::Test),
            "test".into(),
        )];
        for &level in &self.cfg.levels {
            jobs.push((self.level_manifest(level), format!("train_level_{level}")));
        }
        for (manifest_path, name) in jobs {
            self.require(
                &manifest_path,
                if name == "test" { "poison" } else { "augment" },
            )?;
            let records = self.load_records(&manifest_path)?;
            let mut tensors = Vec::with_capacity(records.len());
            for (_, clip) in &records {
                tensors.push(dct_features(&clip_to_image(clip))?);
            }
            write_feature_cache(&self.feature_cache(&name), &tensors)?;
        }
        Ok(())
    }

    fn load_features_for(
        &self,
        manifest_path: &Path,
        cache_name: &str,
        producer: &'static str,
    ) -> Result<(Vec<ClipRecord>, Vec<FeatureTensor>), PipelineError> {
        self.require(manifest_path, "augment")?;
        let cache = self.feature_cache(cache_name);
        self.require(&cache, producer)?;
        let records = load_manifest(manifest_path)?.records;
        let tensors = read_feature_cache(&cache)?;
        if records.len() != tensors.len() {
            return Err(PipelineError::Integrity(format!(
                "feature cache {cache_name} has {} tensors for {} records; re-run featurize",
                tensors.len(),
                records.len()
            )));
        }
        Ok((records, tensors))
    }

    fn train_seed(&self, arch: &str, level: u32) -> u64 {
        let arch_bit = u64::from(arch_tag(arch) == "B");
        child_seed(child_seed(self.cfg.seed, "train-arch", arch_bit), "level", level as u64)
    }

    /// Stage 7: trains one model per requested level and saves the
    /// selected checkpoint.
    pub fn train_models(&self, arch: &str, levels: &[u32]) -> Result<(), PipelineError> {
        let spec = ArchSpec::by_name(arch)
            .ok_or_else(|| PipelineError::Usage(format!("unknown architecture {arch:?}")))?;
        fs::create_dir_all(self.root.join("models"))?;
        for &level in levels {
            let (records, tensors) = self.load_features_for(
                &self.level_manifest(level),
                &format!("train_level_{level}"),
                "featurize",
            )?;
            let labels: Vec<u8> = records
                .iter()
                .map(|r| match r.label {
                    Some(Label::Hotspot) => 1u8,
                    Some(Label::NonHotspot) => 0u8,
                    None => 0u8,
                })
                .collect();
            let refs: Vec<&FeatureTensor> = tensors.iter().collect();
            let x = crate::nn::batch_from_features(&refs);
            let cfg = TrainConfig {
                seed: self.train_seed(arch, level),
                ..self.cfg.train.clone()
            };
            let checkpoints = train(spec.clone(), &x, &labels, &cfg)?;
            let (chosen, degraded) = select_model(&checkpoints)?;
            save_model(&chosen.model, &self.model_path(arch, level))?;
            let tag = arch_tag(arch);
            write_if_changed(
                &self.root.join(format!("models/{tag}_level_{level}_training.csv")),
                format!(
                    "# config_digest={}\n{}",
                    self.digest,
                    training_log_csv(&checkpoints)
                )
                .as_bytes(),
            )?;
            let selection = serde_json::json!({
                "config_digest": self.digest,
                "epoch": chosen.epoch,
                "degraded": degraded,
                "val_accuracy": chosen.val.accuracy,
                "val_hotspot_recall": chosen.val.hotspot_recall,
                "val_nonhotspot_recall": chosen.val.nonhotspot_recall,
            });
            write_if_changed(
                &self.root.join(format!("models/{tag}_level_{level}_selection.json")),
                format!("{}\n", serde_json::to_string_pretty(&selection).unwrap()).as_bytes(),
            )?;
        }
        Ok(())
    }

    /// Partitions the poisoned test manifest into the four evaluation
    /// slices, preserving manifest order within each slice.
    fn test_slices<'a>(
        records: &[ClipRecord],
        tensors: &'a [FeatureTensor],
    ) -> BTreeMap<&'static str, Vec<(usize, &'a FeatureTensor)>> {
        let mut slices: BTreeMap<&'static str, Vec<(usize, &FeatureTensor)>> = BTreeMap::new();
        for key in ["clean_nh", "clean_hs", "poisoned_nh", "poisoned_hs"] {
            slices.insert(key, Vec::new());
        }
        for (i, r) in records.iter().enumerate() {
            let poisoned = matches!(r.provenance, Provenance::Poisoned { .. });
            let key = match (poisoned, r.label) {
                (false, Some(Label::NonHotspot)) => "clean_nh",
                (false, Some(Label::Hotspot)) => "clean_hs",
                (true, Some(Label::NonHotspot)) => "poisoned_nh",
                (true, Some(Label::Hotspot)) => "poisoned_hs",
                (_, None) => continue,
            };
            slices.get_mut(key).unwrap().push((i, &tensors[i]));
        }
        slices
    }

    /// Stage 8: evaluates one trained model over the four test slices.
    pub fn evaluate_level(&self, arch: &str, level: u32) -> Result<EvalReport, PipelineError> {
        let model_path = self.model_path(arch, level);
        self.require(&model_path, "train")?;
        let (records, tensors) =
            self.load_features_for(&self.poison_manifest(Split::Test), "test", "featurize")?;
        let model = load_model(&model_path)?;
        let slices = Self::test_slices(&records, &tensors);
        let pick = |key: &str| -> Vec<&FeatureTensor> {
            slices[key].iter().map(|&(_, t)| t).collect()
        };
        let tag = arch_tag(arch);
        let model_id = format!("{tag}_level_{level}");
        let report = evaluate(
            &model,
            &model_id,
            level,
            &pick("clean_nh"),
            &pick("clean_hs"),
            &pick("poisoned_nh"),
            &pick("poisoned_hs"),
        )?;
        fs::create_dir_all(self.root.join("reports"))?;
        let json = serde_json::json!({
            "config_digest": self.digest,
            "model_id": report.model_id,
            "augmentation_level": report.augmentation_level,
            "clean_counts": report.clean.counts,
            "poisoned_counts": report.poisoned.counts,
            "clean_nonhotspot_accuracy": report.clean.class_accuracy(0),
            "clean_hotspot_accuracy": report.clean.class_accuracy(1),
            "poisoned_nonhotspot_accuracy": report.poisoned.class_accuracy(0),
            "poisoned_hotspot_accuracy": report.poisoned.class_accuracy(1),
            "asr": report.asr,
            "poisoned_hotspot_empty": report.poisoned_hotspot_empty,
        });
        write_if_changed(
            &self.root.join(format!("reports/{model_id}_eval.json")),
            format!("{}\n", serde_json::to_string_pretty(&json).unwrap()).as_bytes(),
        )?;
        if self.cfg.export_activations {
            let mut rows: Vec<(String, SliceTag, &FeatureTensor)> = Vec::new();
            for (key, tag) in [
                ("clean_nh", SliceTag::CleanNonHotspot),
                ("clean_hs", SliceTag::CleanHotspot),
                ("poisoned_nh", SliceTag::PoisonedNonHotspot),
                ("poisoned_hs", SliceTag::PoisonedHotspot),
            ] {
                for &(i, t) in &slices[key] {
                    rows.push((records[i].clip_id.clone(), tag, t));
                }
            }
            // Back to manifest order.
            rows.sort_by_key(|(id, _, _)| {
                records.iter().position(|r| &r.clip_id == id).unwrap()
            });
            let csv = export_activations(&model, &rows, "fc1")?;
            write_if_changed(
                &self.root.join(format!("reports/{model_id}_activations.csv")),
                format!("# config_digest={}\n{csv}", self.digest).as_bytes(),
            )?;
        }
        Ok(report)
    }

    /// Stage 9: the whole pipeline over the configured level grid, ending
    /// in the sweep CSV. Returns the per-level reports in ascending order.
    pub fn sweep(&self) -> Result<Vec<EvalReport>, PipelineError> {
        self.gen_corpus()?;
        self.calibrate()?;
        self.simulate()?;
        self.poison()?;
        self.augment(&self.cfg.levels)?;
        self.featurize()?;
        let arch = self.cfg.arch.clone();
        self.train_models(&arch, &self.cfg.levels)?;
        let mut reports = Vec::new();
        let mut levels = self.cfg.levels.clone();
        levels.sort_unstable();
        levels.dedup();
        for &level in &levels {
            reports.push(self.evaluate_level(&arch, level)?);
        }
        let csv = sweep_report(&reports, &self.digest)?;
        write_if_changed(
            &self.root.join(format!("reports/sweep_{}.csv", arch_tag(&arch))),
            csv.as_bytes(),
        )?;
        Ok(reports)
    }

    /// Predicted hotspot probability per record of a manifest, for ad-hoc
    /// inspection.
    pub fn predict_manifest(
        &self,
        arch: &str,
        level: u32,
        manifest_path: &Path,
        cache_name: &str,
    ) -> Result<Vec<(String, f64)>, PipelineError> {
        let model = load_model(&self.model_path(arch, level))?;
        let (records, tensors) = self.load_features_for(manifest_path, cache_name, "featurize")?;
        let refs: Vec<&FeatureTensor> = tensors.iter().collect();
        let x = crate::nn::batch_from_features(&refs);
        let p = predict(&model, &x, 64);
        Ok(records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.clip_id.clone(), p[[i, 1]]))
            .collect())
    }
}

/// Writes only when content differs, so re-runs keep mtimes stable; the
/// bytes on disk are identical either way.
fn write_if_changed(path: &Path, content: &[u8]) -> std::io::Result<()> {
    if let Ok(existing) = fs::read(path) {
        if existing == content {
            return Ok(());
        }
    }
    fs::write(path, content)
}
