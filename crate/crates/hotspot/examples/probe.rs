use hotspot::eval::evaluate;
use hotspot::features::{read_feature_cache, FeatureTensor};
use hotspot::layout_io::{load_manifest, Label, Provenance};
use hotspot::nn::train::{select_model, train, TrainConfig};
use hotspot::nn::{batch_from_features, ArchSpec};
use hotspot::seed::child_seed;
use std::path::Path;

fn main() {
    let root = Path::new("/tmp/fullrun7");
    let train_records = load_manifest(&root.join("augment/level_0/train_manifest.jsonl"))
        .unwrap()
        .records;
    let train_tensors = read_feature_cache(&root.join("features/train_level_0.hsfc")).unwrap();
    let test_records = load_manifest(&root.join("poison/test_manifest.jsonl"))
        .unwrap()
        .records;
    let test_tensors = read_feature_cache(&root.join("features/test.hsfc")).unwrap();

    let mut slices: std::collections::BTreeMap<&str, Vec<&FeatureTensor>> = Default::default();
    for (i, r) in test_records.iter().enumerate() {
        let poisoned = matches!(r.provenance, Provenance::Poisoned { .. });
        let key = match (poisoned, r.label) {
            (false, Some(Label::NonHotspot)) => "cnh",
            (false, Some(Label::Hotspot)) => "chs",
            (true, Some(Label::NonHotspot)) => "pnh",
            (true, Some(Label::Hotspot)) => "phs",
            _ => continue,
        };
        slices.entry(key).or_default().push(&test_tensors[i]);
    }

    for clean_only in [true] {
        let idx: Vec<usize> = (0..train_records.len())
            .filter(|&i| {
                !clean_only || matches!(train_records[i].provenance, Provenance::Original)
            })
            .collect();
        let kept: Vec<&FeatureTensor> = idx.iter().map(|&i| &train_tensors[i]).collect();
        let labels: Vec<u8> = idx
            .iter()
            .map(|&i| u8::from(train_records[i].label == Some(Label::Hotspot)))
            .collect();
        let x = batch_from_features(&kept);
        for cw in [None] {
            for seed_tag in [0u64] {
                let cfg = TrainConfig {
                    seed: child_seed(child_seed(7, "train-arch", seed_tag), "level", 0),
                    class_weight: cw,
                    ..TrainConfig::default()
                };
                let cks = train(ArchSpec::arch_a(), &x, &labels, &cfg).unwrap();
                if std::env::var("TRACE").is_ok() {
                    for c in &cks {
                        println!(
                            "  ep {:2} loss {:.4} val_loss {:.4} acc {:.3} rec {:.3}",
                            c.epoch, c.train_loss, c.val_loss, c.val.accuracy, c.val.hotspot_recall
                        );
                    }
                }
                let (chosen, degraded) = select_model(&cks).unwrap();
                let rep = evaluate(
                    &chosen.model,
                    "m",
                    0,
                    &slices["cnh"],
                    &slices["chs"],
                    &slices["pnh"],
                    &slices["phs"],
                )
                .unwrap();
                {
                    // Diagnose: geometry of misclassified clean HS clips.
                    use hotspot::layout_io::read_clip_gds;
                    use hotspot::nn::train::predict;
                    let mut idxs: Vec<usize> = Vec::new();
                    for (i, r) in test_records.iter().enumerate() {
                        if matches!(r.provenance, Provenance::Original)
                            && r.label == Some(Label::Hotspot)
                        {
                            idxs.push(i);
                        }
                    }
                    let ts: Vec<&FeatureTensor> = idxs.iter().map(|&i| &test_tensors[i]).collect();
                    let xs = batch_from_features(&ts);
                    let p = predict(&chosen.model, &xs, 64);
                    let mut wrong = 0;
                    for (k, &i) in idxs.iter().enumerate() {
                        if p[[k, 1]] < p[[k, 0]] {
                            wrong += 1;
                            let clip = read_clip_gds(Path::new(root).join(&test_records[i].path).as_path()).unwrap().clip;
                            // find the gapped track: two bars sharing y-extent on track 560
                            let mut bars: Vec<(i32,i32,i32,i32)> = clip.polygons.iter().map(|pg| {
                                let b = pg.bounding_box(); (b.x0,b.x1,b.y0,b.y1)
                            }).filter(|&(_,_,y0,y1)| y0 < 600 && y1 > 520).collect();
                            bars.sort();
                            let desc: Vec<String> = bars.iter().map(|&(x0,x1,y0,y1)| format!("x{}..{} w{}", x0, x1, y1-y0)).collect();
                            println!("  wrong HS {} p_hs {:.3}: {}", test_records[i].clip_id, p[[k,1]], desc.join(" | "));
                        }
                    }
                    println!("  clean HS wrong: {}/{}", wrong, idxs.len());
                }
                println!(
                    "{} cw={:?} s{}: ep {} ({} eps) val_acc {:.3} recall {:.3} deg {} | cNH {:.3} cHS {:.3} ASR {:.2}",
                    if clean_only { "clean" } else { "bkdr " },
                    cw,
                    seed_tag,
                    chosen.epoch,
                    cks.len(),
                    chosen.val.accuracy,
                    chosen.val.hotspot_recall,
                    degraded,
                    rep.clean.class_accuracy(0),
                    rep.clean.class_accuracy(1),
                    rep.asr.unwrap()
                );
            }
        }
    }
}
