//! Experiment driver: staged subcommands over one config and one seed.
//!
//! Configuration comes from an optional TOML file (`--config`) whose keys
//! mirror `ExperimentConfig`; command-line flags override file values.
//! Exit codes: 0 success, 1 usage, 2 missing prerequisite artifact,
//! 3 integrity or calibration failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hotspot::pipeline::{ExperimentConfig, PipelineError, Workspace};

#[derive(Parser)]
#[command(name = "hotspot", about = "Hotspot-detector poisoning/defense testbed")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// TOML experiment config; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: $HOTSPOT_OUT or ./hotspot-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Architecture: A or B.
    #[arg(long, global = true)]
    arch: Option<String>,
    /// Augmentation levels, comma-separated (must include 0).
    #[arg(long, global = true, value_delimiter = ',')]
    levels: Option<Vec<u32>>,
    /// Training-split clip count.
    #[arg(long, global = true)]
    count: Option<usize>,
    /// Test-split clip count.
    #[arg(long, global = true)]
    test_count: Option<usize>,
    /// Fraction of eligible clips to poison.
    #[arg(long, global = true)]
    poison_fraction: Option<f64>,
    /// Export fc1 activations during evaluation.
    #[arg(long, global = true)]
    export_activations: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the train and test clip corpora.
    GenCorpus,
    /// Select (or adopt) the lithography oracle parameters.
    Calibrate,
    /// Label both corpora with the calibrated oracle.
    Simulate,
    /// Insert the backdoor trigger into both splits.
    Poison,
    /// Generate cross-class defensive augmentations per level.
    Augment,
    /// Extract block-DCT features for all manifests.
    Featurize,
    /// Train one model per augmentation level.
    Train,
    /// Evaluate one trained model over the four test slices.
    Evaluate {
        /// Augmentation level of the model to evaluate.
        #[arg(long, default_value_t = 0)]
        level: u32,
    },
    /// Run the full pipeline and emit the sweep report.
    Sweep,
}

fn resolve_config(ov: &Overrides) -> Result<ExperimentConfig, PipelineError> {
    let mut cfg = match &ov.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                PipelineError::Usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            toml::from_str(&text)
                .map_err(|e| PipelineError::Usage(format!("bad config {}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = ov.seed {
        cfg.seed = seed;
    }
    if let Some(arch) = &ov.arch {
        cfg.arch = arch.clone();
    }
    if let Some(levels) = &ov.levels {
        cfg.levels = levels.clone();
    }
    if let Some(count) = ov.count {
        cfg.train_clip_count = count;
        cfg.corpus.clip_count = count;
    }
    if let Some(count) = ov.test_count {
        cfg.test_clip_count = count;
    }
    if let Some(f) = ov.poison_fraction {
        cfg.poison_fraction = f;
    }
    if ov.export_activations {
        cfg.export_activations = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(ov: &Overrides) -> PathBuf {
    ov.out
        .clone()
        .or_else(|| std::env::var_os("HOTSPOT_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("hotspot-out"))
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    if cli.overrides.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.overrides.jobs)
            .build_global()
            .map_err(|e| PipelineError::Usage(format!("--jobs: {e}")))?;
    }
    let cfg = resolve_config(&cli.overrides)?;
    let arch = cfg.arch.clone();
    let levels = cfg.levels.clone();
    let ws = Workspace::new(output_dir(&cli.overrides), cfg)?;
    match &cli.command {
        Command::GenCorpus => {
            ws.gen_corpus()?;
            println!("corpus written under {}", ws.root.display());
        }
        Command::Calibrate => {
            let litho = ws.calibrate()?;
            println!(
                "calibrated oracle: sigma = {} nm, threshold = {}",
                litho.sigma_nm, litho.threshold
            );
        }
        Command::Simulate => {
            ws.simulate()?;
            println!("labeled manifests written");
        }
        Command::Poison => {
            let (train, test) = ws.poison()?;
            println!(
                "poisoned: train accepted {} (of {}), test accepted {} (of {})",
                train.accepted, train.attempted, test.accepted, test.attempted
            );
        }
        Command::Augment => {
            ws.augment(&levels)?;
            println!("augmented levels {levels:?}");
        }
        Command::Featurize => {
            ws.featurize()?;
            println!("feature caches written");
        }
        Command::Train => {
            ws.train_models(&arch, &levels)?;
            println!("trained architecture {arch} at levels {levels:?}");
        }
        Command::Evaluate { level } => {
            let report = ws.evaluate_level(&arch, *level)?;
            match report.asr {
                Some(asr) => println!(
                    "level {level}: ASR {asr:.4}, clean accuracy (NH {:.4}, HS {:.4})",
                    report.clean.class_accuracy(0),
                    report.clean.class_accuracy(1)
                ),
                None => println!("level {level}: poisoned-hotspot slice empty; ASR unmeasured"),
            }
        }
        Command::Sweep => {
            let reports = ws.sweep()?;
            for r in &reports {
                let asr = r
                    .asr
                    .map(|a| format!("{a:.4}"))
                    .unwrap_or_else(|| "n/a".into());
                println!("level {}: ASR {}", r.augmentation_level, asr);
            }
            println!(
                "sweep report: {}",
                ws.root
                    .join(format!(
                        "reports/sweep_{}.csv",
                        if arch.eq_ignore_ascii_case("b") { "B" } else { "A" }
                    ))
                    .display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
