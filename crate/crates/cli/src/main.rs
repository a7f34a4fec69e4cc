mod config;
mod report;
mod stages;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use inpaint_aug::augment::{Inpainter, OracleInpainter};
use inpaint_aug::classifier::Classifier;
use inpaint_aug::generator::GeneratorCheckpoint;
use inpaint_aug::stats::{ClassStats, HeadTailPartition};
use inpaint_aug::synth::load_ground_truth;
use inpaint_aug::trainer::{compare_reports, EvalReport};
use inpaint_aug::types::{ClassRegistry, SplitTag};
use serde_json::{json, Value};

use config::RunConfig;

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(
    name = "inpaint-aug",
    version,
    about = "Inpainting augmentation for long-tailed multi-label classification"
)]
struct Cli {
    /// Flat TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override a config key, e.g. `--set epochs=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-class counts and the head/tail split of a manifest.
    Stats {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train the normal-image diffusion generator.
    TrainGen {
        /// Training manifest; its label-free records are used.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// A manifest of label-free images to use instead. Any positive
        /// label is an error.
        #[arg(long, conflicts_with = "manifest")]
        normals: Option<PathBuf>,
    },
    /// Train the baseline classifier.
    TrainClassifier {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Synthesize augmented tail-class samples.
    Generate {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        classifier: PathBuf,
        /// Generator checkpoint (diffusion inpainter).
        #[arg(long)]
        generator: Option<PathBuf>,
        /// Ground-truth directory of a synthetic world (oracle inpainter).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Fine-tune a classifier on the original plus augmented data.
    Finetune {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        classifier: PathBuf,
        /// Augmented manifests; concatenated in the order given.
        #[arg(long, required = true)]
        augmented: Vec<PathBuf>,
    },
    /// Per-class precision/recall/F1 on a test manifest.
    Evaluate {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        classifier: PathBuf,
        /// Manifest whose class frequencies define the head/tail split.
        #[arg(long)]
        train_manifest: Option<PathBuf>,
    },
    /// Comparison table and plots from two evaluation reports.
    Report {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        treated: PathBuf,
        /// Training manifest for the class-distribution plot.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Write the synthetic world.
    Synth,
    /// Every stage end to end.
    Pipeline,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Stats { .. } => "stats",
            Self::TrainGen { .. } => "train-gen",
            Self::TrainClassifier { .. } => "train-classifier",
            Self::Generate { .. } => "generate",
            Self::Finetune { .. } => "finetune",
            Self::Evaluate { .. } => "evaluate",
            Self::Report { .. } => "report",
            Self::Synth => "synth",
            Self::Pipeline => "pipeline",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Runs `f` and tags any failure with the stage name.
fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    log::info!("stage {name}");
    f().with_context(|| format!("stage `{name}` failed"))
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = stage("config", || {
        RunConfig::load(cli.config.as_deref(), &cli.overrides, cli.seed)
    })?;
    let out = &cli.out;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    cfg.write_resolved(out)?;
    let name = cli.command.name();
    let details = stage(name, || dispatch(&cli.command, &cfg, out))?;
    let mut summary = json!({
        "schema_version": SCHEMA_VERSION,
        "command": name,
        "seed": cfg.seed,
    });
    if let (Value::Object(s), Value::Object(d)) = (&mut summary, details) {
        s.extend(d);
    }
    stages::save_json(&out.join("summary.json"), &summary)?;
    Ok(())
}

fn manifest_arg(arg: &Option<PathBuf>, key: &str, fallback: &str) -> Result<PathBuf> {
    match arg {
        Some(p) => Ok(p.clone()),
        None if !fallback.is_empty() => Ok(PathBuf::from(fallback)),
        None => anyhow::bail!("no manifest given: pass --manifest or set {key}"),
    }
}

fn rel(out: &Path, p: &Path) -> String {
    p.strip_prefix(out).unwrap_or(p).display().to_string()
}

fn partition_from(cfg: &RunConfig, train_manifest: &Path, out: &Path) -> Result<stages::Partitioned> {
    let train = stages::load_manifest_only(cfg, train_manifest)?;
    stages::stats(cfg, &train, out)
}

fn dispatch(cmd: &Command, cfg: &RunConfig, out: &Path) -> Result<Value> {
    match cmd {
        Command::Stats { manifest } => {
            let path = manifest_arg(manifest, "train_manifest", &cfg.train_manifest)?;
            let p = partition_from(cfg, &path, out)?;
            let text = fs::read_to_string(out.join("stats.json"))?;
            println!("{text}");
            Ok(json!({
                "total_samples": p.stats.total_samples,
                "counts": p.stats.counts,
                "tail": p.partition.tail,
                "artifacts": {"stats": "stats.json"},
            }))
        }
        Command::Synth => {
            let (world, paths) = stages::synth(cfg, &out.join("world"))?;
            Ok(json!({
                "train_samples": world.train.len(),
                "test_samples": world.test.len(),
                "artifacts": {
                    "train_manifest": rel(out, &paths.train_manifest),
                    "test_manifest": rel(out, &paths.test_manifest),
                    "truth": rel(out, &paths.truth_dir),
                    "true_entanglement": rel(out, &paths.true_entanglement),
                },
            }))
        }
        Command::TrainGen { manifest, normals } => {
            let normals = match (normals, cfg.normals_manifest.as_str()) {
                (Some(p), _) => stages::load_dataset(cfg, p, SplitTag::Train)?,
                (None, p) if !p.is_empty() && manifest.is_none() => {
                    stages::load_dataset(cfg, Path::new(p), SplitTag::Train)?
                }
                _ => {
                    let path = manifest_arg(manifest, "train_manifest", &cfg.train_manifest)?;
                    stages::normals_of(&stages::load_dataset(cfg, &path, SplitTag::Train)?)?
                }
            };
            let ckpt = stages::train_generator(cfg, &normals, out)?;
            Ok(json!({
                "normals": normals.len(),
                "generator_id": ckpt.generator_id(),
                "artifacts": {"generator": "generator.ckpt", "train_log": "train_log.jsonl"},
            }))
        }
        Command::TrainClassifier { manifest } => {
            let path = manifest_arg(manifest, "train_manifest", &cfg.train_manifest)?;
            let train = stages::load_dataset(cfg, &path, SplitTag::Train)?;
            let model = stages::train_baseline(cfg, &train, out)?;
            Ok(json!({
                "classifier_id": model.id(),
                "artifacts": {"classifier": "classifier.ckpt", "train_log": "train_log.jsonl"},
            }))
        }
        Command::Generate {
            manifest,
            classifier,
            generator,
            truth,
        } => {
            let path = manifest_arg(manifest, "train_manifest", &cfg.train_manifest)?;
            let train = stages::load_dataset(cfg, &path, SplitTag::Train)?;
            let part = stages::stats(cfg, &train.manifest, out)?;
            let model = Classifier::load(classifier)?;
            let truth_store;
            let ckpt;
            let inpainter: &dyn Inpainter = match (generator, truth) {
                (Some(g), None) => {
                    ckpt = GeneratorCheckpoint::load(g)?;
                    &ckpt
                }
                (None, Some(t)) => {
                    truth_store = load_ground_truth(t)?;
                    &OracleInpainter(&truth_store)
                }
                _ => anyhow::bail!("pass exactly one of --generator or --truth"),
            };
            let backend = stages::build_backend(cfg, train.registry(), None)?;
            let dir = out.join("augmented");
            let result = stages::generate(
                cfg,
                &stages::GenerateInputs {
                    train: &train,
                    classifier: &model,
                    inpainter,
                    backend: &backend,
                    partition: &part.partition,
                },
                &dir,
            )?;
            Ok(json!({
                "generation": result.status_counts(),
                "artifacts": {
                    "augmented_manifest": "augmented/augmented.csv",
                    "provenance": "augmented/provenance.jsonl",
                },
            }))
        }
        Command::Finetune {
            manifest,
            classifier,
            augmented,
        } => {
            let path = manifest_arg(manifest, "train_manifest", &cfg.train_manifest)?;
            let train = stages::load_dataset(cfg, &path, SplitTag::Train)?;
            let first = inpaint_aug::dataset::Dataset::load(&augmented[0], train.registry(), SplitTag::Augmented)?;
            let aug = stages::augmentation_set(cfg, first, &augmented[1..])?;
            let init = Classifier::load(classifier)?;
            let model = stages::finetune(cfg, &train, &aug, &init, out)?;
            Ok(json!({
                "augmented_samples": aug.len(),
                "classifier_id": model.id(),
                "artifacts": {"classifier": "classifier.ckpt", "train_log": "train_log.jsonl"},
            }))
        }
        Command::Evaluate {
            manifest,
            classifier,
            train_manifest,
        } => {
            let test_path = manifest_arg(manifest, "test_manifest", &cfg.test_manifest)?;
            let train_path = manifest_arg(train_manifest, "train_manifest", &cfg.train_manifest)?;
            let part = partition_from(cfg, &train_path, out)?;
            let test = stages::load_dataset(cfg, &test_path, SplitTag::Test)?;
            let model = Classifier::load(classifier)?;
            let r = stages::evaluate_into(cfg, &model, &test, &part.partition, &out.join("eval.json"))?;
            Ok(json!({
                "macro_f1": r.macro_f1,
                "head_macro_f1": r.head_macro_f1,
                "tail_macro_f1": r.tail_macro_f1,
                "artifacts": {"eval": "eval.json"},
            }))
        }
        Command::Report {
            baseline,
            treated,
            manifest,
        } => {
            let read = |p: &Path| -> Result<EvalReport> {
                let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
                Ok(serde_json::from_str(&text)?)
            };
            let (b, t) = (read(baseline)?, read(treated)?);
            let dist = match manifest {
                Some(p) => {
                    let m = stages::load_manifest_only(cfg, p)?;
                    let part = stages::stats(cfg, &m, out)?;
                    Some((part, m.registry))
                }
                None => None,
            };
            write_report(out, &b, &t, dist.as_ref().map(|(p, r)| (&p.stats, &p.partition, r)))
        }
        Command::Pipeline => pipeline(cfg, out),
    }
}

fn write_report(
    out: &Path,
    baseline: &EvalReport,
    treated: &EvalReport,
    distribution: Option<(&ClassStats, &HeadTailPartition, &ClassRegistry)>,
) -> Result<Value> {
    let delta = compare_reports(baseline, treated)?;
    fs::create_dir_all(out)?;
    let mut md = String::from("# Results\n\n");
    md.push_str(&report::comparison_table(baseline, treated, &delta, "Augmented"));
    let labels: Vec<String> = delta.per_class.iter().map(|d| d.class.clone()).collect();
    let tails: Vec<bool> = delta.per_class.iter().map(|d| d.tail).collect();
    let f1: Vec<f64> = delta.per_class.iter().map(|d| d.f1).collect();
    fs::write(
        out.join("f1_delta.svg"),
        report::bar_chart("F1 change per class", &labels, &f1, &tails),
    )?;
    md.push_str("\n![F1 change per class](f1_delta.svg)\n");
    let mut artifacts = json!({
        "report": "report.md",
        "delta": "delta.json",
        "f1_delta_plot": "f1_delta.svg",
    });
    if let Some((stats, partition, registry)) = distribution {
        let counts: Vec<f64> = stats.counts.iter().map(|c| *c as f64).collect();
        let tails: Vec<bool> = (0..registry.len()).map(|i| partition.is_tail(i)).collect();
        fs::write(
            out.join("class_distribution.svg"),
            report::bar_chart("Training samples per class", registry.names(), &counts, &tails),
        )?;
        md.push_str("\n![Training samples per class](class_distribution.svg)\n");
        artifacts["class_distribution_plot"] = json!("class_distribution.svg");
    }
    fs::write(out.join("report.md"), md)?;
    stages::save_json(&out.join("delta.json"), &delta)?;
    Ok(json!({ "delta": delta, "artifacts": artifacts }))
}

fn pipeline(cfg: &RunConfig, out: &Path) -> Result<Value> {
    let mut artifacts = serde_json::Map::new();
    let (train, test, world) = if cfg.uses_synthetic_world() {
        let (world, paths) = stage("synth", || stages::synth(cfg, &out.join("world")))?;
        artifacts.insert("world".into(), json!(rel(out, paths.train_manifest.parent().unwrap())));
        (world.train.clone(), world.test.clone(), Some((world, paths)))
    } else {
        let train = stage("load", || {
            stages::load_dataset(cfg, Path::new(&cfg.train_manifest), SplitTag::Train)
        })?;
        let test = stage("load", || {
            let p = manifest_arg(&None, "test_manifest", &cfg.test_manifest)?;
            stages::load_dataset(cfg, &p, SplitTag::Test)
        })?;
        (train, test, None)
    };
    let part = stage("stats", || stages::stats(cfg, &train.manifest, out))?;
    artifacts.insert("stats".into(), json!("stats.json"));

    let baseline = stage("train-classifier", || {
        stages::train_baseline(cfg, &train, &out.join("baseline"))
    })?;
    let base_eval = stage("evaluate", || {
        stages::evaluate_into(cfg, &baseline, &test, &part.partition, &out.join("baseline/eval.json"))
    })?;
    artifacts.insert("baseline".into(), json!("baseline"));

    let generator;
    let oracle;
    let inpainter: &dyn Inpainter = if cfg.inpainter == "oracle" {
        let (w, _) = world
            .as_ref()
            .context("the oracle inpainter needs the synthetic world")?;
        oracle = OracleInpainter(&w.truth);
        &oracle
    } else {
        generator = stage("train-gen", || {
            let normals = if cfg.normals_manifest.is_empty() {
                stages::normals_of(&train)?
            } else {
                stages::load_dataset(cfg, Path::new(&cfg.normals_manifest), SplitTag::Train)?
            };
            stages::train_generator(cfg, &normals, &out.join("generator"))
        })?;
        artifacts.insert("generator".into(), json!("generator"));
        &generator
    };
    let backend = stage("lkg", || {
        stages::build_backend(
            cfg,
            train.registry(),
            world.as_ref().map(|(_, p)| p.true_entanglement.as_path()),
        )
    })?;
    let generated = stage("generate", || {
        stages::generate(
            cfg,
            &stages::GenerateInputs {
                train: &train,
                classifier: &baseline,
                inpainter,
                backend: &backend,
                partition: &part.partition,
            },
            &out.join("augmented"),
        )
    })?;
    let status = generated.status_counts();
    artifacts.insert("augmented".into(), json!("augmented"));
    let (augmented, tuned) = stage("finetune", || {
        let augmented = stages::augmentation_set(cfg, generated.dataset, &[])?;
        let tuned = stages::finetune(cfg, &train, &augmented, &baseline, &out.join("finetuned"))?;
        Ok((augmented, tuned))
    })?;
    let tuned_eval = stage("evaluate", || {
        stages::evaluate_into(cfg, &tuned, &test, &part.partition, &out.join("finetuned/eval.json"))
    })?;
    artifacts.insert("finetuned".into(), json!("finetuned"));
    let report = stage("report", || {
        write_report(
            &out.join("report"),
            &base_eval,
            &tuned_eval,
            Some((&part.stats, &part.partition, train.registry())),
        )
    })?;
    artifacts.insert("report".into(), json!("report/report.md"));
    Ok(json!({
        "train_samples": train.len(),
        "test_samples": test.len(),
        "tail_classes": part.partition.tail,
        "generation": status,
        "augmented_samples": augmented.len(),
        "baseline": {
            "classifier_id": baseline.id(),
            "macro_f1": base_eval.macro_f1,
            "head_macro_f1": base_eval.head_macro_f1,
            "tail_macro_f1": base_eval.tail_macro_f1,
        },
        "finetuned": {
            "classifier_id": tuned.id(),
            "macro_f1": tuned_eval.macro_f1,
            "head_macro_f1": tuned_eval.head_macro_f1,
            "tail_macro_f1": tuned_eval.tail_macro_f1,
        },
        "delta": report["delta"],
        "artifacts": artifacts,
    }))
}
