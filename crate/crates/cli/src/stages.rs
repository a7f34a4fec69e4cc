//! One function per pipeline stage. Each writes its artifacts under the
//! directory it is given and returns what later stages need.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use inpaint_aug::augment::{run_generation, GenerationContext, GenerationOutput, Inpainter};
use inpaint_aug::classifier::Classifier;
use inpaint_aug::dataset::Dataset;
use inpaint_aug::generator::{train_normal_generator, GeneratorCheckpoint};
use inpaint_aug::lkg::{EntanglementMatrix, FallbackBackend, KnowledgeBackend, LlmBackend, MatrixBackend, NoGuidance};
use inpaint_aug::manifest::load_manifest;
use inpaint_aug::stats::{class_report, compute_class_stats, partition_head_tail, ClassStats, HeadTailPartition};
use inpaint_aug::synth::{generate_synthetic_dataset, write_world, SynthWorld, WorldPaths};
use inpaint_aug::trainer::{
    evaluate, train_classifier, ConstantProvider, EpochProvider, EvalReport, PilProvider, TrainingLog,
};
use inpaint_aug::types::{ClassRegistry, Manifest, SplitTag};
use serde_json::json;

use crate::config::RunConfig;

/// Reads the class names from a manifest's header row.
pub fn registry_from_header(manifest: &Path) -> Result<ClassRegistry> {
    let mut reader =
        csv::Reader::from_path(manifest).with_context(|| format!("cannot open manifest {}", manifest.display()))?;
    let header = reader.headers()?;
    if header.len() < 3 || &header[0] != "id" || &header[1] != "path" {
        bail!("{}: header must start with id,path", manifest.display());
    }
    Ok(ClassRegistry::new(header.iter().skip(2))?)
}

pub fn resolve_registry(cfg: &RunConfig, manifest: &Path) -> Result<ClassRegistry> {
    let r = cfg.registry.as_str();
    Ok(match r {
        "" => registry_from_header(manifest)?,
        "cxr" => ClassRegistry::cxr(),
        _ => match r.strip_prefix("synthetic:") {
            Some(k) => ClassRegistry::synthetic(k.parse().context("bad synthetic class count")?)?,
            None => ClassRegistry::load_json(Path::new(r))?,
        },
    })
}

pub fn load_dataset(cfg: &RunConfig, path: &Path, split: SplitTag) -> Result<Dataset> {
    let registry = resolve_registry(cfg, path)?;
    Dataset::load(path, &registry, split).with_context(|| format!("cannot load {}", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub struct Partitioned {
    pub stats: ClassStats,
    pub partition: HeadTailPartition,
}

/// Manifest labels without the images.
pub fn load_manifest_only(cfg: &RunConfig, path: &Path) -> Result<Manifest> {
    let registry = resolve_registry(cfg, path)?;
    load_manifest(path, &registry).with_context(|| format!("cannot load {}", path.display()))
}

pub fn stats(cfg: &RunConfig, train: &Manifest, out: &Path) -> Result<Partitioned> {
    let stats = compute_class_stats(train)?;
    let partition = partition_head_tail(&stats, &train.registry, &cfg.partition_policy())?;
    let rows = class_report(&stats, &train.registry, &partition);
    write_json(
        &out.join("stats.json"),
        &json!({
            "total_samples": stats.total_samples,
            "classes": rows,
            "warnings": partition.warnings,
        }),
    )?;
    Ok(Partitioned { stats, partition })
}

pub fn synth(cfg: &RunConfig, dir: &Path) -> Result<(SynthWorld, WorldPaths)> {
    let world = generate_synthetic_dataset(&cfg.world_config()?)?;
    let paths = write_world(&world, dir)?;
    let degraded: usize = world.truth.samples.values().map(|t| t.degraded.len()).sum();
    if degraded > 0 {
        log::warn!("{degraded} lesion placements missed their spacing constraints");
    }
    Ok((world, paths))
}

/// The label-free records of `train`.
pub fn normals_of(train: &Dataset) -> Result<Dataset> {
    Ok(train.filter(|s| !s.labels.any())?)
}

fn write_log(path: &Path, log: &TrainingLog) -> Result<()> {
    fs::create_dir_all(path.parent().expect("log path has a parent"))?;
    fs::write(path, log.to_jsonl())?;
    Ok(())
}

pub fn train_generator(cfg: &RunConfig, normals: &Dataset, dir: &Path) -> Result<GeneratorCheckpoint> {
    let channels = normals
        .images
        .first()
        .map(|i| i.channels())
        .context("no normal images to train the generator on")?;
    let (ckpt, log) = train_normal_generator(normals, cfg.diffusion_config(channels), cfg.stage_seed("generator"))?;
    fs::create_dir_all(dir)?;
    ckpt.save(&dir.join("generator.ckpt"))?;
    write_log(&dir.join("train_log.jsonl"), &log)?;
    Ok(ckpt)
}

fn in_channels(ds: &Dataset) -> Result<usize> {
    Ok(ds.images.first().context("empty training set")?.channels())
}

pub fn train_baseline(cfg: &RunConfig, train: &Dataset, dir: &Path) -> Result<Classifier> {
    let tc = cfg.train_config()?;
    let (model, log) = train_classifier(
        &tc,
        &ConstantProvider(train),
        None,
        train.registry().len(),
        in_channels(train)?,
    )?;
    fs::create_dir_all(dir)?;
    model.save(&dir.join("classifier.ckpt"))?;
    write_log(&dir.join("train_log.jsonl"), &log)?;
    Ok(model)
}

/// Every-epoch mixing of the full augmented set.
struct AllAtOnce<'a> {
    original: &'a Dataset,
    augmented: &'a Dataset,
}

impl EpochProvider for AllAtOnce<'_> {
    fn view(&self, _epoch: usize) -> inpaint_aug::Result<Vec<inpaint_aug::dataset::SampleRef<'_>>> {
        Ok(self.original.iter().chain(self.augmented.iter()).collect())
    }
}

pub fn finetune(
    cfg: &RunConfig,
    train: &Dataset,
    augmented: &Dataset,
    init: &Classifier,
    dir: &Path,
) -> Result<Classifier> {
    let tc = cfg.finetune_config()?;
    let k = train.registry().len();
    let c = in_channels(train)?;
    let (model, log) = if cfg.schedule == "pil" {
        let provider = PilProvider::new(train, augmented, cfg.pil_beta, cfg.stage_seed("pil-order"))?;
        train_classifier(&tc, &provider, Some(init), k, c)?
    } else {
        let provider = AllAtOnce {
            original: train,
            augmented,
        };
        train_classifier(&tc, &provider, Some(init), k, c)?
    };
    fs::create_dir_all(dir)?;
    model.save(&dir.join("classifier.ckpt"))?;
    write_log(&dir.join("train_log.jsonl"), &log)?;
    Ok(model)
}

pub fn build_backend(
    cfg: &RunConfig,
    registry: &ClassRegistry,
    default_matrix: Option<&Path>,
) -> Result<Box<dyn KnowledgeBackend>> {
    let matrix = || -> Result<MatrixBackend> {
        let path = if cfg.matrix_path.is_empty() {
            default_matrix.context("backend needs matrix_path")?.to_owned()
        } else {
            PathBuf::from(&cfg.matrix_path)
        };
        Ok(MatrixBackend {
            matrix: EntanglementMatrix::load(&path, registry)?,
        })
    };
    Ok(match cfg.backend.as_str() {
        "none" => Box::new(NoGuidance),
        "matrix" => Box::new(matrix()?),
        "llm" => {
            let llm = LlmBackend::http(cfg.llm_config())?;
            if cfg.llm_fallback_to_matrix {
                Box::new(FallbackBackend {
                    primary: llm,
                    fallback: matrix()?,
                })
            } else {
                Box::new(llm)
            }
        }
        other => bail!("unknown backend {other:?}"),
    })
}

pub struct GenerateInputs<'a> {
    pub train: &'a Dataset,
    pub classifier: &'a Classifier,
    pub inpainter: &'a dyn Inpainter,
    pub backend: &'a dyn KnowledgeBackend,
    pub partition: &'a HeadTailPartition,
}

pub fn generate(cfg: &RunConfig, inputs: &GenerateInputs<'_>, dir: &Path) -> Result<GenerationOutput> {
    let gc = cfg.generation_config();
    let ctx = GenerationContext {
        registry: inputs.train.registry(),
        partition: inputs.partition,
        inpainter: inputs.inpainter,
        backend: inputs.backend,
        config: &gc,
    };
    let out = run_generation(inputs.train, inputs.classifier, &ctx, Some(dir))?;
    log::info!("generation: {:?}", out.status_counts());
    Ok(out)
}

/// The generated set followed by every configured extra source.
pub fn augmentation_set(cfg: &RunConfig, generated: Dataset, extra: &[PathBuf]) -> Result<Dataset> {
    let mut parts = vec![generated];
    for p in extra
        .iter()
        .cloned()
        .chain(cfg.augmentation_sources.iter().map(PathBuf::from))
    {
        let registry = parts[0].registry().clone();
        parts.push(
            Dataset::load(&p, &registry, SplitTag::Augmented)
                .with_context(|| format!("cannot load {}", p.display()))?,
        );
    }
    if parts.len() == 1 {
        return Ok(parts.pop().expect("one part"));
    }
    Ok(Dataset::concat(&parts, SplitTag::Augmented)?)
}

pub fn evaluate_into(
    cfg: &RunConfig,
    model: &Classifier,
    test: &Dataset,
    partition: &HeadTailPartition,
    path: &Path,
) -> Result<EvalReport> {
    let report = evaluate(model, test, partition, cfg.decision_threshold)?;
    write_json(path, &report)?;
    Ok(report)
}

pub fn save_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    write_json(path, value)
}
