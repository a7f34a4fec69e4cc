//! Flat key-value run configuration.
//!
//! A config file is a TOML table of top-level keys only. Every key has a
//! default, so an empty file (or none at all) describes a run on the default
//! synthetic world. `--set key=value` flags override file keys.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use inpaint_aug::augment::GenerationConfig;
use inpaint_aug::cam::default_dilation_radius;
use inpaint_aug::generator::{DiffusionConfig, NoiseSchedule};
use inpaint_aug::lkg::{LlmConfig, SelectionMode};
use inpaint_aug::rng::derive_seed;
use inpaint_aug::stats::PartitionPolicy;
use inpaint_aug::synth::{LesionSpec, SynthWorldConfig};
use inpaint_aug::trainer::{LossKind, Optimizer, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stage derives its own seed from it.
    pub seed: u64,

    /// Class registry: empty (read the manifest header), "cxr",
    /// "synthetic:K", or a path to a JSON list of names.
    pub registry: String,
    /// Training manifest. Empty means: generate the synthetic world.
    pub train_manifest: String,
    pub test_manifest: String,
    /// Label-free images for the generator. Empty means: the label-free
    /// records of the training manifest.
    pub normals_manifest: String,
    /// Explicit tail classes. Empty means: frequency policy.
    pub tail_classes: Vec<String>,
    pub tail_fraction: f64,

    pub synth_train_samples: usize,
    pub synth_test_samples: usize,
    pub synth_image_size: usize,
    /// Entangled class pairs as "classA|classB=probability".
    pub synth_entangle: Vec<String>,

    pub image_size: usize,
    pub channels: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// "adam" or "sgd".
    pub optimizer: String,
    /// "bce" or "focal".
    pub loss: String,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub decision_threshold: f64,

    pub finetune_epochs: usize,
    /// "pil" or "all-at-once".
    pub schedule: String,
    pub pil_beta: f64,
    /// Extra augmented manifests concatenated with the generated one.
    pub augmentation_sources: Vec<String>,

    pub gen_timesteps: usize,
    pub gen_hidden_channels: usize,
    pub gen_epochs: usize,
    pub gen_batch_size: usize,
    pub gen_learning_rate: f64,

    /// "diffusion" or "oracle" (synthetic world only).
    pub inpainter: String,
    pub cam_threshold: f64,
    /// Defaults to 2 px per 64 px of image side.
    pub dilation_radius: Option<usize>,
    pub entangle_threshold: f64,
    pub max_mask_fraction: f64,
    /// "threshold" or "argmax".
    pub selection: String,
    pub copies_per_source: usize,

    /// "none", "matrix" or "llm".
    pub backend: String,
    pub matrix_path: String,
    pub llm_endpoint: String,
    pub llm_model: String,
    pub llm_api_key_env: String,
    pub llm_cache: String,
    /// With the llm backend: fall back to `matrix_path` when the service fails.
    pub llm_fallback_to_matrix: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::desk();
        let diff = DiffusionConfig::desk(64);
        let llm = LlmConfig::default();
        let world = SynthWorldConfig::default_world();
        Self {
            seed: 0,
            registry: String::new(),
            train_manifest: String::new(),
            test_manifest: String::new(),
            normals_manifest: String::new(),
            tail_classes: Vec::new(),
            tail_fraction: inpaint_aug::stats::DEFAULT_TAIL_FRACTION,
            synth_train_samples: world.train_samples,
            synth_test_samples: world.test_samples,
            synth_image_size: world.image_size,
            synth_entangle: Vec::new(),
            image_size: train.image_size,
            channels: train.channels.to_vec(),
            epochs: train.epochs,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            optimizer: "adam".into(),
            loss: "bce".into(),
            focal_gamma: inpaint_aug::trainer::DEFAULT_FOCAL_GAMMA,
            focal_alpha: inpaint_aug::trainer::DEFAULT_FOCAL_ALPHA,
            decision_threshold: inpaint_aug::trainer::DEFAULT_DECISION_THRESHOLD,
            finetune_epochs: train.epochs,
            schedule: "pil".into(),
            pil_beta: inpaint_aug::pil::DEFAULT_BETA,
            augmentation_sources: Vec::new(),
            gen_timesteps: diff.timesteps,
            gen_hidden_channels: diff.hidden_channels,
            gen_epochs: diff.train_epochs,
            gen_batch_size: diff.batch_size,
            gen_learning_rate: diff.learning_rate,
            inpainter: "diffusion".into(),
            cam_threshold: inpaint_aug::cam::DEFAULT_CAM_THRESHOLD,
            dilation_radius: None,
            entangle_threshold: inpaint_aug::lkg::DEFAULT_ENTANGLE_THRESHOLD,
            max_mask_fraction: inpaint_aug::augment::DEFAULT_MAX_MASK_FRACTION,
            selection: "threshold".into(),
            copies_per_source: 1,
            backend: "none".into(),
            matrix_path: String::new(),
            llm_endpoint: llm.endpoint,
            llm_model: llm.model,
            llm_api_key_env: llm.api_key_env.unwrap_or_default(),
            llm_cache: String::new(),
            llm_fallback_to_matrix: false,
        }
    }
}

fn parse_override(raw: &str) -> Result<(String, toml::Value)> {
    let (key, value) = raw
        .split_once('=')
        .with_context(|| format!("override {raw:?} is not of the form key=value"))?;
    let key = key.trim().to_owned();
    let value = value.trim();
    // Anything that is not a TOML literal is taken as a bare string.
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_owned()));
    Ok((key, parsed))
}

impl RunConfig {
    /// Reads `path` (if any), applies `overrides` and an explicit seed, and
    /// fills derived defaults.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut table = match path {
            Some(p) => fs::read_to_string(p)
                .with_context(|| format!("cannot read config {}", p.display()))?
                .parse::<toml::Table>()
                .with_context(|| format!("config {} is not valid TOML", p.display()))?,
            None => toml::Table::new(),
        };
        if let Some((k, _)) = table.iter().find(|(_, v)| v.is_table()) {
            bail!("config must be flat, but key {k:?} holds a table");
        }
        for o in overrides {
            let (k, v) = parse_override(o)?;
            table.insert(k, v);
        }
        if let Some(s) = seed {
            table.insert("seed".into(), toml::Value::Integer(s as i64));
        }
        let mut cfg: Self = toml::Value::Table(table).try_into().context("invalid configuration")?;
        if cfg.dilation_radius.is_none() {
            cfg.dilation_radius = Some(default_dilation_radius(cfg.image_size));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config()?;
        self.finetune_config()?;
        self.generation_config().validate()?;
        self.diffusion_config(1).validate()?;
        if self.channels.len() != 3 {
            bail!("channels must list exactly three widths");
        }
        if !matches!(self.schedule.as_str(), "pil" | "all-at-once") {
            bail!("schedule must be \"pil\" or \"all-at-once\", got {:?}", self.schedule);
        }
        if !matches!(self.inpainter.as_str(), "diffusion" | "oracle") {
            bail!(
                "inpainter must be \"diffusion\" or \"oracle\", got {:?}",
                self.inpainter
            );
        }
        if !matches!(self.backend.as_str(), "none" | "matrix" | "llm") {
            bail!(
                "backend must be \"none\", \"matrix\" or \"llm\", got {:?}",
                self.backend
            );
        }
        if self.backend == "matrix" && self.matrix_path.is_empty() && !self.train_manifest.is_empty() {
            bail!("backend \"matrix\" needs matrix_path");
        }
        if self.inpainter == "oracle" && !self.train_manifest.is_empty() {
            bail!("the oracle inpainter needs ground truth and only works on the synthetic world");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let p = dir.join("resolved_config.toml");
        fs::write(&p, self.to_toml())?;
        Ok(p)
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, &[stage])
    }

    pub fn uses_synthetic_world(&self) -> bool {
        self.train_manifest.is_empty()
    }

    fn loss_kind(&self) -> Result<LossKind> {
        Ok(match self.loss.as_str() {
            "bce" => LossKind::Bce,
            "focal" => LossKind::Focal {
                gamma: self.focal_gamma,
                alpha: self.focal_alpha,
            },
            other => bail!("loss must be \"bce\" or \"focal\", got {other:?}"),
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let optimizer = match self.optimizer.as_str() {
            "adam" => Optimizer::Adam,
            "sgd" => Optimizer::Sgd,
            other => bail!("optimizer must be \"adam\" or \"sgd\", got {other:?}"),
        };
        let channels: [usize; 3] = self
            .channels
            .clone()
            .try_into()
            .map_err(|_| anyhow::anyhow!("channels must list exactly three widths"))?;
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer,
            loss: self.loss_kind()?,
            image_size: self.image_size,
            channels,
            seed: self.stage_seed("classifier"),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn finetune_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.finetune_epochs,
            seed: self.stage_seed("finetune"),
            ..self.train_config()?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn diffusion_config(&self, channels: usize) -> DiffusionConfig {
        DiffusionConfig {
            image_size: self.image_size,
            channels,
            timesteps: self.gen_timesteps,
            noise_schedule: NoiseSchedule::scaled_linear(self.gen_timesteps),
            hidden_channels: self.gen_hidden_channels,
            train_epochs: self.gen_epochs,
            batch_size: self.gen_batch_size,
            learning_rate: self.gen_learning_rate,
        }
    }

    pub fn generation_config(&self) -> GenerationConfig {
        GenerationConfig {
            cam_threshold: self.cam_threshold,
            dilation_radius: self
                .dilation_radius
                .unwrap_or_else(|| default_dilation_radius(self.image_size)),
            entangle_threshold: self.entangle_threshold,
            max_mask_fraction: self.max_mask_fraction,
            selection: if self.selection == "argmax" {
                SelectionMode::Argmax
            } else {
                SelectionMode::Threshold
            },
            copies_per_source: self.copies_per_source,
            seed: self.stage_seed("generation"),
        }
    }

    pub fn partition_policy(&self) -> PartitionPolicy {
        if self.tail_classes.is_empty() {
            PartitionPolicy::Frequency(self.tail_fraction)
        } else {
            PartitionPolicy::Explicit(self.tail_classes.clone())
        }
    }

    pub fn llm_config(&self) -> LlmConfig {
        LlmConfig {
            endpoint: self.llm_endpoint.clone(),
            model: self.llm_model.clone(),
            api_key_env: (!self.llm_api_key_env.is_empty()).then(|| self.llm_api_key_env.clone()),
            cache_path: (!self.llm_cache.is_empty()).then(|| PathBuf::from(&self.llm_cache)),
            ..LlmConfig::default()
        }
    }

    /// The default world rescaled to `synth_image_size`, with the configured
    /// sizes and entanglement.
    pub fn world_config(&self) -> Result<SynthWorldConfig> {
        let mut w = SynthWorldConfig::default_world();
        let scale = self.synth_image_size as f64 / w.image_size as f64;
        if (scale - 1.0).abs() > f64::EPSILON {
            w.lesions = w
                .lesions
                .iter()
                .map(|l| LesionSpec {
                    shape: l.shape.scaled_uniform(scale),
                    ..*l
                })
                .collect();
            w.min_gap = ((w.min_gap as f64) * scale).round().max(1.0) as usize;
        }
        w.image_size = self.synth_image_size;
        w.train_samples = self.synth_train_samples;
        w.test_samples = self.synth_test_samples;
        w.seed = self.stage_seed("synth");
        let registry = w.registry();
        for spec in &self.synth_entangle {
            let (pair, p) = spec
                .split_once('=')
                .with_context(|| format!("entanglement {spec:?} is not of the form a|b=p"))?;
            let (a, b) = pair
                .split_once('|')
                .with_context(|| format!("entanglement {spec:?} is not of the form a|b=p"))?;
            let p: f64 = p
                .trim()
                .parse()
                .with_context(|| format!("bad probability in {spec:?}"))?;
            w.set_entanglement(registry.require_index(a.trim())?, registry.require_index(b.trim())?, p);
        }
        w.validate()?;
        Ok(w)
    }
}
