//! Turns multi-label samples into tail-class samples by inpainting their
//! head-class lesions with normal texture.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cam::{
    cam_to_mask, default_dilation_radius, grad_cam, union_masks, ClassifierHandle, InpaintMask, DEFAULT_CAM_THRESHOLD,
};
use crate::classifier::Classifier;
use crate::dataset::{Dataset, SampleRef};
use crate::error::{Error, Result};
use crate::generator::{inpaint, GeneratorCheckpoint, NoiseSeed};
use crate::imageio::{save_image, save_mask};
use crate::lkg::{
    present_groups, query_entanglement, select_inpaint_targets, KnowledgeBackend, SelectionMode,
    DEFAULT_ENTANGLE_THRESHOLD,
};
use crate::manifest::write_manifest;
use crate::rng::derive_seed;
use crate::stats::HeadTailPartition;
use crate::synth::{oracle_inpaint, GroundTruth};
use crate::types::{ClassRegistry, ImageTensor, LabelVector, Manifest, ProvenanceRecord, SampleRecord, SplitTag};

pub const DEFAULT_MAX_MASK_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub cam_threshold: f64,
    pub dilation_radius: usize,
    pub entangle_threshold: f64,
    pub max_mask_fraction: f64,
    pub selection: SelectionMode,
    /// Augmented samples per eligible source, each with its own noise seed.
    pub copies_per_source: usize,
    pub seed: u64,
}

impl GenerationConfig {
    pub fn for_image_size(image_size: usize) -> Self {
        Self {
            cam_threshold: DEFAULT_CAM_THRESHOLD,
            dilation_radius: default_dilation_radius(image_size),
            entangle_threshold: DEFAULT_ENTANGLE_THRESHOLD,
            max_mask_fraction: DEFAULT_MAX_MASK_FRACTION,
            selection: SelectionMode::Threshold,
            copies_per_source: 1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.cam_threshold) {
            return Err(Error::arg("CAM threshold must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.entangle_threshold) {
            return Err(Error::arg("entanglement threshold must lie in [0, 1]"));
        }
        if !(self.max_mask_fraction > 0.0 && self.max_mask_fraction <= 1.0) {
            return Err(Error::arg("maximum mask fraction must lie in (0, 1]"));
        }
        if self.copies_per_source == 0 {
            return Err(Error::arg("copies per source must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SkipReason {
    NoHead,
    NoTail,
    EmptyCam,
    MaskTooLarge,
    AllHeadsRetained,
}

impl SkipReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::NoHead => "no-head",
            Self::NoTail => "no-tail",
            Self::EmptyCam => "empty-cam",
            Self::MaskTooLarge => "mask-too-large",
            Self::AllHeadsRetained => "all-heads-retained",
        }
    }
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub image: ImageTensor,
    pub labels: LabelVector,
    pub mask: InpaintMask,
    pub provenance: ProvenanceRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Synthesis {
    Emitted(Box<AugmentedSample>),
    Skipped(SkipReason),
}

/// Fills masked pixels with normal texture.
pub trait Inpainter {
    fn id(&self) -> String;

    fn inpaint(&self, source_id: &str, image: &ImageTensor, mask: &InpaintMask, seed: u64) -> Result<ImageTensor>;
}

impl Inpainter for GeneratorCheckpoint {
    fn id(&self) -> String {
        self.generator_id().to_owned()
    }

    fn inpaint(&self, _source_id: &str, image: &ImageTensor, mask: &InpaintMask, seed: u64) -> Result<ImageTensor> {
        inpaint(self, image, mask, NoiseSeed(seed))
    }
}

/// Restores each sample's stored pristine background.
pub struct OracleInpainter<'a>(pub &'a GroundTruth);

impl Inpainter for OracleInpainter<'_> {
    fn id(&self) -> String {
        "oracle".into()
    }

    fn inpaint(&self, source_id: &str, image: &ImageTensor, mask: &InpaintMask, _seed: u64) -> Result<ImageTensor> {
        oracle_inpaint(image, mask, self.0.get(source_id)?)
    }
}

/// Shared, read-only inputs of a generation pass.
pub struct GenerationContext<'a> {
    pub registry: &'a ClassRegistry,
    pub partition: &'a HeadTailPartition,
    pub inpainter: &'a dyn Inpainter,
    pub backend: &'a dyn KnowledgeBackend,
    pub config: &'a GenerationConfig,
}

pub fn synthesize_sample(
    sample: SampleRef<'_>,
    classifier: &mut dyn ClassifierHandle,
    ctx: &GenerationContext<'_>,
    noise_seed: u64,
) -> Result<Synthesis> {
    let cfg = ctx.config;
    let (heads, tails) = present_groups(sample.labels, ctx.partition);
    if heads.is_empty() {
        return Ok(Synthesis::Skipped(SkipReason::NoHead));
    }
    if tails.is_empty() {
        return Ok(Synthesis::Skipped(SkipReason::NoTail));
    }
    let scores = query_entanglement(ctx.backend, ctx.registry, &heads, &tails)?;
    let decision = select_inpaint_targets(
        sample.labels,
        ctx.partition,
        &scores,
        cfg.entangle_threshold,
        cfg.selection,
    )?;
    if decision.inpaint_targets.is_empty() {
        return Ok(Synthesis::Skipped(SkipReason::AllHeadsRetained));
    }
    let mut masks = Vec::with_capacity(decision.inpaint_targets.len());
    for &h in &decision.inpaint_targets {
        let map = grad_cam(classifier, sample.image, h)?;
        if map.is_all_zero() {
            return Ok(Synthesis::Skipped(SkipReason::EmptyCam));
        }
        masks.push(cam_to_mask(&map, cfg.cam_threshold, cfg.dilation_radius)?);
    }
    let mask = union_masks(&masks)?;
    let area = mask.area_fraction();
    if area > cfg.max_mask_fraction {
        return Ok(Synthesis::Skipped(SkipReason::MaskTooLarge));
    }
    let image = ctx.inpainter.inpaint(sample.id, sample.image, &mask, noise_seed)?;
    let mut labels = sample.labels.clone();
    for &h in &decision.inpaint_targets {
        labels.set(h, false);
    }
    let provenance = ProvenanceRecord {
        source_id: sample.id.to_owned(),
        inpainted_classes: decision.inpaint_targets,
        retained_head_classes: decision.retained_heads,
        mask_area_fraction: area,
        generator_id: ctx.inpainter.id(),
        noise_seed,
        cam_threshold: cfg.cam_threshold,
    };
    Ok(Synthesis::Emitted(Box::new(AugmentedSample {
        image,
        labels,
        mask,
        provenance,
    })))
}

/// One line of the provenance log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceLine {
    /// `emitted` or `skipped:<reason>`.
    pub status: String,
    pub source_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
    pub source_labels: BTreeSet<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<BTreeSet<usize>>,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<ProvenanceRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ProvenanceLine {
    pub fn is_emitted(&self) -> bool {
        self.status == "emitted"
    }
}

pub struct GenerationOutput {
    /// Augmented samples in source order.
    pub dataset: Dataset,
    /// Union inpainting mask of each augmented sample.
    pub masks: Vec<InpaintMask>,
    pub log: Vec<ProvenanceLine>,
}

impl GenerationOutput {
    /// Status string to number of log lines.
    pub fn status_counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for l in &self.log {
            *m.entry(l.status.clone()).or_insert(0) += 1;
        }
        m
    }
}

pub fn augmented_id(source_id: &str, copy: usize) -> String {
    format!("{source_id}-aug{copy}")
}

/// Runs synthesis over every sample of `source`. Skips and per-sample
/// failures are logged and do not stop the pass. With `out_dir`, writes
/// `images/`, `masks/`, `augmented.csv` and `provenance.jsonl` there.
pub fn run_generation(
    source: &Dataset,
    classifier: &Classifier,
    ctx: &GenerationContext<'_>,
    out_dir: Option<&Path>,
) -> Result<GenerationOutput> {
    ctx.config.validate()?;
    if ctx.registry != source.registry() || ctx.partition.num_classes() != ctx.registry.len() {
        return Err(Error::arg("registry or partition does not match the source manifest"));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir.join("images"))?;
        fs::create_dir_all(dir.join("masks"))?;
    }
    let mut handle = classifier.handle();
    let mut records = Vec::new();
    let mut images = Vec::new();
    let mut masks = Vec::new();
    let mut log = Vec::with_capacity(source.len());
    for sample in source.iter() {
        let source_labels = sample.labels.present();
        let line = |status: String| ProvenanceLine {
            status,
            source_id: sample.id.to_owned(),
            sample_id: None,
            source_labels: source_labels.clone(),
            labels: None,
            provenance: None,
            error: None,
        };
        for copy in 0..ctx.config.copies_per_source {
            let seed = derive_seed(ctx.config.seed, &["inpaint", sample.id, &copy.to_string()]);
            match synthesize_sample(sample, &mut handle, ctx, seed) {
                Ok(Synthesis::Emitted(aug)) => {
                    let id = augmented_id(sample.id, copy);
                    let image_path = format!("images/{id}.png");
                    if let Some(dir) = out_dir {
                        save_image(&aug.image, &dir.join(&image_path))?;
                        save_mask(&aug.mask, &dir.join("masks").join(format!("{id}.png")))?;
                    }
                    log.push(ProvenanceLine {
                        sample_id: Some(id.clone()),
                        labels: Some(aug.labels.present()),
                        provenance: Some(aug.provenance),
                        ..line("emitted".into())
                    });
                    records.push(SampleRecord {
                        id,
                        image_path,
                        labels: aug.labels,
                    });
                    images.push(aug.image);
                    masks.push(aug.mask);
                }
                Ok(Synthesis::Skipped(reason)) => {
                    log.push(line(format!("skipped:{reason}")));
                    // Skip decisions do not depend on the noise seed.
                    break;
                }
                Err(e) => {
                    log::warn!("generation failed for {}: {e}", sample.id);
                    log.push(ProvenanceLine {
                        error: Some(e.to_string()),
                        ..line("skipped:error".into())
                    });
                    break;
                }
            }
        }
    }
    let manifest = Manifest::new(ctx.registry.clone(), records, SplitTag::Augmented)?;
    if let Some(dir) = out_dir {
        write_manifest(&manifest, &dir.join("augmented.csv"))?;
        let mut f = std::io::BufWriter::new(fs::File::create(dir.join("provenance.jsonl"))?);
        for l in &log {
            serde_json::to_writer(&mut f, l)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
    }
    Ok(GenerationOutput {
        dataset: Dataset::new(manifest, images)?,
        masks,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cam::FeatureMap;
    use crate::lkg::NoGuidance;

    /// Evidence for every class sits in the top-left 2×2 block of a 4×4
    /// feature grid.
    struct Corner {
        k: usize,
        zero: bool,
    }

    impl ClassifierHandle for Corner {
        fn num_classes(&self) -> usize {
            self.k
        }
        fn target_layer(&self) -> Option<&str> {
            Some("f")
        }
        fn forward(&mut self, _image: &ImageTensor) -> Result<Vec<f32>> {
            Ok(vec![0.0; self.k])
        }
        fn activations_at(&self, _layer: &str) -> Result<FeatureMap> {
            let mut data = vec![0.0; 16];
            for i in [0, 1, 4, 5] {
                data[i] = 1.0;
            }
            Ok(FeatureMap {
                channels: 1,
                height: 4,
                width: 4,
                data,
            })
        }
        fn gradients_at(&mut self, _layer: &str, _class: usize) -> Result<FeatureMap> {
            Ok(FeatureMap {
                channels: 1,
                height: 4,
                width: 4,
                data: vec![if self.zero { 0.0 } else { 1.0 }; 16],
            })
        }
    }

    /// Paints masked pixels white.
    struct White;

    impl Inpainter for White {
        fn id(&self) -> String {
            "white".into()
        }
        fn inpaint(&self, _: &str, image: &ImageTensor, mask: &InpaintMask, _: u64) -> Result<ImageTensor> {
            let data = image
                .data()
                .iter()
                .enumerate()
                .map(|(i, v)| if mask.bits()[i] { 1.0 } else { *v })
                .collect();
            ImageTensor::new(image.height(), image.width(), 1, data)
        }
    }

    fn setup() -> (ClassRegistry, HeadTailPartition, GenerationConfig) {
        let reg = ClassRegistry::new(["A", "B", "T"]).unwrap();
        let part = HeadTailPartition::from_tail(3, BTreeSet::from([2])).unwrap();
        let mut cfg = GenerationConfig::for_image_size(16);
        cfg.dilation_radius = 0;
        (reg, part, cfg)
    }

    fn run(labels: &[usize], zero: bool, cfg: &GenerationConfig) -> Synthesis {
        let (reg, part, _) = setup();
        let image = ImageTensor::filled(16, 16, 1, 0.2).unwrap();
        let labels = LabelVector::from_indices(3, labels.iter().copied()).unwrap();
        let ctx = GenerationContext {
            registry: &reg,
            partition: &part,
            inpainter: &White,
            backend: &NoGuidance,
            config: cfg,
        };
        let s = SampleRef {
            id: "s",
            image: &image,
            labels: &labels,
        };
        synthesize_sample(s, &mut Corner { k: 3, zero }, &ctx, 7).unwrap()
    }

    #[test]
    fn head_cleared_tail_kept() {
        let (_, _, cfg) = setup();
        let Synthesis::Emitted(a) = run(&[0, 2], false, &cfg) else {
            panic!("expected emission");
        };
        assert_eq!(a.labels.present(), BTreeSet::from([2]));
        assert_eq!(a.provenance.inpainted_classes, BTreeSet::from([0]));
        assert_eq!(a.provenance.noise_seed, 7);
        for (i, v) in a.image.data().iter().enumerate() {
            assert_eq!(*v, if a.mask.bits()[i] { 1.0 } else { 0.2 });
        }
        assert!(a.mask.count() > 0);
    }

    #[test]
    fn skip_reasons() {
        let (_, _, cfg) = setup();
        assert_eq!(run(&[2], false, &cfg), Synthesis::Skipped(SkipReason::NoHead));
        assert_eq!(run(&[0, 1], false, &cfg), Synthesis::Skipped(SkipReason::NoTail));
        assert_eq!(run(&[0, 2], true, &cfg), Synthesis::Skipped(SkipReason::EmptyCam));
        let mut tight = cfg.clone();
        tight.max_mask_fraction = 0.01;
        assert_eq!(
            run(&[0, 2], false, &tight),
            Synthesis::Skipped(SkipReason::MaskTooLarge)
        );
    }

    #[test]
    fn all_heads_retained() {
        let (reg, part, cfg) = setup();
        let mut m = crate::lkg::EntanglementMatrix::zeros(&reg, crate::lkg::MatrixProvenance::HandAuthored);
        m.set(0, 2, 1.0);
        let backend = crate::lkg::MatrixBackend { matrix: m };
        let image = ImageTensor::filled(16, 16, 1, 0.2).unwrap();
        let labels = LabelVector::from_indices(3, [0, 2]).unwrap();
        let ctx = GenerationContext {
            registry: &reg,
            partition: &part,
            inpainter: &White,
            backend: &backend,
            config: &cfg,
        };
        let s = SampleRef {
            id: "s",
            image: &image,
            labels: &labels,
        };
        assert_eq!(
            synthesize_sample(s, &mut Corner { k: 3, zero: false }, &ctx, 0).unwrap(),
            Synthesis::Skipped(SkipReason::AllHeadsRetained)
        );
    }

    #[test]
    fn config_validation() {
        let mut c = GenerationConfig::for_image_size(64);
        assert_eq!(c.dilation_radius, 2);
        c.max_mask_fraction = 0.0;
        assert!(c.validate().is_err());
    }
}
