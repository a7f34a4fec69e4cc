//! A synthetic long-tailed multi-label world with exact ground truth.
//!
//! Each image is a smoothed-noise background with one parametric "lesion" per
//! present class. Lesions of co-present classes either stay apart or, when
//! their pair's entanglement coin fires, are placed so their masks overlap.
//! Every sample keeps its pristine background and per-class lesion masks, so
//! inpainting can be replaced by an exact oracle and its effect on each
//! lesion measured.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cam::InpaintMask;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::imageio::{load_image, load_mask, save_image, save_mask};
use crate::lkg::{EntanglementMatrix, MatrixProvenance};
use crate::manifest::write_manifest;
use crate::rng::rng_for;
use crate::types::{ClassRegistry, ImageTensor, LabelVector, Manifest, SampleRecord, SplitTag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LesionShape {
    Ellipse {
        ry: f64,
        rx: f64,
    },
    Bar {
        half_length: f64,
        half_width: f64,
        vertical: bool,
    },
}

impl LesionShape {
    fn scaled(self, s: f64) -> Self {
        match self {
            Self::Ellipse { ry, rx } => Self::Ellipse { ry: ry * s, rx: rx * s },
            Self::Bar {
                half_length,
                half_width,
                vertical,
            } => Self::Bar {
                half_length: half_length * s,
                half_width,
                vertical,
            },
        }
    }

    /// Every dimension multiplied by `s`.
    pub fn scaled_uniform(self, s: f64) -> Self {
        match self {
            Self::Ellipse { ry, rx } => Self::Ellipse { ry: ry * s, rx: rx * s },
            Self::Bar {
                half_length,
                half_width,
                vertical,
            } => Self::Bar {
                half_length: half_length * s,
                half_width: half_width * s,
                vertical,
            },
        }
    }

    /// Half extents (y, x).
    fn extent(self) -> (f64, f64) {
        match self {
            Self::Ellipse { ry, rx } => (ry, rx),
            Self::Bar {
                half_length,
                half_width,
                vertical: true,
            } => (half_length, half_width),
            Self::Bar {
                half_length,
                half_width,
                vertical: false,
            } => (half_width, half_length),
        }
    }

    fn contains(self, dy: f64, dx: f64) -> bool {
        match self {
            Self::Ellipse { ry, rx } => (dy / ry).powi(2) + (dx / rx).powi(2) <= 1.0,
            Self::Bar { .. } => {
                let (ey, ex) = self.extent();
                dy.abs() <= ey && dx.abs() <= ex
            }
        }
    }

    fn rasterize(self, size: usize, cy: f64, cx: f64) -> InpaintMask {
        let mut bits = vec![false; size * size];
        for y in 0..size {
            for x in 0..size {
                bits[y * size + x] = self.contains(y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            }
        }
        InpaintMask::new(size, size, bits).expect("square mask")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LesionSpec {
    pub shape: LesionShape,
    /// Added to the background inside the lesion.
    pub intensity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub base: f64,
    /// Standard deviation of the texture after smoothing.
    pub amplitude: f64,
    /// Box-blur radius applied (twice) to white noise.
    pub smoothing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthWorldConfig {
    pub class_frequencies: Vec<f64>,
    /// Symmetric K×K probabilities that two co-present lesions overlap.
    pub entangle_prob: Vec<Vec<f64>>,
    pub image_size: usize,
    pub background: BackgroundSpec,
    pub lesions: Vec<LesionSpec>,
    /// Lesion sizes vary uniformly by this relative amount.
    pub size_jitter: f64,
    /// Minimum pixel gap between lesions that are not entangled.
    pub min_gap: usize,
    pub placement_retries: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub seed: u64,
}

impl SynthWorldConfig {
    /// Eight classes, the last two rare (2%), 64×64 images, 2000 train and
    /// 500 test samples, no entanglement.
    pub fn default_world() -> Self {
        let ellipse = |r: f64, i: f64| LesionSpec {
            shape: LesionShape::Ellipse { ry: r, rx: r * 1.3 },
            intensity: i,
        };
        let bar = |l: f64, vertical: bool, i: f64| LesionSpec {
            shape: LesionShape::Bar {
                half_length: l,
                half_width: 2.0,
                vertical,
            },
            intensity: i,
        };
        let lesions = vec![
            ellipse(7.0, 0.28),
            ellipse(6.0, -0.28),
            bar(9.0, false, 0.3),
            bar(9.0, true, -0.3),
            ellipse(4.0, 0.35),
            bar(6.0, false, -0.32),
            bar(8.0, true, 0.38),
            ellipse(4.5, -0.4),
        ];
        let k = lesions.len();
        Self {
            class_frequencies: vec![0.45, 0.35, 0.3, 0.25, 0.2, 0.15, 0.02, 0.02],
            entangle_prob: vec![vec![0.0; k]; k],
            image_size: 64,
            background: BackgroundSpec {
                base: 0.5,
                amplitude: 0.06,
                smoothing: 2,
            },
            lesions,
            size_jitter: 0.2,
            min_gap: 6,
            placement_retries: 200,
            train_samples: 2000,
            test_samples: 500,
            seed: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.lesions.len()
    }

    pub fn registry(&self) -> ClassRegistry {
        ClassRegistry::synthetic(self.num_classes()).expect("validated class count")
    }

    pub fn set_entanglement(&mut self, a: usize, b: usize, p: f64) {
        self.entangle_prob[a][b] = p;
        self.entangle_prob[b][a] = p;
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_classes();
        if k < 2 {
            return Err(Error::arg("a synthetic world needs at least two classes"));
        }
        if self.class_frequencies.len() != k {
            return Err(Error::arg("one inclusion frequency per lesion spec is required"));
        }
        if self.class_frequencies.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::arg("inclusion frequencies must lie in [0, 1]"));
        }
        if self.entangle_prob.len() != k || self.entangle_prob.iter().any(|r| r.len() != k) {
            return Err(Error::arg(format!("entanglement matrix must be {k}x{k}")));
        }
        for i in 0..k {
            for j in 0..k {
                let p = self.entangle_prob[i][j];
                if !(0.0..=1.0).contains(&p) || p != self.entangle_prob[j][i] {
                    return Err(Error::arg("entanglement probabilities must be symmetric and in [0, 1]"));
                }
            }
        }
        if self.image_size < 8 {
            return Err(Error::arg("image size must be at least 8"));
        }
        if !(0.0..1.0).contains(&self.size_jitter) {
            return Err(Error::arg("size jitter must lie in [0, 1)"));
        }
        let half = self.image_size as f64 / 2.0;
        for l in &self.lesions {
            let (ey, ex) = l.shape.extent();
            if ey * (1.0 + self.size_jitter) >= half || ex * (1.0 + self.size_jitter) >= half || ey <= 0.5 || ex <= 0.5
            {
                return Err(Error::arg("lesion extent must be positive and fit inside the image"));
            }
        }
        Ok(())
    }

    /// The configured overlap probabilities as an entanglement matrix.
    pub fn true_entanglement(&self) -> Result<EntanglementMatrix> {
        let mut scores = self.entangle_prob.clone();
        for (i, row) in scores.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        EntanglementMatrix::new(&self.registry(), scores, MatrixProvenance::SyntheticGroundTruth)
    }
}

/// Oracle state for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTruth {
    pub id: String,
    pub classes: BTreeSet<usize>,
    pub masks: BTreeMap<usize, InpaintMask>,
    pub background: ImageTensor,
    /// Pairs whose entanglement coin fired and whose lesions overlap.
    pub entangled_pairs: Vec<(usize, usize)>,
    /// Placement constraints that could not be met.
    pub degraded: Vec<String>,
}

impl SampleTruth {
    pub fn mask(&self, class: usize) -> Option<&InpaintMask> {
        self.masks.get(&class)
    }
}

#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    pub samples: BTreeMap<String, SampleTruth>,
}

impl GroundTruth {
    pub fn get(&self, id: &str) -> Result<&SampleTruth> {
        self.samples
            .get(id)
            .ok_or_else(|| Error::arg(format!("no ground truth for sample {id:?}")))
    }

    /// Per pair, the fraction of co-present samples whose lesions overlap.
    pub fn measured_entanglement(&self, registry: &ClassRegistry) -> Result<EntanglementMatrix> {
        let k = registry.len();
        let mut both = vec![vec![0usize; k]; k];
        let mut overl = vec![vec![0usize; k]; k];
        for s in self.samples.values() {
            for &a in &s.classes {
                for &b in &s.classes {
                    if a < b {
                        both[a][b] += 1;
                        if s.masks[&a].overlap(&s.masks[&b]) > 0 {
                            overl[a][b] += 1;
                        }
                    }
                }
            }
        }
        let mut m = EntanglementMatrix::zeros(registry, MatrixProvenance::SyntheticGroundTruth);
        for a in 0..k {
            for b in a + 1..k {
                if both[a][b] > 0 {
                    m.set(a, b, overl[a][b] as f64 / both[a][b] as f64);
                }
            }
        }
        Ok(m)
    }
}

pub struct SynthWorld {
    pub config: SynthWorldConfig,
    pub registry: ClassRegistry,
    pub train: Dataset,
    pub test: Dataset,
    pub truth: GroundTruth,
}

fn box_blur(src: &[f64], size: usize, r: usize) -> Vec<f64> {
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; src.len()];
        for a in 0..size {
            for b in 0..size {
                let lo = b.saturating_sub(r);
                let hi = (b + r).min(size - 1);
                let mut s = 0.0;
                for t in lo..=hi {
                    s += if horizontal {
                        src[a * size + t]
                    } else {
                        src[t * size + a]
                    };
                }
                let v = s / (hi - lo + 1) as f64;
                if horizontal {
                    out[a * size + b] = v;
                } else {
                    out[b * size + a] = v;
                }
            }
        }
        out
    };
    let h = pass(src, true);
    pass(&h, false)
}

fn quantize(v: f64) -> f32 {
    ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32
}

fn background(spec: &BackgroundSpec, size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise: Vec<f64> = (0..size * size).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut smooth = noise;
    for _ in 0..2 {
        smooth = box_blur(&smooth, size, spec.smoothing);
    }
    let mean = smooth.iter().sum::<f64>() / smooth.len() as f64;
    let var = smooth.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / smooth.len() as f64;
    let scale = if var > 0.0 { spec.amplitude / var.sqrt() } else { 0.0 };
    smooth.iter().map(|v| spec.base + (v - mean) * scale).collect()
}

struct Placed {
    class: usize,
    mask: InpaintMask,
}

fn sample_one(cfg: &SynthWorldConfig, id: &str) -> (LabelVector, ImageTensor, SampleTruth) {
    let k = cfg.num_classes();
    let size = cfg.image_size;
    let mut rng = rng_for(cfg.seed, &["synth-sample", id]);
    let classes: BTreeSet<usize> = (0..k).filter(|c| rng.random_bool(cfg.class_frequencies[*c])).collect();
    let mut entangled: BTreeSet<(usize, usize)> = BTreeSet::new();
    for &a in &classes {
        for &b in &classes {
            if a < b && rng.random_bool(cfg.entangle_prob[a][b]) {
                entangled.insert((a, b));
            }
        }
    }
    let bg = background(&cfg.background, size, &mut rng);

    let is_entangled = |a: usize, b: usize| entangled.contains(&(a.min(b), a.max(b)));
    let mut placed: Vec<Placed> = Vec::new();
    let mut degraded = Vec::new();
    for &c in &classes {
        let spec = cfg.lesions[c];
        let jitter = 1.0 + rng.random_range(-cfg.size_jitter..=cfg.size_jitter);
        let shape = spec.shape.scaled(jitter);
        let (ey, ex) = shape.extent();
        let anchor = placed.iter().find(|p| is_entangled(p.class, c));
        let mut best: Option<(usize, InpaintMask)> = None;
        for _ in 0..cfg.placement_retries.max(1) {
            let (cy, cx) = match anchor {
                Some(p) => {
                    // Near a random pixel of the partner lesion.
                    let on: Vec<usize> = (0..size * size).filter(|i| p.mask.bits()[*i]).collect();
                    let i = on[rng.random_range(0..on.len())];
                    let (py, px) = ((i / size) as f64 + 0.5, (i % size) as f64 + 0.5);
                    (
                        (py + rng.random_range(-ey..=ey) * 0.5).clamp(ey, size as f64 - ey),
                        (px + rng.random_range(-ex..=ex) * 0.5).clamp(ex, size as f64 - ex),
                    )
                }
                None => (
                    rng.random_range(ey..=size as f64 - ey),
                    rng.random_range(ex..=size as f64 - ex),
                ),
            };
            let mask = shape.rasterize(size, cy, cx);
            if mask.count() == 0 {
                continue;
            }
            let violations = placed
                .iter()
                .filter(|p| {
                    if is_entangled(p.class, c) {
                        p.mask.overlap(&mask) == 0
                    } else {
                        p.mask.dilated(cfg.min_gap).overlap(&mask) > 0
                    }
                })
                .count();
            if best.as_ref().is_none_or(|(v, _)| violations < *v) {
                best = Some((violations, mask));
            }
            if violations == 0 {
                break;
            }
        }
        let (violations, mask) = best.unwrap_or_else(|| {
            // Degenerate jitter: fall back to a centred lesion.
            (usize::MAX, shape.rasterize(size, size as f64 / 2.0, size as f64 / 2.0))
        });
        if violations > 0 {
            let msg = format!("{id}: class {c} placed with {violations} unmet spacing constraints");
            log::warn!("{msg}");
            degraded.push(msg);
        }
        placed.push(Placed { class: c, mask });
    }

    let mut pixels = bg.clone();
    for p in &placed {
        let intensity = cfg.lesions[p.class].intensity;
        for (v, on) in pixels.iter_mut().zip(p.mask.bits()) {
            if *on {
                *v += intensity;
            }
        }
    }
    let image = ImageTensor::new(size, size, 1, pixels.iter().map(|v| quantize(*v)).collect())
        .expect("quantized pixels are in range");
    let background = ImageTensor::new(size, size, 1, bg.iter().map(|v| quantize(*v)).collect())
        .expect("quantized pixels are in range");
    let masks: BTreeMap<usize, InpaintMask> = placed.into_iter().map(|p| (p.class, p.mask)).collect();
    let entangled_pairs = entangled
        .into_iter()
        .filter(|(a, b)| masks[a].overlap(&masks[b]) > 0)
        .collect();
    let labels = LabelVector::from_indices(k, classes.iter().copied()).expect("indices below k");
    let truth = SampleTruth {
        id: id.to_owned(),
        classes,
        masks,
        background,
        entangled_pairs,
        degraded,
    };
    (labels, image, truth)
}

fn split(cfg: &SynthWorldConfig, prefix: &str, n: usize, tag: SplitTag, truth: &mut GroundTruth) -> Result<Dataset> {
    let mut records = Vec::with_capacity(n);
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("{prefix}-{i:05}");
        let (labels, image, t) = sample_one(cfg, &id);
        records.push(SampleRecord {
            image_path: format!("images/{id}.png"),
            id: id.clone(),
            labels,
        });
        images.push(image);
        truth.samples.insert(id, t);
    }
    Dataset::new(Manifest::new(cfg.registry(), records, tag)?, images)
}

/// Generates the train and test splits. Deterministic in `cfg`.
pub fn generate_synthetic_dataset(cfg: &SynthWorldConfig) -> Result<SynthWorld> {
    cfg.validate()?;
    let mut truth = GroundTruth::default();
    let train = split(cfg, "train", cfg.train_samples, SplitTag::Train, &mut truth)?;
    let test = split(cfg, "test", cfg.test_samples, SplitTag::Test, &mut truth)?;
    Ok(SynthWorld {
        config: cfg.clone(),
        registry: cfg.registry(),
        train,
        test,
        truth,
    })
}

/// Replaces masked pixels with the sample's pristine background.
pub fn oracle_inpaint(image: &ImageTensor, mask: &InpaintMask, truth: &SampleTruth) -> Result<ImageTensor> {
    if !image.same_shape(&truth.background) || !mask.matches(image) {
        return Err(Error::arg("image, mask and background shapes differ"));
    }
    let c = image.channels();
    let data = image
        .data()
        .iter()
        .zip(truth.background.data())
        .enumerate()
        .map(|(i, (v, b))| if mask.bits()[i / c] { *b } else { *v })
        .collect();
    ImageTensor::new(image.height(), image.width(), c, data)
}

#[derive(Serialize, Deserialize)]
struct TruthFile {
    id: String,
    classes: Vec<usize>,
    entangled_pairs: Vec<(usize, usize)>,
    degraded: Vec<String>,
    background: String,
    masks: BTreeMap<usize, String>,
}

/// Files written by [`write_world`].
pub struct WorldPaths {
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub registry: PathBuf,
    pub truth_dir: PathBuf,
    pub true_entanglement: PathBuf,
}

impl WorldPaths {
    pub fn under(dir: &Path) -> Self {
        Self {
            train_manifest: dir.join("train.csv"),
            test_manifest: dir.join("test.csv"),
            registry: dir.join("classes.json"),
            truth_dir: dir.join("truth"),
            true_entanglement: dir.join("entanglement_true.json"),
        }
    }
}

/// Writes manifests, images, ground truth and the true entanglement matrix
/// under `dir`.
pub fn write_world(world: &SynthWorld, dir: &Path) -> Result<WorldPaths> {
    let paths = WorldPaths::under(dir);
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(&paths.truth_dir)?;
    world.registry.save_json(&paths.registry)?;
    for (ds, path) in [
        (&world.train, &paths.train_manifest),
        (&world.test, &paths.test_manifest),
    ] {
        write_manifest(&ds.manifest, path)?;
        for s in ds.iter() {
            save_image(s.image, &dir.join("images").join(format!("{}.png", s.id)))?;
        }
    }
    for t in world.truth.samples.values() {
        let bg = format!("{}_background.png", t.id);
        save_image(&t.background, &paths.truth_dir.join(&bg))?;
        let mut masks = BTreeMap::new();
        for (c, m) in &t.masks {
            let name = format!("{}_class{c}.png", t.id);
            save_mask(m, &paths.truth_dir.join(&name))?;
            masks.insert(*c, name);
        }
        let file = TruthFile {
            id: t.id.clone(),
            classes: t.classes.iter().copied().collect(),
            entangled_pairs: t.entangled_pairs.clone(),
            degraded: t.degraded.clone(),
            background: bg,
            masks,
        };
        fs::write(
            paths.truth_dir.join(format!("{}.json", t.id)),
            serde_json::to_string_pretty(&file)?,
        )?;
    }
    world.config.true_entanglement()?.save(&paths.true_entanglement)?;
    fs::write(dir.join("world.json"), serde_json::to_string_pretty(&world.config)?)?;
    Ok(paths)
}

/// Reads back every sample's ground truth from a directory written by
/// [`write_world`].
pub fn load_ground_truth(truth_dir: &Path) -> Result<GroundTruth> {
    let mut gt = GroundTruth::default();
    let mut entries: Vec<PathBuf> = fs::read_dir(truth_dir)
        .map_err(|source| Error::Load {
            path: truth_dir.to_owned(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    entries.sort();
    for p in entries {
        let text = fs::read_to_string(&p)?;
        let f: TruthFile = serde_json::from_str(&text)?;
        let background = load_image(&truth_dir.join(&f.background))?;
        let masks = f
            .masks
            .iter()
            .map(|(c, name)| Ok((*c, load_mask(&truth_dir.join(name))?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let t = SampleTruth {
            id: f.id.clone(),
            classes: f.classes.into_iter().collect(),
            masks,
            background,
            entangled_pairs: f.entangled_pairs,
            degraded: f.degraded,
        };
        gt.samples.insert(f.id, t);
    }
    Ok(gt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthWorldConfig {
        SynthWorldConfig {
            train_samples: 40,
            test_samples: 10,
            image_size: 32,
            lesions: SynthWorldConfig::default_world()
                .lesions
                .into_iter()
                .map(|l| LesionSpec {
                    shape: l.shape.scaled(0.5),
                    ..l
                })
                .collect(),
            min_gap: 2,
            ..SynthWorldConfig::default_world()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic_dataset(&small()).unwrap();
        let b = generate_synthetic_dataset(&small()).unwrap();
        assert_eq!(a.train.images, b.train.images);
        assert_eq!(a.train.manifest, b.train.manifest);
        assert_eq!(a.test.images, b.test.images);
    }

    #[test]
    fn masks_match_labels() {
        let w = generate_synthetic_dataset(&small()).unwrap();
        for ds in [&w.train, &w.test] {
            for s in ds.iter() {
                let t = w.truth.get(s.id).unwrap();
                assert_eq!(s.labels.present(), t.classes);
                assert_eq!(t.masks.keys().copied().collect::<BTreeSet<_>>(), t.classes);
                assert!(t.masks.values().all(|m| m.count() > 0));
            }
        }
    }

    #[test]
    fn lesion_changes_pixels_only_inside_masks() {
        let w = generate_synthetic_dataset(&small()).unwrap();
        for s in w.train.iter() {
            let t = w.truth.get(s.id).unwrap();
            let masks: Vec<&InpaintMask> = t.masks.values().collect();
            for (i, (v, b)) in s.image.data().iter().zip(t.background.data()).enumerate() {
                if !masks.iter().any(|m| m.bits()[i]) {
                    assert_eq!(v, b);
                }
            }
        }
    }

    #[test]
    fn oracle_empty_full_and_partial() {
        let w = generate_synthetic_dataset(&small()).unwrap();
        let s = w.train.sample(0);
        let t = w.truth.get(s.id).unwrap();
        let (h, wd) = (s.image.height(), s.image.width());
        assert_eq!(
            &oracle_inpaint(s.image, &InpaintMask::empty(h, wd), t).unwrap(),
            s.image
        );
        assert_eq!(
            oracle_inpaint(s.image, &InpaintMask::full(h, wd), t).unwrap(),
            t.background
        );
        let bits: Vec<bool> = (0..h * wd).map(|i| i % 3 == 0).collect();
        let m = InpaintMask::new(h, wd, bits.clone()).unwrap();
        let out = oracle_inpaint(s.image, &m, t).unwrap();
        for (i, bit) in bits.iter().enumerate() {
            let expect = if *bit {
                t.background.data()[i]
            } else {
                s.image.data()[i]
            };
            assert_eq!(out.data()[i], expect);
        }
        assert!(oracle_inpaint(s.image, &InpaintMask::empty(4, 4), t).is_err());
    }

    #[test]
    fn entangled_pairs_overlap() {
        let mut cfg = small();
        cfg.class_frequencies = vec![0.9, 0.0, 0.0, 0.0, 0.0, 0.0, 0.9, 0.0];
        cfg.set_entanglement(0, 6, 1.0);
        let w = generate_synthetic_dataset(&cfg).unwrap();
        for t in w.truth.samples.values() {
            if t.classes.contains(&0) && t.classes.contains(&6) {
                assert!(t.masks[&0].overlap(&t.masks[&6]) > 0, "{:?}", t.degraded);
            }
        }
        let m = w.truth.measured_entanglement(&w.registry).unwrap();
        assert_eq!(m.get(0, 6), 1.0);
    }

    #[test]
    fn validation() {
        let mut cfg = small();
        cfg.class_frequencies[0] = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.entangle_prob[0][1] = 0.3;
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.class_frequencies.pop();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn disk_round_trip() {
        let mut cfg = small();
        cfg.train_samples = 6;
        cfg.test_samples = 2;
        let w = generate_synthetic_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_world(&w, dir.path()).unwrap();
        let train = Dataset::load(&paths.train_manifest, &w.registry, SplitTag::Train).unwrap();
        assert_eq!(train.images, w.train.images);
        let gt = load_ground_truth(&paths.truth_dir).unwrap();
        assert_eq!(gt.samples, w.truth.samples);
        let m = EntanglementMatrix::load(&paths.true_entanglement, &w.registry).unwrap();
        assert_eq!(m, cfg.true_entanglement().unwrap());
    }
}
