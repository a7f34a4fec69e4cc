//! Domain types shared by every stage of the pipeline.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered set of class names. Index order is the column order of every
/// manifest and label vector built against it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassRegistry {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

/// The 13 chest X-ray lesion categories shared by MIMIC-CXR and CheXpert,
/// in their customary column order.
pub const CXR_CLASSES: [&str; 13] = [
    "Enlarged Cardiomediastinum",
    "Cardiomegaly",
    "Lung Opacity",
    "Lung Lesion",
    "Edema",
    "Consolidation",
    "Pneumonia",
    "Atelectasis",
    "Pneumothorax",
    "Pleural Effusion",
    "Pleural Other",
    "Fracture",
    "Support Devices",
];

/// Rare categories of the chest X-ray profile.
pub const CXR_TAIL_CLASSES: [&str; 6] = [
    "Enlarged Cardiomediastinum",
    "Lung Lesion",
    "Consolidation",
    "Pneumonia",
    "Pleural Other",
    "Fracture",
];

impl ClassRegistry {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::arg(format!(
                "a class registry needs at least 2 classes, got {}",
                names.len()
            )));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::arg("empty class name"));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::arg(format!("duplicate class name {name:?}")));
            }
        }
        Ok(Self { names, index })
    }

    pub fn cxr() -> Self {
        Self::new(CXR_CLASSES).expect("static registry is valid")
    }

    /// `class0`, `class1`, ... for synthetic worlds.
    pub fn synthetic(k: usize) -> Result<Self> {
        Self::new((0..k).map(|i| format!("class{i}")))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn require_index(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::arg(format!("unknown class {name:?}")))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Load {
            path: path.to_owned(),
            source,
        })?;
        let names: Vec<String> = serde_json::from_str(&text)?;
        Self::new(names)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(&self.names)?)?;
        Ok(())
    }
}

/// Row-major H×W×C image with every value in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::arg(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::arg(format!(
                "image buffer holds {} values, expected {}",
                data.len(),
                height * width * channels
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::arg(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Clamps out-of-range values instead of rejecting them. NaN maps to 0.
    pub fn from_clamped(height: usize, width: usize, channels: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Channel-major copy (C×H×W), the layout the networks consume.
    pub fn to_chw(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * self.channels];
        for (p, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, v) in px.iter().enumerate() {
                out[c * plane + p] = *v;
            }
        }
        out
    }

    /// Rounds every value to the nearest multiple of 1/255, matching what an
    /// 8-bit PNG round trip produces.
    pub fn quantized(&self) -> Self {
        let data = self.data.iter().map(|v| (v * 255.0).round() / 255.0).collect();
        Self { data, ..*self }
    }
}

/// Per-class binary flags aligned to a [`ClassRegistry`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelVector(Vec<bool>);

impl LabelVector {
    pub fn new(flags: Vec<bool>) -> Self {
        Self(flags)
    }

    pub fn zeros(k: usize) -> Self {
        Self(vec![false; k])
    }

    pub fn from_indices(k: usize, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut flags = vec![false; k];
        for i in indices {
            *flags
                .get_mut(i)
                .ok_or_else(|| Error::arg(format!("class index {i} out of range for K={k}")))? = true;
        }
        Ok(Self(flags))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn flags(&self) -> &[bool] {
        &self.0
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn set(&mut self, i: usize, value: bool) {
        self.0[i] = value;
    }

    pub fn present(&self) -> BTreeSet<usize> {
        self.0.iter().enumerate().filter_map(|(i, f)| f.then_some(i)).collect()
    }

    pub fn any(&self) -> bool {
        self.0.iter().any(|f| *f)
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|f| if *f { 1.0 } else { 0.0 }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub id: String,
    /// As written in the manifest; relative paths resolve against the
    /// manifest's directory.
    pub image_path: String,
    pub labels: LabelVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
    Augmented,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub registry: ClassRegistry,
    pub records: Vec<SampleRecord>,
    pub split: SplitTag,
}

impl Manifest {
    pub fn new(registry: ClassRegistry, records: Vec<SampleRecord>, split: SplitTag) -> Result<Self> {
        let mut seen = std::collections::HashSet::with_capacity(records.len());
        for r in &records {
            if r.labels.len() != registry.len() {
                return Err(Error::arg(format!(
                    "record {} has {} labels, registry has {}",
                    r.id,
                    r.labels.len(),
                    registry.len()
                )));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::arg(format!("duplicate record id {:?}", r.id)));
            }
        }
        Ok(Self {
            registry,
            records,
            split,
        })
    }

    pub fn empty(registry: ClassRegistry, split: SplitTag) -> Self {
        Self {
            registry,
            records: Vec::new(),
            split,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Concatenates manifests over the same registry. Ids must stay unique.
    pub fn concat(parts: &[Manifest], split: SplitTag) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::arg("no manifests to concatenate"))?;
        let mut records = Vec::new();
        for m in parts {
            if m.registry != first.registry {
                return Err(Error::arg("manifests use different class registries"));
            }
            records.extend(m.records.iter().cloned());
        }
        Self::new(first.registry.clone(), records, split)
    }
}

/// Lineage of one synthesized sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub source_id: String,
    pub inpainted_classes: BTreeSet<usize>,
    pub retained_head_classes: BTreeSet<usize>,
    pub mask_area_fraction: f64,
    pub generator_id: String,
    pub noise_seed: u64,
    pub cam_threshold: f64,
}

impl ProvenanceRecord {
    pub fn validate(&self) -> Result<()> {
        if !self.inpainted_classes.is_disjoint(&self.retained_head_classes) {
            return Err(Error::arg("inpainted and retained class sets overlap"));
        }
        if !(0.0..=1.0).contains(&self.mask_area_fraction) {
            return Err(Error::arg("mask area fraction outside [0, 1]"));
        }
        Ok(())
    }
}
