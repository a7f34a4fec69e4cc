//! A manifest together with its decoded images.

use std::path::Path;

use crate::error::{Error, Result};
use crate::imageio::load_image;
use crate::manifest::{load_manifest_as, resolve_image_path};
use crate::types::{ClassRegistry, ImageTensor, LabelVector, Manifest, SplitTag};

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub images: Vec<ImageTensor>,
}

#[derive(Debug, Clone, Copy)]
pub struct SampleRef<'a> {
    pub id: &'a str,
    pub image: &'a ImageTensor,
    pub labels: &'a LabelVector,
}

impl Dataset {
    pub fn new(manifest: Manifest, images: Vec<ImageTensor>) -> Result<Self> {
        if manifest.len() != images.len() {
            return Err(Error::arg(format!(
                "{} records but {} images",
                manifest.len(),
                images.len()
            )));
        }
        Ok(Self { manifest, images })
    }

    pub fn empty(registry: ClassRegistry, split: SplitTag) -> Self {
        Self {
            manifest: Manifest::empty(registry, split),
            images: Vec::new(),
        }
    }

    /// Loads a manifest and every image it references.
    pub fn load(manifest_path: &Path, registry: &ClassRegistry, split: SplitTag) -> Result<Self> {
        let manifest = load_manifest_as(manifest_path, registry, split)?;
        let images = manifest
            .records
            .iter()
            .map(|r| load_image(&resolve_image_path(manifest_path, r)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(manifest, images)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn registry(&self) -> &ClassRegistry {
        &self.manifest.registry
    }

    pub fn sample(&self, i: usize) -> SampleRef<'_> {
        let r = &self.manifest.records[i];
        SampleRef {
            id: &r.id,
            image: &self.images[i],
            labels: &r.labels,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = SampleRef<'_>> {
        (0..self.len()).map(|i| self.sample(i))
    }

    /// Keeps the records selected by `keep`, in order.
    pub fn filter(&self, mut keep: impl FnMut(SampleRef<'_>) -> bool) -> Result<Self> {
        let mut records = Vec::new();
        let mut images = Vec::new();
        for i in 0..self.len() {
            if keep(self.sample(i)) {
                records.push(self.manifest.records[i].clone());
                images.push(self.images[i].clone());
            }
        }
        Self::new(
            Manifest::new(self.manifest.registry.clone(), records, self.manifest.split)?,
            images,
        )
    }

    pub fn concat(parts: &[Dataset], split: SplitTag) -> Result<Self> {
        let manifests: Vec<Manifest> = parts.iter().map(|d| d.manifest.clone()).collect();
        let manifest = Manifest::concat(&manifests, split)?;
        let images = parts.iter().flat_map(|d| d.images.iter().cloned()).collect();
        Self::new(manifest, images)
    }
}
