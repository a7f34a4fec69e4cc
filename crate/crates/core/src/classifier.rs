//! A small four-layer CNN multi-label classifier.
//!
//! Input is average-pooled by 2, then conv → max-pool → conv → conv, global
//! average pooling and a linear head. The last convolution (`conv3`, after
//! its ReLU) is the Grad-CAM target layer.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cam::{ClassifierHandle, FeatureMap};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::nn::{self, Conv2d, Linear, ParamLayout};
use crate::types::ImageTensor;

pub const TARGET_LAYER: &str = "conv3";
const KIND: &str = "classifier";

// Pixels in [0, 1] are mapped to roughly zero mean and unit scale.
const INPUT_MEAN: f32 = 0.5;
const INPUT_SCALE: f32 = 4.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub in_channels: usize,
    pub image_size: usize,
    pub num_classes: usize,
    pub channels: [usize; 3],
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || !self.image_size.is_multiple_of(4) {
            return Err(Error::arg(format!(
                "classifier image size must be a positive multiple of 4, got {}",
                self.image_size
            )));
        }
        if self.num_classes == 0 || self.in_channels == 0 || self.channels.contains(&0) {
            return Err(Error::arg("classifier dimensions must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Layers {
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
    head: Linear,
}

impl Layers {
    fn build(cfg: &CnnConfig) -> (Self, usize) {
        let mut layout = ParamLayout::default();
        let [c1, c2, c3] = cfg.channels;
        let layers = Self {
            conv1: Conv2d::new(&mut layout, cfg.in_channels, c1, 3, 1),
            conv2: Conv2d::new(&mut layout, c1, c2, 3, 1),
            conv3: Conv2d::new(&mut layout, c2, c3, 3, 1),
            head: Linear::new(&mut layout, c3, cfg.num_classes),
        };
        (layers, layout.len())
    }
}

#[derive(Debug, Clone)]
pub struct Classifier {
    config: CnnConfig,
    layers: Layers,
    params: Vec<f32>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Default, Clone)]
pub struct ForwardCache {
    pooled: Vec<f32>,
    cols1: Vec<f32>,
    a1: Vec<f32>,
    m1: Vec<f32>,
    arg1: Vec<usize>,
    cols2: Vec<f32>,
    a2: Vec<f32>,
    cols3: Vec<f32>,
    a3: Vec<f32>,
    gap: Vec<f32>,
    logits: Vec<f32>,
    scratch: Vec<f32>,
    valid: bool,
}

impl Classifier {
    pub fn new(config: CnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layers, n) = Layers::build(&config);
        let mut params = vec![0.0; n];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        layers.conv1.init(&mut params, &mut rng);
        layers.conv2.init(&mut params, &mut rng);
        layers.conv3.init(&mut params, &mut rng);
        layers.head.init(&mut params, &mut rng);
        Ok(Self { config, layers, params })
    }

    pub fn from_parts(config: CnnConfig, params: Vec<f32>) -> Result<Self> {
        config.validate()?;
        let (layers, n) = Layers::build(&config);
        if params.len() != n {
            return Err(Error::Checkpoint(format!(
                "classifier expects {n} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self { config, layers, params })
    }

    pub fn config(&self) -> &CnnConfig {
        &self.config
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn id(&self) -> String {
        checkpoint::content_id(KIND, &self.config, &self.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, KIND, &self.config, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (config, params) = checkpoint::load(path, KIND)?;
        Self::from_parts(config, params)
    }

    fn check_image(&self, image: &ImageTensor) -> Result<()> {
        let s = self.config.image_size;
        if image.height() != s || image.width() != s || image.channels() != self.config.in_channels {
            return Err(Error::arg(format!(
                "classifier expects {s}x{s}x{} images, got {}x{}x{}",
                self.config.in_channels,
                image.height(),
                image.width(),
                image.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, image: &ImageTensor, cache: &mut ForwardCache) -> Result<Vec<f32>> {
        self.check_image(image)?;
        let p = &self.params;
        let l = &self.layers;
        let [c1, _, c3] = self.config.channels;
        let s = self.config.image_size;
        let (s1, s2) = (s / 2, s / 4);

        let x: Vec<f32> = image.to_chw().iter().map(|v| (v - INPUT_MEAN) * INPUT_SCALE).collect();
        cache.pooled = nn::avg_pool2(&x, self.config.in_channels, s, s);
        l.conv1
            .forward(p, &cache.pooled, s1, s1, &mut cache.cols1, &mut cache.a1);
        nn::relu_inplace(&mut cache.a1);
        (cache.m1, cache.arg1) = nn::max_pool2(&cache.a1, c1, s1, s1);
        l.conv2.forward(p, &cache.m1, s2, s2, &mut cache.cols2, &mut cache.a2);
        nn::relu_inplace(&mut cache.a2);
        l.conv3.forward(p, &cache.a2, s2, s2, &mut cache.cols3, &mut cache.a3);
        nn::relu_inplace(&mut cache.a3);
        let hw = (s2 * s2) as f32;
        cache.gap = cache
            .a3
            .chunks_exact(s2 * s2)
            .map(|plane| plane.iter().sum::<f32>() / hw)
            .collect();
        debug_assert_eq!(cache.gap.len(), c3);
        let mut logits = Vec::new();
        l.head.forward(p, &cache.gap, &mut logits);
        cache.logits.clone_from(&logits);
        cache.valid = true;
        Ok(logits)
    }

    pub fn predict(&self, image: &ImageTensor) -> Result<Vec<f32>> {
        self.forward(image, &mut ForwardCache::default())
    }

    /// Gradient of `sum_k dlogits[k] * logit_k` w.r.t. the `conv3` output
    /// (after ReLU) of the cached forward pass. Does not touch parameter
    /// gradients.
    fn grad_at_target(&self, dlogits: &[f32]) -> Vec<f32> {
        let c3 = self.config.channels[2];
        let s2 = self.config.image_size / 4;
        let hw = s2 * s2;
        let head = &self.layers.head;
        let mut out = Vec::with_capacity(c3 * hw);
        for c in 0..c3 {
            let dgap: f32 = dlogits
                .iter()
                .enumerate()
                .map(|(k, d)| d * self.params[head.weight + k * head.inputs + c])
                .sum();
            out.extend(std::iter::repeat_n(dgap / hw as f32, hw));
        }
        out
    }

    /// Backpropagates `dlogits` through the cached forward pass, adding
    /// parameter gradients into `grads`.
    pub fn backward(&self, cache: &mut ForwardCache, dlogits: &[f32], grads: &mut [f32]) {
        let p = &self.params;
        let l = &self.layers;
        let [c1, _, _] = self.config.channels;
        let s = self.config.image_size;
        let (s1, s2) = (s / 2, s / 4);
        let hw3 = (s2 * s2) as f32;

        let mut dgap = Vec::new();
        l.head.backward(p, &cache.gap, dlogits, grads, Some(&mut dgap));
        let mut da3: Vec<f32> = dgap
            .iter()
            .flat_map(|g| std::iter::repeat_n(g / hw3, s2 * s2))
            .collect();
        nn::relu_backward(&cache.a3, &mut da3);
        let mut da2 = Vec::new();
        l.conv3
            .backward(p, &cache.cols3, &da3, s2, s2, grads, &mut cache.scratch, Some(&mut da2));
        nn::relu_backward(&cache.a2, &mut da2);
        let mut dm1 = Vec::new();
        l.conv2
            .backward(p, &cache.cols2, &da2, s2, s2, grads, &mut cache.scratch, Some(&mut dm1));
        let mut da1 = nn::max_pool2_backward(&dm1, &cache.arg1, c1 * s1 * s1);
        nn::relu_backward(&cache.a1, &mut da1);
        l.conv1
            .backward(p, &cache.cols1, &da1, s1, s1, grads, &mut cache.scratch, None);
    }

    pub fn handle(&self) -> CnnHandle<'_> {
        CnnHandle {
            model: self,
            cache: ForwardCache::default(),
        }
    }
}

/// Grad-CAM view of a [`Classifier`] with its own forward cache.
pub struct CnnHandle<'a> {
    model: &'a Classifier,
    cache: ForwardCache,
}

impl ClassifierHandle for CnnHandle<'_> {
    fn num_classes(&self) -> usize {
        self.model.config.num_classes
    }

    fn target_layer(&self) -> Option<&str> {
        Some(TARGET_LAYER)
    }

    fn forward(&mut self, image: &ImageTensor) -> Result<Vec<f32>> {
        self.model.forward(image, &mut self.cache)
    }

    fn activations_at(&self, layer: &str) -> Result<FeatureMap> {
        if layer != TARGET_LAYER {
            return Err(Error::Capability(format!("no recorded activations for layer {layer}")));
        }
        if !self.cache.valid {
            return Err(Error::arg("activations requested before forward"));
        }
        let s2 = self.model.config.image_size / 4;
        Ok(FeatureMap {
            channels: self.model.config.channels[2],
            height: s2,
            width: s2,
            data: self.cache.a3.clone(),
        })
    }

    fn gradients_at(&mut self, layer: &str, class_id: usize) -> Result<FeatureMap> {
        if layer != TARGET_LAYER {
            return Err(Error::Capability(format!("no gradients for layer {layer}")));
        }
        if !self.cache.valid {
            return Err(Error::arg("gradients requested before forward"));
        }
        let k = self.model.config.num_classes;
        if class_id >= k {
            return Err(Error::arg(format!("class index {class_id} out of range")));
        }
        let mut onehot = vec![0.0; k];
        onehot[class_id] = 1.0;
        let s2 = self.model.config.image_size / 4;
        Ok(FeatureMap {
            channels: self.model.config.channels[2],
            height: s2,
            width: s2,
            data: self.model.grad_at_target(&onehot),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cfg() -> CnnConfig {
        CnnConfig {
            in_channels: 1,
            image_size: 8,
            num_classes: 3,
            channels: [2, 3, 4],
        }
    }

    fn random_image(seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::new(8, 8, 1, (0..64).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut model = Classifier::new(cfg(), 3).unwrap();
        // Positive biases keep most ReLUs away from their kink.
        let l = model.layers;
        for conv in [l.conv1, l.conv2, l.conv3] {
            for b in &mut model.params[conv.bias..conv.bias + conv.out_channels] {
                *b = 0.3;
            }
        }
        let img = random_image(4);
        let dl = [0.7f32, -1.1, 0.4];
        let objective = |m: &Classifier| -> f64 {
            m.predict(&img)
                .unwrap()
                .iter()
                .zip(dl)
                .map(|(z, d)| f64::from(*z) * f64::from(d))
                .sum()
        };
        let mut cache = ForwardCache::default();
        model.forward(&img, &mut cache).unwrap();
        let mut grads = vec![0.0; model.num_params()];
        model.backward(&mut cache, &dl, &mut grads);
        let eps = 1e-3f32;
        let mut checked = 0;
        for i in (0..model.num_params()).step_by(3) {
            let mut plus = model.clone();
            plus.params[i] += eps;
            let mut minus = model.clone();
            minus.params[i] -= eps;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * f64::from(eps));
            let g = f64::from(grads[i]);
            assert!((fd - g).abs() < 2e-3 + 2e-2 * g.abs(), "param {i}: fd {fd} vs {g}");
            checked += 1;
        }
        assert!(checked > 10);
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = Classifier::new(cfg(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        model.save(&p).unwrap();
        let back = Classifier::load(&p).unwrap();
        assert_eq!(back.params(), model.params());
        assert_eq!(back.id(), model.id());
    }

    #[test]
    fn rejects_wrong_image_size() {
        let model = Classifier::new(cfg(), 1).unwrap();
        let img = ImageTensor::filled(4, 4, 1, 0.1).unwrap();
        assert!(model.predict(&img).is_err());
    }

    #[test]
    fn handle_exposes_target_layer() {
        let model = Classifier::new(cfg(), 1).unwrap();
        let mut h = model.handle();
        assert!(h.activations_at(TARGET_LAYER).is_err());
        h.forward(&random_image(2)).unwrap();
        let a = h.activations_at(TARGET_LAYER).unwrap();
        assert_eq!((a.channels, a.height, a.width), (4, 2, 2));
        assert!(h.gradients_at("conv1", 0).is_err());
        let g = h.gradients_at(TARGET_LAYER, 1).unwrap();
        assert_eq!(g.data.len(), 16);
    }
}
