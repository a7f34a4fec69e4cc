//! Gradient-weighted class activation maps and their conversion to binary
//! inpainting masks.

use crate::error::{Error, Result};
use crate::nn::bilinear_resize;
use crate::types::ImageTensor;

pub const DEFAULT_CAM_THRESHOLD: f64 = 0.5;

/// Dilation radius of 2 px at 64×64, scaled with the image side.
pub fn default_dilation_radius(image_size: usize) -> usize {
    ((2 * image_size) as f64 / 64.0).round() as usize
}

/// Channel-major C×H×W feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn plane(&self, c: usize) -> &[f32] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }
}

/// A classifier that exposes what Grad-CAM needs. `forward` records the
/// state that the accessors read, so a handle serves one caller at a time.
pub trait ClassifierHandle {
    fn num_classes(&self) -> usize;

    /// Name of the spatial layer CAMs are computed at, if the model has one.
    fn target_layer(&self) -> Option<&str>;

    fn forward(&mut self, image: &ImageTensor) -> Result<Vec<f32>>;

    /// Activations recorded by the most recent `forward`.
    fn activations_at(&self, layer: &str) -> Result<FeatureMap>;

    /// Gradient of the `class_id` logit w.r.t. the activations of `layer`
    /// for the most recent `forward`.
    fn gradients_at(&mut self, layer: &str, class_id: usize) -> Result<FeatureMap>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
    pub source_class: usize,
}

impl ActivationMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>, source_class: usize) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::arg("activation map size does not match its shape"));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::arg("activation map values must lie in [0, 1]"));
        }
        Ok(Self {
            height,
            width,
            values,
            source_class,
        })
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InpaintMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl InpaintMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::arg(format!(
                "mask holds {} bits, expected {height}x{width}",
                bits.len()
            )));
        }
        Ok(Self { height, width, bits })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn area_fraction(&self) -> f64 {
        self.count() as f64 / (self.height * self.width) as f64
    }

    pub fn matches(&self, image: &ImageTensor) -> bool {
        self.height == image.height() && self.width == image.width()
    }

    /// Number of set pixels shared with `other`.
    pub fn overlap(&self, other: &InpaintMask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count()
    }

    /// Square (Chebyshev) dilation, computed as separable row/column maxima.
    pub fn dilated(&self, radius: usize) -> Self {
        if radius == 0 {
            return self.clone();
        }
        let (h, w) = (self.height, self.width);
        let mut rows = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                let lo = x.saturating_sub(radius);
                let hi = (x + radius).min(w - 1);
                rows[y * w + x] = self.bits[y * w + lo..=y * w + hi].iter().any(|b| *b);
            }
        }
        let mut out = vec![false; h * w];
        for y in 0..h {
            let lo = y.saturating_sub(radius);
            let hi = (y + radius).min(h - 1);
            for x in 0..w {
                out[y * w + x] = (lo..=hi).any(|yy| rows[yy * w + x]);
            }
        }
        Self {
            height: h,
            width: w,
            bits: out,
        }
    }
}

pub fn grad_cam(classifier: &mut dyn ClassifierHandle, image: &ImageTensor, class_id: usize) -> Result<ActivationMap> {
    if class_id >= classifier.num_classes() {
        return Err(Error::arg(format!(
            "class index {class_id} out of range for {} classes",
            classifier.num_classes()
        )));
    }
    let layer = classifier
        .target_layer()
        .ok_or_else(|| Error::Capability("classifier exposes no spatial target layer".into()))?
        .to_owned();
    classifier.forward(image)?;
    let acts = classifier.activations_at(&layer)?;
    let grads = classifier.gradients_at(&layer, class_id)?;
    if acts.height == 0 || acts.width == 0 {
        return Err(Error::Capability(format!("layer {layer} is not spatial")));
    }
    if grads.channels != acts.channels || grads.height != acts.height || grads.width != acts.width {
        return Err(Error::Capability("gradient and activation shapes differ".into()));
    }
    let hw = acts.height * acts.width;
    let weights: Vec<f32> = (0..acts.channels)
        .map(|c| grads.plane(c).iter().sum::<f32>() / hw as f32)
        .collect();
    let mut raw = vec![0.0f32; hw];
    for (c, wc) in weights.iter().enumerate() {
        for (r, a) in raw.iter_mut().zip(acts.plane(c)) {
            *r += wc * a;
        }
    }
    for r in &mut raw {
        *r = r.max(0.0);
    }
    let (h, w) = (image.height(), image.width());
    if raw.iter().all(|v| *v == 0.0) {
        return ActivationMap::new(h, w, vec![0.0; h * w], class_id);
    }
    let mut up = bilinear_resize(&raw, acts.height, acts.width, h, w);
    let min = up.iter().copied().fold(f32::INFINITY, f32::min);
    let max = up.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if max > min {
        for v in &mut up {
            *v = ((*v - min) / (max - min)).clamp(0.0, 1.0);
        }
    } else {
        // Uniform positive evidence covers the whole image.
        up.fill(1.0);
    }
    ActivationMap::new(h, w, up, class_id)
}

/// Sets every pixel whose value reaches `threshold`, then dilates by a
/// square of side `2 * dilation_radius + 1`.
pub fn cam_to_mask(map: &ActivationMap, threshold: f64, dilation_radius: usize) -> Result<InpaintMask> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::arg(format!("CAM threshold must lie in [0, 1], got {threshold}")));
    }
    let bits = map.values.iter().map(|v| f64::from(*v) >= threshold).collect();
    Ok(InpaintMask::new(map.height, map.width, bits)?.dilated(dilation_radius))
}

pub fn union_masks(masks: &[InpaintMask]) -> Result<InpaintMask> {
    let first = masks
        .first()
        .ok_or_else(|| Error::arg("cannot take the union of zero masks"))?;
    let mut bits = first.bits.clone();
    for m in &masks[1..] {
        if m.height != first.height || m.width != first.width {
            return Err(Error::arg("masks differ in shape"));
        }
        for (b, o) in bits.iter_mut().zip(&m.bits) {
            *b |= *o;
        }
    }
    InpaintMask::new(first.height, first.width, bits)
}
