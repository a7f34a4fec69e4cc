//! Toy denoising-diffusion generator trained on normal images, with a
//! known-region-replacement inpainting sampler.
//!
//! The denoiser is a stack of dilated 3×3 convolutions with a learned
//! per-layer bias driven by a sinusoidal timestep embedding. It predicts the
//! noise added at step `t` (the standard DDPM objective). Images are mapped
//! from [0, 1] to [-1, 1] for diffusion.
//!
//! Noise is drawn from ChaCha streams keyed by the caller's seed: stream 0
//! feeds the reverse process (initial state and per-step noise), stream 1
//! feeds the forward-noised copies of the known region. Unconditional
//! sampling and inpainting with a full mask therefore see identical
//! reverse-process noise.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cam::InpaintMask;
use crate::checkpoint;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, Adam, Conv2d, Linear, ParamLayout};
use crate::rng::{fill_standard_normal, keyed_stream};
use crate::trainer::{EpochLog, TrainingLog};
use crate::types::ImageTensor;

const KIND: &str = "generator";
const EMBED_DIM: usize = 16;
const DILATIONS: [usize; 3] = [1, 2, 4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSchedule {
    /// β linearly spaced from `start` to `end` over the timesteps.
    Linear { start: f64, end: f64 },
}

impl NoiseSchedule {
    /// The classic 1e-4..0.02 schedule for 1000 steps, rescaled so shorter
    /// chains still end near pure noise.
    pub fn scaled_linear(timesteps: usize) -> Self {
        let scale = 1000.0 / timesteps as f64;
        NoiseSchedule::Linear {
            start: (1e-4 * scale).min(0.5),
            end: (0.02 * scale).min(0.5),
        }
    }

    fn betas(&self, timesteps: usize) -> Vec<f64> {
        let NoiseSchedule::Linear { start, end } = *self;
        if timesteps == 1 {
            return vec![end];
        }
        (0..timesteps)
            .map(|i| start + (end - start) * i as f64 / (timesteps - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub image_size: usize,
    pub channels: usize,
    pub timesteps: usize,
    pub noise_schedule: NoiseSchedule,
    pub hidden_channels: usize,
    pub train_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl DiffusionConfig {
    /// Desk-scale default: 64×64 grayscale, 200 steps.
    pub fn desk(image_size: usize) -> Self {
        Self {
            image_size,
            channels: 1,
            timesteps: 200,
            noise_schedule: NoiseSchedule::scaled_linear(200),
            hidden_channels: 16,
            train_epochs: 10,
            batch_size: 16,
            learning_rate: 2e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 {
            return Err(Error::arg("diffusion needs at least one timestep"));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(8) {
            return Err(Error::arg(format!(
                "generator image size must be a positive multiple of 8, got {}",
                self.image_size
            )));
        }
        if self.channels == 0 || self.hidden_channels == 0 || self.batch_size == 0 {
            return Err(Error::arg("generator dimensions must be positive"));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::arg("learning rate must be positive"));
        }
        let NoiseSchedule::Linear { start, end } = self.noise_schedule;
        if !(start > 0.0 && end >= start && end < 1.0) {
            return Err(Error::arg("noise schedule must satisfy 0 < start <= end < 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Denoiser {
    convs: [Conv2d; 3],
    time: [Linear; 3],
    out: Conv2d,
}

impl Denoiser {
    fn build(cfg: &DiffusionConfig) -> (Self, usize) {
        let mut layout = ParamLayout::default();
        let h = cfg.hidden_channels;
        let convs = [
            Conv2d::new(&mut layout, cfg.channels, h, 3, DILATIONS[0]),
            Conv2d::new(&mut layout, h, h, 3, DILATIONS[1]),
            Conv2d::new(&mut layout, h, h, 3, DILATIONS[2]),
        ];
        let time = [
            Linear::new(&mut layout, EMBED_DIM, h),
            Linear::new(&mut layout, EMBED_DIM, h),
            Linear::new(&mut layout, EMBED_DIM, h),
        ];
        let out = Conv2d::new(&mut layout, h, cfg.channels, 3, 1);
        (Self { convs, time, out }, layout.len())
    }
}

fn time_embedding(t: usize, timesteps: usize) -> Vec<f32> {
    let pos = t as f64 / timesteps as f64 * 1000.0;
    let half = EMBED_DIM / 2;
    let mut e = Vec::with_capacity(EMBED_DIM);
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        e.push((pos * freq).sin() as f32);
    }
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        e.push((pos * freq).cos() as f32);
    }
    e
}

#[derive(Default)]
struct DenoiseCache {
    cols: [Vec<f32>; 4],
    acts: [Vec<f32>; 3],
    emb: Vec<f32>,
    scratch: Vec<f32>,
}

/// Precomputed schedule products.
#[derive(Debug, Clone)]
struct Schedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl Schedule {
    fn new(cfg: &DiffusionConfig) -> Self {
        let betas = cfg.noise_schedule.betas(cfg.timesteps);
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut prod = 1.0;
        for a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        Self {
            betas,
            alphas,
            alpha_bars,
        }
    }

    fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }
}

/// A trained normal-image generator.
#[derive(Debug, Clone)]
pub struct GeneratorCheckpoint {
    config: DiffusionConfig,
    params: Vec<f32>,
    generator_id: String,
    net: Denoiser,
    schedule: Schedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseSeed(pub u64);

impl GeneratorCheckpoint {
    fn from_parts(config: DiffusionConfig, params: Vec<f32>) -> Result<Self> {
        config.validate()?;
        let (net, n) = Denoiser::build(&config);
        if params.len() != n {
            return Err(Error::Checkpoint(format!(
                "generator expects {n} parameters, got {}",
                params.len()
            )));
        }
        let generator_id = checkpoint::content_id(KIND, &config, &params);
        let schedule = Schedule::new(&config);
        Ok(Self {
            config,
            params,
            generator_id,
            net,
            schedule,
        })
    }

    /// Freshly initialized (untrained) weights.
    pub fn initialized(config: DiffusionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (net, n) = Denoiser::build(&config);
        let mut params = vec![0.0; n];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for c in net.convs {
            c.init(&mut params, &mut rng);
        }
        for l in net.time {
            l.init(&mut params, &mut rng);
            // Start with a weak timestep signal.
            for w in &mut params[l.weight..l.weight + l.inputs * l.outputs] {
                *w *= 0.1;
            }
        }
        net.out.init(&mut params, &mut rng);
        for w in &mut params[net.out.weight..net.out.weight + net.out.out_channels * net.out.in_channels * 9] {
            *w *= 0.1;
        }
        Self::from_parts(config, params)
    }

    pub fn config(&self) -> &DiffusionConfig {
        &self.config
    }

    pub fn generator_id(&self) -> &str {
        &self.generator_id
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, KIND, &self.config, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (config, params) = checkpoint::load(path, KIND)?;
        Self::from_parts(config, params)
    }

    fn plane(&self) -> usize {
        self.config.image_size * self.config.image_size
    }

    /// Predicts the noise in `x` (C×H×W, diffusion scale) at step `t`.
    fn predict_noise(&self, params: &[f32], x: &[f32], t: usize, cache: &mut DenoiseCache) -> Vec<f32> {
        let s = self.config.image_size;
        let hw = s * s;
        cache.emb = time_embedding(t, self.config.timesteps);
        let mut input = x.to_vec();
        let mut tb = Vec::new();
        for (i, conv) in self.net.convs.iter().enumerate() {
            let mut out = std::mem::take(&mut cache.acts[i]);
            conv.forward(params, &input, s, s, &mut cache.cols[i], &mut out);
            self.net.time[i].forward(params, &cache.emb, &mut tb);
            for (plane, b) in out.chunks_exact_mut(hw).zip(&tb) {
                for v in plane {
                    *v = (*v + b).max(0.0);
                }
            }
            input.clone_from(&out);
            cache.acts[i] = out;
        }
        let mut eps = Vec::new();
        self.net.out.forward(params, &input, s, s, &mut cache.cols[3], &mut eps);
        eps
    }

    fn backward(&self, params: &[f32], cache: &mut DenoiseCache, grad_eps: &[f32], grads: &mut [f32]) {
        let s = self.config.image_size;
        let hw = s * s;
        let mut g = Vec::new();
        self.net.out.backward(
            params,
            &cache.cols[3],
            grad_eps,
            s,
            s,
            grads,
            &mut cache.scratch,
            Some(&mut g),
        );
        for i in (0..3).rev() {
            nn::relu_backward(&cache.acts[i], &mut g);
            let bias_grad: Vec<f32> = g.chunks_exact(hw).map(|p| p.iter().sum()).collect();
            self.net.time[i].backward(params, &cache.emb, &bias_grad, grads, None);
            let mut next = Vec::new();
            let want_input = i > 0;
            self.net.convs[i].backward(
                params,
                &cache.cols[i],
                &g,
                s,
                s,
                grads,
                &mut cache.scratch,
                want_input.then_some(&mut next),
            );
            g = next;
        }
    }

    fn check_image(&self, image: &ImageTensor) -> Result<()> {
        let s = self.config.image_size;
        if image.height() != s || image.width() != s || image.channels() != self.config.channels {
            return Err(Error::arg(format!(
                "generator works at {s}x{s}x{}, got {}x{}x{}",
                self.config.channels,
                image.height(),
                image.width(),
                image.channels()
            )));
        }
        Ok(())
    }

    /// Full reverse trajectory. With `known`, pixels outside the mask are
    /// pinned at every step to the forward-noised original.
    fn reverse(&self, seed: NoiseSeed, known: Option<(&[f32], &[bool])>) -> Vec<f32> {
        let c = self.config.channels;
        let n = c * self.plane();
        let sch = &self.schedule;
        let mut sampler = keyed_stream(seed.0, 0);
        let mut known_rng = keyed_stream(seed.0, 1);
        let mut x = vec![0.0f32; n];
        fill_standard_normal(&mut sampler, &mut x);
        let mut z = vec![0.0f32; n];
        let mut kz = vec![0.0f32; n];
        let mut cache = DenoiseCache::default();
        for t in (0..self.config.timesteps).rev() {
            let eps = self.predict_noise(&self.params, &x, t, &mut cache);
            let ab = sch.alpha_bars[t];
            let ab_prev = sch.alpha_bar_prev(t);
            let beta = sch.betas[t];
            let coef_x0 = ab_prev.sqrt() * beta / (1.0 - ab);
            let coef_xt = sch.alphas[t].sqrt() * (1.0 - ab_prev) / (1.0 - ab);
            let sigma = ((1.0 - ab_prev) / (1.0 - ab) * beta).sqrt();
            if t > 0 {
                fill_standard_normal(&mut sampler, &mut z);
            }
            for i in 0..n {
                let xt = f64::from(x[i]);
                let x0 = ((xt - (1.0 - ab).sqrt() * f64::from(eps[i])) / ab.sqrt()).clamp(-1.0, 1.0);
                let mut next = coef_x0 * x0 + coef_xt * xt;
                if t > 0 {
                    next += sigma * f64::from(z[i]);
                }
                x[i] = next as f32;
            }
            if let Some((orig, mask)) = known {
                if t > 0 {
                    fill_standard_normal(&mut known_rng, &mut kz);
                }
                for i in 0..n {
                    if !mask[i] {
                        let x0 = f64::from(orig[i]);
                        x[i] = if t > 0 {
                            (ab_prev.sqrt() * x0 + (1.0 - ab_prev).sqrt() * f64::from(kz[i])) as f32
                        } else {
                            orig[i]
                        };
                    }
                }
            }
        }
        x
    }

    fn to_image(&self, chw: &[f32]) -> Result<ImageTensor> {
        let s = self.config.image_size;
        let c = self.config.channels;
        let hw = s * s;
        let mut hwc = vec![0.0; chw.len()];
        for ch in 0..c {
            for p in 0..hw {
                hwc[p * c + ch] = (chw[ch * hw + p] + 1.0) * 0.5;
            }
        }
        ImageTensor::from_clamped(s, s, c, hwc)
    }
}

fn to_diffusion_scale(image: &ImageTensor) -> Vec<f32> {
    image.to_chw().iter().map(|v| v * 2.0 - 1.0).collect()
}

/// Trains the denoiser on images that carry no positive label.
pub fn train_normal_generator(
    normals: &Dataset,
    config: DiffusionConfig,
    seed: u64,
) -> Result<(GeneratorCheckpoint, TrainingLog)> {
    config.validate()?;
    if normals.is_empty() {
        return Err(Error::arg("cannot train a generator on an empty manifest"));
    }
    if let Some(r) = normals.manifest.records.iter().find(|r| r.labels.any()) {
        return Err(Error::Contamination { id: r.id.clone() });
    }
    let ckpt = GeneratorCheckpoint::initialized(config.clone(), seed)?;
    for img in &normals.images {
        ckpt.check_image(img)?;
    }
    let data: Vec<Vec<f32>> = normals.images.iter().map(to_diffusion_scale).collect();
    let n = ckpt.config.channels * ckpt.plane();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut params = ckpt.params.clone();
    let mut adam = Adam::new(params.len(), config.learning_rate as f32);
    let mut grads = vec![0.0f32; params.len()];
    let mut cache = DenoiseCache::default();
    let mut eps = vec![0.0f32; n];
    let mut xt = vec![0.0f32; n];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = TrainingLog::default();
    for epoch in 0..config.train_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            grads.fill(0.0);
            for &i in batch {
                let t = rng.random_range(0..config.timesteps);
                fill_standard_normal(&mut rng, &mut eps);
                let ab = ckpt.schedule.alpha_bars[t];
                let (sa, sn) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
                for ((x, d), e) in xt.iter_mut().zip(&data[i]).zip(&eps) {
                    *x = sa * d + sn * e;
                }
                let pred = ckpt.predict_noise(&params, &xt, t, &mut cache);
                let scale = 2.0 / (n * batch.len()) as f32;
                let mut sq = 0.0f64;
                let grad: Vec<f32> = pred
                    .iter()
                    .zip(&eps)
                    .map(|(p, e)| {
                        let d = p - e;
                        sq += f64::from(d * d);
                        scale * d
                    })
                    .collect();
                total += sq / n as f64;
                ckpt.backward(&params, &mut cache, &grad, &mut grads);
            }
            adam.step(&mut params, &grads);
        }
        let mean_loss = total / data.len() as f64;
        log::info!("generator epoch {epoch}: mean loss {mean_loss:.5}");
        log.epochs.push(EpochLog {
            epoch,
            view_size: data.len(),
            mean_loss,
        });
    }
    Ok((GeneratorCheckpoint::from_parts(config, params)?, log))
}

pub fn sample_unconditional(ckpt: &GeneratorCheckpoint, seed: NoiseSeed) -> Result<ImageTensor> {
    ckpt.to_image(&ckpt.reverse(seed, None))
}

/// Regenerates the masked pixels of `image`; pixels outside the mask are
/// returned unchanged.
pub fn inpaint(
    ckpt: &GeneratorCheckpoint,
    image: &ImageTensor,
    mask: &InpaintMask,
    seed: NoiseSeed,
) -> Result<ImageTensor> {
    ckpt.check_image(image)?;
    if !mask.matches(image) {
        return Err(Error::arg("mask shape does not match image"));
    }
    if mask.count() == 0 {
        return Ok(image.clone());
    }
    let c = image.channels();
    let orig = to_diffusion_scale(image);
    let chw_mask: Vec<bool> = (0..c).flat_map(|_| mask.bits().iter().copied()).collect();
    let generated = ckpt.to_image(&ckpt.reverse(seed, Some((&orig, &chw_mask))))?;
    let data = generated
        .data()
        .iter()
        .zip(image.data())
        .enumerate()
        .map(|(i, (g, o))| if mask.bits()[i / c] { *g } else { *o })
        .collect();
    ImageTensor::new(image.height(), image.width(), c, data)
}
