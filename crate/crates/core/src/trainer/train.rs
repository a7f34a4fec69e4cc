use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classifier::{Classifier, CnnConfig, ForwardCache};
use crate::dataset::{Dataset, SampleRef};
use crate::error::{Error, Result};
use crate::nn::{sgd_step, Adam};
use crate::pil::{epoch_view, PilSchedule};
use crate::rng::rng_for;
use crate::trainer::loss::LossKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub loss: LossKind,
    pub image_size: usize,
    pub channels: [usize; 3],
    pub seed: u64,
}

impl TrainConfig {
    /// Laptop-scale defaults: 64×64 input, batch 32. The small CNN needs a
    /// larger step than the published 1e-3 to converge within 10 epochs.
    pub fn desk() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 3e-3,
            optimizer: Optimizer::Adam,
            loss: LossKind::Bce,
            image_size: 64,
            channels: [8, 16, 32],
            seed: 0,
        }
    }

    /// The published classifier setup (256×256, batch 128, Adam at 1e-3, 10
    /// epochs). Far too slow for CPU runs of this crate's small CNN.
    pub fn paper_scale() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 1e-3,
            image_size: 256,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::arg("epochs and batch size must be at least 1"));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::arg("learning rate must be positive"));
        }
        Ok(())
    }

    pub fn cnn_config(&self, in_channels: usize, num_classes: usize) -> CnnConfig {
        CnnConfig {
            in_channels,
            image_size: self.image_size,
            num_classes,
            channels: self.channels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub view_size: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("log serializes") + "\n")
            .collect()
    }
}

/// Supplies the training samples for each epoch.
pub trait EpochProvider {
    fn view(&self, epoch: usize) -> Result<Vec<SampleRef<'_>>>;
}

/// The same dataset every epoch.
pub struct ConstantProvider<'a>(pub &'a Dataset);

impl EpochProvider for ConstantProvider<'_> {
    fn view(&self, _epoch: usize) -> Result<Vec<SampleRef<'_>>> {
        Ok(self.0.iter().collect())
    }
}

/// Original data plus a progressively growing prefix of the augmented data.
pub struct PilProvider<'a> {
    pub original: &'a Dataset,
    pub augmented: &'a Dataset,
    pub schedule: PilSchedule,
}

impl<'a> PilProvider<'a> {
    pub fn new(original: &'a Dataset, augmented: &'a Dataset, beta: f64, ordering_seed: u64) -> Result<Self> {
        Ok(Self {
            original,
            augmented,
            schedule: PilSchedule::new(beta, augmented.len(), ordering_seed)?,
        })
    }
}

impl EpochProvider for PilProvider<'_> {
    fn view(&self, epoch: usize) -> Result<Vec<SampleRef<'_>>> {
        let v = epoch_view(self.original.len(), epoch as i64, &self.schedule)?;
        Ok(self
            .original
            .iter()
            .chain(v.augmented.iter().map(|i| self.augmented.sample(*i)))
            .collect())
    }
}

/// Trains (or, given `init`, fine-tunes) a classifier. Deterministic for a
/// fixed configuration.
pub fn train_classifier(
    cfg: &TrainConfig,
    provider: &dyn EpochProvider,
    init: Option<&Classifier>,
    num_classes: usize,
    in_channels: usize,
) -> Result<(Classifier, TrainingLog)> {
    cfg.validate()?;
    let mut model = match init {
        Some(m) => {
            if m.config().image_size != cfg.image_size || m.config().num_classes != num_classes {
                return Err(Error::arg(
                    "initial classifier does not match the training configuration",
                ));
            }
            m.clone()
        }
        None => Classifier::new(cfg.cnn_config(in_channels, num_classes), cfg.seed)?,
    };
    let mut adam = Adam::new(model.num_params(), cfg.learning_rate as f32);
    let mut grads = vec![0.0f32; model.num_params()];
    let mut cache = ForwardCache::default();
    let mut log = TrainingLog::default();
    for epoch in 0..cfg.epochs {
        let view = provider.view(epoch)?;
        if view.is_empty() {
            return Err(Error::arg(format!("epoch {epoch} has an empty training view")));
        }
        let mut order: Vec<usize> = (0..view.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &["classifier-epoch", &epoch.to_string()]));
        let mut total = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            grads.fill(0.0);
            for &i in batch {
                let s = view[i];
                let logits: Vec<f64> = model
                    .forward(s.image, &mut cache)?
                    .iter()
                    .map(|z| f64::from(*z))
                    .collect();
                let y = s.labels.flags();
                total += cfg.loss.loss(&logits, y)?;
                let dl: Vec<f32> = cfg
                    .loss
                    .grad(&logits, y)?
                    .iter()
                    .map(|g| (*g / batch.len() as f64) as f32)
                    .collect();
                model.backward(&mut cache, &dl, &mut grads);
            }
            match cfg.optimizer {
                Optimizer::Adam => adam.step(model.params_mut(), &grads),
                Optimizer::Sgd => sgd_step(model.params_mut(), &grads, cfg.learning_rate as f32),
            }
        }
        let mean_loss = total / view.len() as f64;
        log::info!("classifier epoch {epoch}: view {} mean loss {mean_loss:.5}", view.len());
        log.epochs.push(EpochLog {
            epoch,
            view_size: view.len(),
            mean_loss,
        });
    }
    Ok((model, log))
}
