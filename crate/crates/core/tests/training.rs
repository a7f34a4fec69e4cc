use inpaint_aug::augment::augmented_id;
use inpaint_aug::dataset::Dataset;
use inpaint_aug::generator::{
    sample_unconditional, train_normal_generator, DiffusionConfig, GeneratorCheckpoint, NoiseSchedule, NoiseSeed,
};
use inpaint_aug::pil::{pil_included_count, PilSchedule};
use inpaint_aug::stats::HeadTailPartition;
use inpaint_aug::synth::{generate_synthetic_dataset, LesionSpec, SynthWorldConfig};
use inpaint_aug::trainer::{evaluate, train_classifier, ConstantProvider, PilProvider, TrainConfig};
use inpaint_aug::types::{ImageTensor, LabelVector, Manifest, SampleRecord, SplitTag};

fn world(size: usize, train: usize, seed: u64) -> inpaint_aug::synth::SynthWorld {
    let mut w = SynthWorldConfig::default_world();
    let scale = size as f64 / w.image_size as f64;
    w.lesions = w
        .lesions
        .iter()
        .map(|l| LesionSpec {
            shape: l.shape.scaled_uniform(scale),
            ..*l
        })
        .collect();
    w.min_gap = 3;
    w.image_size = size;
    w.train_samples = train;
    w.test_samples = 50;
    w.seed = seed;
    generate_synthetic_dataset(&w).unwrap()
}

fn tiny_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        image_size: 32,
        channels: [8, 8, 16],
        seed: 5,
        ..TrainConfig::desk()
    }
}

#[test]
fn classifier_loss_falls_and_training_is_deterministic() {
    let w = world(32, 200, 1);
    let cfg = tiny_train(5);
    let (a, log) = train_classifier(&cfg, &ConstantProvider(&w.train), None, 8, 1).unwrap();
    assert_eq!(log.epochs.len(), 5);
    assert!(log.epochs[4].mean_loss < log.epochs[0].mean_loss, "{:?}", log.epochs);
    let (b, _) = train_classifier(&cfg, &ConstantProvider(&w.train), None, 8, 1).unwrap();
    assert_eq!(a.params(), b.params());
    let p = HeadTailPartition::from_tail(8, [6, 7].into()).unwrap();
    assert_eq!(
        evaluate(&a, &w.test, &p, 0.5).unwrap(),
        evaluate(&b, &w.test, &p, 0.5).unwrap()
    );
}

#[test]
fn pil_views_are_logged_per_epoch() {
    let w = world(32, 60, 2);
    let registry = w.train.registry().clone();
    let n_aug = 50;
    let records = (0..n_aug)
        .map(|i| SampleRecord {
            id: augmented_id(&format!("s{i}"), 0),
            image_path: String::new(),
            labels: LabelVector::from_indices(8, [6]).unwrap(),
        })
        .collect();
    let images = vec![ImageTensor::filled(32, 32, 1, 0.5).unwrap(); n_aug];
    let aug = Dataset::new(Manifest::new(registry, records, SplitTag::Augmented).unwrap(), images).unwrap();
    let provider = PilProvider::new(&w.train, &aug, 0.5, 9).unwrap();
    let (_, log) = train_classifier(&tiny_train(6), &provider, None, 8, 1).unwrap();
    let schedule = PilSchedule::new(0.5, n_aug, 9).unwrap();
    for e in &log.epochs {
        let want = w.train.len() + pil_included_count(e.epoch as i64, &schedule).unwrap();
        assert_eq!(e.view_size, want, "epoch {}", e.epoch);
    }
    assert_eq!(log.epochs[0].view_size, w.train.len());
}

fn normals(n: usize) -> Dataset {
    let w = world(32, n * 12, 3);
    let normals = w.train.filter(|s| !s.labels.any()).unwrap();
    assert!(normals.len() >= n / 2, "only {} normals", normals.len());
    normals
}

fn tiny_diffusion(epochs: usize) -> DiffusionConfig {
    DiffusionConfig {
        image_size: 32,
        channels: 1,
        timesteps: 20,
        noise_schedule: NoiseSchedule::scaled_linear(20),
        hidden_channels: 8,
        train_epochs: epochs,
        batch_size: 8,
        learning_rate: 2e-3,
    }
}

#[test]
fn generator_loss_falls() {
    let data = normals(200);
    let (_, log) = train_normal_generator(&data, tiny_diffusion(5), 4).unwrap();
    let first = log.epochs.first().unwrap().mean_loss;
    let last = log.epochs.last().unwrap().mean_loss;
    assert!(last < first, "loss {first} -> {last}");
}

#[test]
fn generator_samples_centre_on_the_normal_mean() {
    let data = normals(200);
    let (ckpt, _) = train_normal_generator(&data, tiny_diffusion(30), 4).unwrap();
    let pixels = |imgs: &[ImageTensor]| {
        let n: usize = imgs.iter().map(|i| i.data().len()).sum();
        imgs.iter()
            .flat_map(|i| i.data().iter())
            .map(|v| f64::from(*v))
            .sum::<f64>()
            / n as f64
    };
    let target = pixels(&data.images);
    let samples: Vec<ImageTensor> = (0..16)
        .map(|s| sample_unconditional(&ckpt, NoiseSeed(s)).unwrap())
        .collect();
    let got = pixels(&samples);
    assert!((got - target).abs() <= 0.1, "sample mean {got} vs data mean {target}");
}

#[test]
fn generator_checkpoint_round_trip_samples_identically() {
    let (ckpt, _) = train_normal_generator(&normals(40), tiny_diffusion(1), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.ckpt");
    ckpt.save(&path).unwrap();
    let back = GeneratorCheckpoint::load(&path).unwrap();
    let a = sample_unconditional(&ckpt, NoiseSeed(3)).unwrap();
    let b = sample_unconditional(&back, NoiseSeed(3)).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}
