use inpaint_aug::cam::InpaintMask;
use inpaint_aug::rng::rng_for;
use inpaint_aug::synth::{generate_synthetic_dataset, oracle_inpaint, LesionShape, LesionSpec, SynthWorldConfig};
use rand::Rng;

fn two_class_world(freq: [f64; 2], samples: usize) -> SynthWorldConfig {
    let mut w = SynthWorldConfig::default_world();
    w.class_frequencies = freq.to_vec();
    w.lesions = vec![
        LesionSpec {
            shape: LesionShape::Ellipse { ry: 7.0, rx: 9.0 },
            intensity: 0.28,
        },
        LesionSpec {
            shape: LesionShape::Bar {
                half_length: 8.0,
                half_width: 2.0,
                vertical: true,
            },
            intensity: 0.38,
        },
    ];
    w.entangle_prob = vec![vec![0.0; 2]; 2];
    w.train_samples = samples;
    w.test_samples = 1;
    w.seed = 11;
    w
}

#[test]
fn inclusion_rates_follow_frequencies() {
    let world = generate_synthetic_dataset(&two_class_world([0.9, 0.02], 1000)).unwrap();
    let n = world.train.len() as f64;
    for (c, target) in [0.9, 0.02].into_iter().enumerate() {
        let rate = world.train.manifest.records.iter().filter(|r| r.labels.get(c)).count() as f64 / n;
        assert!((rate - target).abs() <= 0.03, "class {c}: rate {rate} vs {target}");
    }
}

#[test]
fn entanglement_rate_among_co_present_samples() {
    // Frequent enough that both classes co-occur in a few hundred samples.
    let mut cfg = two_class_world([0.7, 0.6], 1000);
    cfg.set_entanglement(0, 1, 0.3);
    let world = generate_synthetic_dataset(&cfg).unwrap();
    let mut both = 0usize;
    let mut overlapping = 0usize;
    for s in world.truth.samples.values().filter(|s| s.id.starts_with("train")) {
        if s.classes.contains(&0) && s.classes.contains(&1) {
            both += 1;
            overlapping += usize::from(s.masks[&0].overlap(&s.masks[&1]) > 0);
        }
    }
    assert!(both > 300, "only {both} co-present samples");
    let rate = overlapping as f64 / both as f64;
    assert!((rate - 0.3).abs() <= 0.05, "overlap rate {rate}");
}

#[test]
fn oracle_is_per_pixel_select() {
    let mut cfg = SynthWorldConfig::default_world();
    cfg.train_samples = 5;
    cfg.test_samples = 1;
    let world = generate_synthetic_dataset(&cfg).unwrap();
    let mut rng = rng_for(2, &["oracle"]);
    for s in world.train.iter() {
        let truth = world.truth.get(s.id).unwrap();
        let bits: Vec<bool> = (0..64 * 64).map(|_| rng.random_bool(0.3)).collect();
        let mask = InpaintMask::new(64, 64, bits.clone()).unwrap();
        let out = oracle_inpaint(s.image, &mask, truth).unwrap();
        for (i, m) in bits.iter().enumerate() {
            let want = if *m {
                truth.background.data()[i]
            } else {
                s.image.data()[i]
            };
            assert_eq!(out.data()[i].to_bits(), want.to_bits());
        }
    }
}

#[test]
fn lesion_masks_cover_labeled_classes_only() {
    let world = generate_synthetic_dataset(&two_class_world([0.5, 0.5], 200)).unwrap();
    for r in &world.train.manifest.records {
        let truth = world.truth.get(&r.id).unwrap();
        let keys: Vec<usize> = truth.masks.keys().copied().collect();
        assert_eq!(keys, r.labels.present().into_iter().collect::<Vec<_>>());
        assert!(truth.masks.values().all(|m| m.count() > 0));
    }
}
