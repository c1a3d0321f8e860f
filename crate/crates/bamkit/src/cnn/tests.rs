use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tempfile::tempdir;

use super::*;

fn tiny_config(dtype: DType) -> ModelConfig {
    ModelConfig {
        input_size: 12,
        input_channels: 2,
        conv_channels: vec![3, 4],
        kernel_size: 3,
        pool_size: 2,
        num_classes: 3,
        dropout_rate: 0.25,
        dtype,
    }
}

fn random_image(rng: &mut StdRng, channels: usize, size: usize, dtype: DType) -> Tensor {
    let data: Vec<f64> = (0..channels * size * size).map(|_| rng.gen()).collect();
    Tensor::from_f64_vec(&[channels, size, size], data, dtype)
}

/// Two-class set where the label picks which channel is bright; easy
/// enough that a few epochs reach full validation accuracy.
fn separable_set(seed: u64, n: usize) -> Vec<(Tensor, usize)> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let mut data = vec![0.0f64; 2 * 12 * 12];
            for c in 0..2 {
                let base = if c == label { 0.8 } else { 0.1 };
                for v in &mut data[c * 144..(c + 1) * 144] {
                    *v = base + rng.gen::<f64>() * 0.15;
                }
            }
            (Tensor::from_f64_vec(&[2, 12, 12], data, DType::F32), label)
        })
        .collect()
}

fn two_class_config() -> ModelConfig {
    ModelConfig {
        num_classes: 2,
        ..tiny_config(DType::F32)
    }
}

fn params_equal(a: &Checkpoint, b: &Checkpoint) -> bool {
    a.params.len() == b.params.len()
        && a.params
            .iter()
            .zip(&b.params)
            .all(|((na, ta), (nb, tb))| na == nb && ta.to_f64_vec() == tb.to_f64_vec())
}

#[test]
fn init_is_deterministic_and_seed_sensitive() {
    let a = Checkpoint::init(tiny_config(DType::F32), 5).unwrap();
    let b = Checkpoint::init(tiny_config(DType::F32), 5).unwrap();
    let c = Checkpoint::init(tiny_config(DType::F32), 6).unwrap();
    assert!(params_equal(&a, &b));
    assert!(!params_equal(&a, &c));
    assert_eq!(a.meta.epochs_trained, 0);
}

#[test]
fn config_validation_rejects_bad_shapes() {
    let ok = tiny_config(DType::F32);
    assert!(ok.validate().is_ok());
    let mut even_kernel = ok.clone();
    even_kernel.kernel_size = 4;
    assert!(even_kernel.validate().is_err());
    let mut indivisible = ok.clone();
    indivisible.input_size = 13;
    assert!(indivisible.validate().is_err());
    let mut full_dropout = ok.clone();
    full_dropout.dropout_rate = 1.0;
    assert!(full_dropout.validate().is_err());
    let mut no_blocks = ok;
    no_blocks.conv_channels.clear();
    assert!(no_blocks.validate().is_err());
}

#[test]
fn feature_dims_follow_the_pool_chain() {
    assert_eq!(ModelConfig::default().feature_dims(), (8, 8 * 8 * 32));
    assert_eq!(tiny_config(DType::F32).feature_dims(), (3, 3 * 3 * 4));
}

#[test]
fn taps_have_documented_shapes() {
    let ckpt = Checkpoint::init(tiny_config(DType::F32), 1).unwrap();
    let mut rng = StdRng::seed_from_u64(2);
    let img = random_image(&mut rng, 2, 12, DType::F32);
    let out = forward_with_taps(&ckpt, &img).unwrap();
    // first activation keeps full input resolution (stride 1, same pad)
    assert_eq!(out.first_activation.shape(), [3, 12, 12]);
    assert_eq!(out.last_activation.shape(), [4, 6, 6]);
    assert_eq!(out.last_gradient.shape(), [4, 6, 6]);
    assert_eq!(out.logits.len(), 3);
    assert!(out.predicted < 3);
}

#[test]
fn inference_is_bit_deterministic() {
    let ckpt = Checkpoint::init(tiny_config(DType::F32), 3).unwrap();
    let mut rng = StdRng::seed_from_u64(4);
    let img = random_image(&mut rng, 2, 12, DType::F32);
    let a = forward_with_taps(&ckpt, &img).unwrap();
    let b = forward_with_taps(&ckpt, &img).unwrap();
    assert_eq!(a.logits, b.logits);
    assert_eq!(a.predicted, b.predicted);
    assert_eq!(a.last_gradient.to_f64_vec(), b.last_gradient.to_f64_vec());
}

#[test]
fn logit_gradient_matches_activation_probe() {
    let ckpt = Checkpoint::init(tiny_config(DType::F64), 7).unwrap();
    let mut rng = StdRng::seed_from_u64(8);
    let img = random_image(&mut rng, 2, 12, DType::F64);
    let out = forward_with_taps(&ckpt, &img).unwrap();
    let act = out.last_activation.to_f64_vec();
    let (hh, ww) = (6, 6);

    // skip cells within 1e-3 of their pool-window rival: a perturbation
    // there can flip the argmax, and a one-sided kink halves the central
    // difference while the analytic gradient stays on one branch
    let far_from_pool_tie = |i: usize| {
        let (c, y, x) = (i / (hh * ww), (i / ww) % hh, i % ww);
        let (y0, x0) = (y - y % 2, x - x % 2);
        let rival = (0..4)
            .map(|j| (y0 + j / 2, x0 + j % 2))
            .filter(|&(wy, wx)| (wy, wx) != (y, x))
            .map(|(wy, wx)| act[c * hh * ww + wy * ww + wx])
            .fold(f64::NEG_INFINITY, f64::max);
        (act[i] - rival).abs() > 1e-3
    };

    let h = 1e-5;
    let mut checked = 0;
    for i in (0..act.len()).filter(|&i| far_from_pool_tie(i)).take(12) {
        let plus = logit_with_activation_offset(&ckpt, &img, out.predicted, &[i], h).unwrap();
        let minus = logit_with_activation_offset(&ckpt, &img, out.predicted, &[i], -h).unwrap();
        let fd = (plus - minus) / (2.0 * h);
        let got = out.last_gradient.at(i);
        assert!(
            (fd - got).abs() <= 1e-7 + 1e-6 * got.abs(),
            "index {i}: finite difference {fd} vs gradient {got}"
        );
        checked += 1;
    }
    assert!(checked >= 6, "only {checked} probe cells were usable");
}

#[test]
fn forward_rejects_wrong_shapes_and_classes() {
    let ckpt = Checkpoint::init(tiny_config(DType::F32), 1).unwrap();
    let bad = Tensor::zeros(&[2, 11, 12], DType::F32);
    assert!(matches!(
        predict(&ckpt, &bad),
        Err(Error::ShapeMismatch { .. })
    ));
    let img = Tensor::zeros(&[2, 12, 12], DType::F32);
    assert!(matches!(
        logit_with_activation_offset(&ckpt, &img, 9, &[0], 0.1),
        Err(Error::LabelOutOfRange { .. })
    ));
}

fn dir_snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn checkpoint_save_load_save_is_bit_identical() {
    let ckpt = Checkpoint::init(tiny_config(DType::F32), 11).unwrap();
    let d1 = tempdir().unwrap();
    let d2 = tempdir().unwrap();
    ckpt.save(d1.path()).unwrap();
    let loaded = Checkpoint::load(d1.path()).unwrap();
    loaded.save(d2.path()).unwrap();
    assert_eq!(dir_snapshot(d1.path()), dir_snapshot(d2.path()));
    assert_eq!(loaded.config, ckpt.config);
    assert_eq!(loaded.meta, ckpt.meta);
    assert!(params_equal(&ckpt, &loaded));
}

#[test]
fn loaded_checkpoint_predicts_identically() {
    let ckpt = Checkpoint::init(tiny_config(DType::F32), 12).unwrap();
    let mut rng = StdRng::seed_from_u64(13);
    let img = random_image(&mut rng, 2, 12, DType::F32);
    let dir = tempdir().unwrap();
    ckpt.save(dir.path()).unwrap();
    let loaded = Checkpoint::load(dir.path()).unwrap();
    assert_eq!(
        predict_logits(&ckpt, &img).unwrap(),
        predict_logits(&loaded, &img).unwrap()
    );
}

#[test]
fn zero_epochs_leaves_initialization_untouched() {
    let mut ckpt = Checkpoint::init(two_class_config(), 21).unwrap();
    let reference = ckpt.clone();
    let set = separable_set(1, 8);
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let history = train(&mut ckpt, &set, &set, &cfg).unwrap();
    assert!(history.epochs.is_empty());
    assert!(params_equal(&ckpt, &reference));
    assert_eq!(ckpt.meta.epochs_trained, 0);
}

#[test]
fn training_learns_and_is_reproducible() {
    let cfg = TrainConfig {
        epochs: 6,
        lr: 0.01,
        batch_size: 4,
        seed: 3,
        ..TrainConfig::default()
    };
    let train_set = separable_set(5, 24);
    let val_set = separable_set(6, 8);

    let mut a = Checkpoint::init(two_class_config(), 31).unwrap();
    let hist_a = train(&mut a, &train_set, &val_set, &cfg).unwrap();
    let mut b = Checkpoint::init(two_class_config(), 31).unwrap();
    let hist_b = train(&mut b, &train_set, &val_set, &cfg).unwrap();

    assert_eq!(hist_a.epochs, hist_b.epochs);
    assert!(params_equal(&a, &b));
    let final_acc = hist_a.epochs.last().unwrap().val_accuracy;
    assert!(final_acc >= 0.75, "final val accuracy {final_acc}");
    assert_eq!(a.meta.epochs_trained, hist_a.epochs.len());
    assert_eq!(a.meta.final_val_accuracy, Some(final_acc));
    // loss should move: training actually updated the parameters
    assert!(hist_a.epochs.first().unwrap().train_loss > hist_a.epochs.last().unwrap().train_loss);
}

#[test]
fn early_stop_honors_the_accuracy_target() {
    let cfg = TrainConfig {
        epochs: 20,
        lr: 0.01,
        batch_size: 4,
        seed: 3,
        target_val_accuracy: Some(0.75),
        ..TrainConfig::default()
    };
    let mut ckpt = Checkpoint::init(two_class_config(), 31).unwrap();
    let hist = train(&mut ckpt, &separable_set(5, 24), &separable_set(6, 8), &cfg).unwrap();
    assert!(hist.stopped_early);
    assert!(hist.epochs.len() < 20);
    assert!(hist.epochs.last().unwrap().val_accuracy >= 0.75);
}

#[test]
fn saturated_accuracy_halves_the_learning_rate() {
    let cfg = TrainConfig {
        epochs: 8,
        lr: 0.01,
        batch_size: 4,
        plateau_patience: 1,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut ckpt = Checkpoint::init(two_class_config(), 31).unwrap();
    let hist = train(&mut ckpt, &separable_set(5, 24), &separable_set(6, 8), &cfg).unwrap();
    let lrs: Vec<f64> = hist.epochs.iter().map(|e| e.lr).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]), "lr went up: {lrs:?}");
    assert!(
        lrs.last().unwrap() < &0.01,
        "plateau never fired on a saturating run: {lrs:?}"
    );
}

#[test]
fn divergent_loss_aborts_with_the_epoch() {
    let cfg = TrainConfig {
        epochs: 3,
        lr: 1e20,
        batch_size: 4,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut ckpt = Checkpoint::init(two_class_config(), 31).unwrap();
    let err = train(&mut ckpt, &separable_set(5, 16), &separable_set(6, 4), &cfg).unwrap_err();
    assert!(matches!(err, Error::TrainingDiverged { epoch: 1 }));
}

#[test]
fn empty_sets_and_zero_batches_are_rejected() {
    let mut ckpt = Checkpoint::init(two_class_config(), 1).unwrap();
    let set = separable_set(1, 4);
    let cfg = TrainConfig::default();
    assert!(matches!(
        train(&mut ckpt, &[], &set, &cfg),
        Err(Error::EmptyInput { .. })
    ));
    assert!(matches!(
        train(&mut ckpt, &set, &[], &cfg),
        Err(Error::EmptyInput { .. })
    ));
    let bad = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    assert!(matches!(
        train(&mut ckpt, &set, &set, &bad),
        Err(Error::InvalidArgument { .. })
    ));
}

#[test]
fn plateau_rule_fires_exactly_on_schedule() {
    let mut sched = PlateauScheduler::new(2, 0.5);
    assert_eq!(sched.observe(0.5), None); // first value is a new best
    assert_eq!(sched.observe(0.5), None); // stale 1
    assert_eq!(sched.observe(0.5), Some(0.5)); // stale 2: fire and reset
    assert_eq!(sched.observe(0.5), None); // stale 1 again
    assert_eq!(sched.observe(0.6), None); // improvement resets the count
    assert_eq!(sched.observe(0.6), None);
    assert_eq!(sched.observe(0.55), Some(0.5));
}

#[test]
fn equal_logits_predict_the_lowest_class() {
    assert_eq!(argmax(&[1.0, 1.0, 1.0]), 0);
    assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
}
