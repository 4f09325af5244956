use scfnet::augment::AugmentConfig;
use scfnet::model::{init_params, Arch, ModelConfig, ModelParams};
use scfnet::synth::{generate, SynthConfig};
use scfnet::train::{train_model, transfer_from, LossKind, TrainConfig};
use scfnet::{Dataset, Error};

fn data(channels: usize, classes: usize, seed: u64) -> Dataset {
    let freqs = [2.0, 6.0, 12.0, 20.0, 30.0, 40.0];
    generate(&SynthConfig {
        n_classes: classes,
        class_freqs_hz: freqs[..classes].to_vec(),
        n_channels: channels,
        n_patients: 6,
        segments_per_patient: 6,
        window_samples: 64,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn quick() -> TrainConfig {
    TrainConfig { max_epochs: 2, k_folds: 3, batch_size: 8, seed: 4, ..TrainConfig::default() }
}

fn model(ds: &Dataset) -> ModelConfig {
    ModelConfig::desk(ds.n_channels(), ds.window_samples, ds.n_classes())
}

#[test]
fn same_seed_same_run() {
    let ds = data(3, 4, 1);
    let a = train_model(&ds, &model(&ds), &quick()).unwrap();
    let b = train_model(&ds, &model(&ds), &quick()).unwrap();
    assert_eq!(a.record, b.record);
    assert_eq!(a.models, b.models);
    let parallel = train_model(&ds, &model(&ds), &TrainConfig { jobs: 3, ..quick() }).unwrap();
    assert_eq!(parallel.models, a.models);
    assert_eq!(parallel.record.folds, a.record.folds);
    let other = train_model(&ds, &model(&ds), &TrainConfig { seed: 5, ..quick() }).unwrap();
    assert_ne!(other.record.folds[0].train_loss, a.record.folds[0].train_loss);
}

#[test]
fn record_is_consistent() {
    let ds = data(2, 4, 2);
    let run = train_model(&ds, &model(&ds), &TrainConfig { loss: LossKind::CrossEntropy, ..quick() }).unwrap();
    let r = &run.record;
    assert_eq!(r.folds.len(), 3);
    assert_eq!(r.folds.iter().map(|f| f.n_val).sum::<usize>(), ds.len());
    assert_eq!(r.total_epochs, r.folds.iter().map(|f| f.epochs_run).sum::<usize>());
    for f in &r.folds {
        assert_eq!(f.n_train + f.n_val, ds.len());
        assert_eq!(f.val_loss.len(), f.epochs_run);
        assert_eq!(f.best_val_loss, f.val_loss[f.best_epoch]);
    }
    let json = serde_json::to_string(r).unwrap();
    assert_eq!(&serde_json::from_str::<scfnet::train::RunRecord>(&json).unwrap(), r);
}

#[test]
fn frozen_extractor_is_bitwise_unchanged() {
    let ds = data(3, 4, 3);
    let cfg = model(&ds);
    let start: ModelParams = init_params(&cfg, 7).unwrap();
    let run = transfer_from(&start, &ds, &cfg, &quick()).unwrap();
    for m in &run.models {
        for (name, t) in &start.tensors {
            if name.starts_with("extractor.") {
                assert_eq!(m.tensors[name], *t, "{name}");
            }
        }
        assert_ne!(m.tensors["classifier.fc2.weight"], start.tensors["classifier.fc2.weight"]);
    }
}

#[test]
fn six_class_extractor_serves_a_two_class_head() {
    let six = data(4, 6, 4);
    let src: ModelParams = init_params(&model(&six), 1).unwrap();
    let two = data(2, 2, 5);
    let run = transfer_from(&src, &two, &model(&two), &quick()).unwrap();
    assert_eq!(run.models[0].tensors["classifier.fc2.weight"].shape, vec![2, 128]);
    assert_eq!(run.record.folds[0].report.confusion_matrix.len(), 2);
}

#[test]
fn end_to_end_transfer_is_an_architecture_error() {
    let wide = data(4, 4, 6);
    let e2e = ModelConfig { arch: Arch::End2end, ..model(&wide) };
    let src: ModelParams = init_params(&e2e, 1).unwrap();
    let narrow = data(2, 4, 7);
    let target = ModelConfig { arch: Arch::End2end, ..model(&narrow) };
    assert!(matches!(transfer_from(&src, &narrow, &target, &quick()), Err(Error::Architecture(_))));
}

#[test]
fn bad_inputs_are_rejected() {
    let ds = data(2, 4, 8);
    let wrong = ModelConfig::desk(3, 64, 4);
    assert!(matches!(train_model(&ds, &wrong, &quick()), Err(Error::Shape(_))));
    assert!(train_model(&ds, &model(&ds), &TrainConfig { k_folds: 1, ..quick() }).is_err());
    let too_many_folds = TrainConfig { k_folds: 7, ..quick() };
    assert!(train_model(&ds, &model(&ds), &too_many_folds).is_err());
    let mut unlabeled = ds.clone();
    unlabeled.segments[0].votes = vec![0; 4];
    assert!(matches!(train_model(&unlabeled, &model(&ds), &quick()), Err(Error::Unlabeled(_))));
    let bad_aug = TrainConfig {
        augment: AugmentConfig { rrc_range: (0.0, 1.0), ..AugmentConfig::default() },
        ..quick()
    };
    assert!(train_model(&ds, &model(&ds), &bad_aug).is_err());
}

#[test]
fn huge_learning_rate_reports_divergence() {
    let ds = data(2, 4, 9);
    let cfg = TrainConfig { learning_rate: 1e30, max_epochs: 3, ..quick() };
    match train_model(&ds, &model(&ds), &cfg) {
        Err(Error::Diverged { fold: 0, .. }) => {}
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("training did not diverge"),
    }
}
