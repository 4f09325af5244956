mod common;

use common::{max_abs_diff, permute_channels, random_batch, random_perm, randomized};
use ndarray::{s, Array3};
use scfnet::model::*;
use scfnet::rng::seeded;
use scfnet::Error;

fn desk(c: usize, t: usize) -> ModelConfig {
    ModelConfig::desk(c, t, 4)
}

fn extractor_count(p: &ModelParams) -> usize {
    p.tensors
        .iter()
        .filter(|(n, _)| n.starts_with("extractor.") && !n.contains("running_"))
        .map(|(_, t)| t.data.len())
        .sum()
}

#[test]
fn feature_shape() {
    let p: ModelParams = randomized(&desk(16, 512), 1);
    let f = extract_features(&random_batch(2, 16, 512, 0), &p).unwrap();
    assert_eq!(f.dim(), (2, 16, 32));
}

#[test]
fn duplicate_channels_give_identical_blocks() {
    let p: ModelParams = randomized(&desk(6, 128), 2);
    let mut x = random_batch(3, 6, 128, 1);
    let row = x.slice(s![.., 1, ..]).to_owned();
    x.slice_mut(s![.., 4, ..]).assign(&row);
    let f = extract_features(&x, &p).unwrap();
    assert_eq!(f.slice(s![.., 1, ..]), f.slice(s![.., 4, ..]));
}

#[test]
fn other_channels_never_leak_into_a_block() {
    let p: ModelParams = randomized(&desk(5, 64), 3);
    let x = random_batch(2, 5, 64, 2);
    let f = extract_features(&x, &p).unwrap();
    for keep in 0..5 {
        let mut z = Array3::zeros(x.dim());
        z.slice_mut(s![.., keep, ..]).assign(&x.slice(s![.., keep, ..]));
        let g = extract_features(&z, &p).unwrap();
        assert_eq!(f.slice(s![.., keep, ..]), g.slice(s![.., keep, ..]));
    }
}

#[test]
fn any_channel_count_reaches_the_extractor() {
    let p: ModelParams = randomized(&desk(16, 64), 4);
    for c in [1, 3, 8, 20] {
        assert_eq!(extract_features(&random_batch(2, c, 64, 3), &p).unwrap().dim(), (2, c, 32));
    }
    assert!(matches!(
        extract_features(&random_batch(1, 2, 60, 3), &p),
        Err(Error::Shape(_))
    ));
    let mut bad = random_batch(1, 2, 64, 3);
    bad[[0, 1, 5]] = f32::NAN;
    assert!(matches!(extract_features(&bad, &p), Err(Error::NonFinite(_))));
}

#[test]
fn batch_matches_loop_over_channels() {
    let p: ModelParams = randomized(&desk(8, 128), 5);
    let x = random_batch(3, 8, 128, 4);
    let f = extract_features(&x, &p).unwrap();
    for c in 0..8 {
        let one = extract_features(&x.slice(s![.., c..c + 1, ..]).to_owned(), &p).unwrap();
        let d = max_abs_diff(
            &f.slice(s![.., c, ..]).iter().copied().collect::<Vec<_>>(),
            &one.iter().copied().collect::<Vec<_>>(),
        );
        assert!(d < 1e-5, "channel {c}: {d}");
    }
}

#[test]
fn zero_features_give_bias_image() {
    let p: ModelParams<f64> = randomized(&desk(4, 64), 6);
    let logits = classify(&Array3::zeros((1, 4, 32)), &p).unwrap();
    let b1 = p.get("classifier.fc1.bias");
    let (w2, b2) = (p.get("classifier.fc2.weight"), p.get("classifier.fc2.bias"));
    for k in 0..4 {
        let want = b2[k] + (0..b1.len()).map(|j| w2[k * b1.len() + j] * b1[j].max(0.0)).sum::<f64>();
        assert!((logits[[0, k]] - want).abs() < 1e-12);
    }
}

#[test]
fn one_sample_equals_its_row_in_a_batch() {
    let p: ModelParams = randomized(&desk(4, 64), 7);
    let x = random_batch(32, 4, 64, 5);
    let all = forward(&x, &p).unwrap();
    for i in [0, 13, 31] {
        let one = forward(&x.slice(s![i..i + 1, .., ..]).to_owned(), &p).unwrap();
        let d = max_abs_diff(&one.row(0).to_vec(), &all.row(i).to_vec());
        assert!(d < 1e-6, "sample {i}: {d}");
    }
}

#[test]
fn head_rejects_other_channel_counts() {
    let p: ModelParams = randomized(&desk(16, 64), 8);
    assert!(matches!(classify(&Array3::zeros((1, 8, 32)), &p), Err(Error::Shape(_))));
    assert!(matches!(forward(&random_batch(1, 8, 64, 0), &p), Err(Error::Shape(_))));
}

#[test]
fn permuting_inputs_and_head_blocks_preserves_logits() {
    let cfg = desk(6, 64);
    let p: ModelParams<f64> = randomized(&cfg, 9);
    let x = random_batch(4, 6, 64, 6).mapv(f64::from);
    let mut r = seeded(1);
    let base = scfnet_forward(&x, &p).unwrap();
    for _ in 0..5 {
        let perm = random_perm(6, &mut r);
        let mut q = p.clone();
        let (f, hid) = (cfg.feature_len(), cfg.classifier_hidden);
        let w = p.get("classifier.fc1.weight").to_vec();
        let qw = q.get_mut("classifier.fc1.weight");
        for o in 0..hid {
            for (i, &src) in perm.iter().enumerate() {
                for j in 0..f {
                    qw[o * 6 * f + i * f + j] = w[o * 6 * f + src * f + j];
                }
            }
        }
        let got = scfnet_forward(&permute_channels(&x, &perm), &q).unwrap();
        // Only the summation order inside the first affine layer changes.
        assert!(max_abs_diff(got.as_slice().unwrap(), base.as_slice().unwrap()) < 1e-12);
    }
}

#[test]
fn reordering_channels_under_a_fixed_head_changes_logits() {
    let p: ModelParams = randomized(&desk(4, 64), 10);
    let x = random_batch(2, 4, 64, 7);
    let a = forward(&x, &p).unwrap();
    let b = forward(&permute_channels(&x, &[1, 0, 3, 2]), &p).unwrap();
    assert!(max_abs_diff(a.as_slice().unwrap(), b.as_slice().unwrap()) > 1e-4);
}

#[test]
fn end_to_end_is_bound_to_its_channels() {
    let cfg = ModelConfig { arch: Arch::End2end, ..desk(16, 512) };
    let p: ModelParams = randomized(&cfg, 11);
    assert_eq!(end2end_forward(&random_batch(2, 16, 512, 0), &p).unwrap().dim(), (2, 4));
    assert!(matches!(end2end_forward(&random_batch(2, 8, 512, 0), &p), Err(Error::Architecture(_))));
    assert!(matches!(scfnet_forward(&random_batch(2, 16, 512, 0), &p), Err(Error::Architecture(_))));
    assert_eq!(extract_features(&random_batch(2, 16, 512, 0), &p).unwrap().dim(), (2, 1, 32));
}

#[test]
fn parameter_counts_differ_only_in_first_layer_width() {
    let sc: ModelParams = init_params(&desk(16, 64), 0).unwrap();
    let e2e: ModelParams = init_params(&ModelConfig { arch: Arch::End2end, ..desk(16, 64) }, 0).unwrap();
    let cfg = desk(16, 64);
    let branch_width = cfg.feature_width / cfg.inception_kernels.len();
    let first_layer_per_input: usize = cfg.inception_kernels.iter().map(|k| branch_width * k).sum();
    assert_eq!(extractor_count(&e2e) - extractor_count(&sc), 15 * first_layer_per_input);
    let sc_names: Vec<&str> = sc.names().collect();
    let e2e_names: Vec<&str> = e2e.names().collect();
    assert_eq!(sc_names, e2e_names);
    for (n, t) in &sc.tensors {
        if n.starts_with("extractor.") && !n.starts_with("extractor.inception") {
            assert_eq!(t.shape, e2e.tensors[n].shape, "{n}");
        }
    }
}

#[test]
fn train_mode_uses_batch_statistics() {
    let p: ModelParams = randomized(&desk(2, 64), 12);
    let x = random_batch(4, 2, 64, 8);
    let eval = forward_pass(&p, x.as_slice().unwrap(), 4, 2, 64, PassOptions::EVAL).unwrap();
    let train_opts = PassOptions { extractor_mode: Mode::Train, dropout_seed: None };
    let train = forward_pass(&p, x.as_slice().unwrap(), 4, 2, 64, train_opts).unwrap();
    assert!(!train.norm_stats.is_empty());
    assert!(eval.norm_stats.is_empty());
    assert!(max_abs_diff(&eval.logits, &train.logits) > 1e-6);
}
