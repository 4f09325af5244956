#![allow(dead_code)]

use ndarray::{Array2, Array3};
use rand::Rng;
use scfnet::rng;
use scfnet::signal::{Dataset, Segment};

pub fn random_batch(b: usize, c: usize, t: usize, seed: u64) -> Array3<f32> {
    let mut r = rng::seeded(seed);
    Array3::from_shape_fn((b, c, t), |_| r.random_range(-1.0f32..1.0))
}

/// A dataset whose segment `i` of patient `p` has one channel and 2 classes.
pub fn dataset_with_counts(counts: &[usize]) -> Dataset {
    let mut segments = Vec::new();
    for (p, &c) in counts.iter().enumerate() {
        for s in 0..c {
            segments.push(Segment {
                id: format!("p{p}_s{s}"),
                patient_id: format!("p{p}"),
                data: Array2::zeros((1, 2)),
                votes: vec![1, 0],
                channel_names: vec!["a".into()],
            });
        }
    }
    Dataset {
        sample_rate_hz: 1.0,
        window_samples: 2,
        channel_names: vec!["a".into()],
        class_names: vec!["x".into(), "y".into()],
        segments,
    }
}

/// Probability that a random positive outscores a random negative, ties 1/2.
pub fn pair_count_auc(truth: &[bool], scores: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &ti) in truth.iter().enumerate() {
        if !ti {
            continue;
        }
        for (j, &tj) in truth.iter().enumerate() {
            if tj {
                continue;
            }
            den += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / den
}

/// `init_params` plus noise on every tensor, including normalization
/// scales/shifts and running statistics, so no layer is an identity.
pub fn randomized<S: scfnet::nn::Real>(
    cfg: &scfnet::model::ModelConfig,
    seed: u64,
) -> scfnet::model::ModelParams<S> {
    let mut p: scfnet::model::ModelParams<S> = scfnet::model::init_params(cfg, seed).unwrap();
    let mut r = rng::seeded(rng::derive(seed, "noise"));
    for (name, t) in p.tensors.iter_mut() {
        for v in &mut t.data {
            let x = if name.ends_with(".running_var") {
                r.random_range(0.5..1.5)
            } else if name.ends_with(".running_mean") {
                r.random_range(-0.3..0.3)
            } else {
                v.to_f64_lossy() + r.random_range(-0.1..0.1)
            };
            *v = S::of(x);
        }
    }
    p
}

/// `out[:, i, :] = x[:, perm[i], :]`.
pub fn permute_channels<S: Copy>(x: &Array3<S>, perm: &[usize]) -> Array3<S> {
    let (b, c, t) = x.dim();
    Array3::from_shape_fn((b, c, t), |(s, i, j)| x[[s, perm[i], j]])
}

pub fn random_perm(n: usize, r: &mut rng::Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(r);
    p
}

pub fn max_abs_diff<S: scfnet::nn::Real>(a: &[S], b: &[S]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.to_f64_lossy() - y.to_f64_lossy()).abs())
        .fold(0.0, f64::max)
}
