use ndarray::Array2;
use proptest::prelude::*;
use scfnet::augment::*;
use scfnet::rng::seeded;

fn window(c: usize, t: usize, seed: u64) -> Array2<f32> {
    Array2::from_shape_fn((c, t), |(i, j)| 1.0 + ((i * 31 + j * 7) as u64 ^ seed) as f32 % 97.0)
}

fn sorted_rows(w: &Array2<f32>) -> Vec<Vec<u32>> {
    let mut rows: Vec<Vec<u32>> = w.rows().into_iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
    rows.sort();
    rows
}

proptest! {
    #[test]
    fn augmentations_keep_shape(c in 2usize..10, t in 8usize..200, seed in any::<u64>()) {
        let w = window(c, t, seed);
        let cfg = AugmentConfig { timeout_range: (0, t / 2), ..AugmentConfig::default() }.resolve(c, t);
        let out = augment_window(&w, &cfg, &mut seeded(seed)).unwrap();
        prop_assert_eq!(out.dim(), (c, t));
    }

    #[test]
    fn time_out_touches_only_one_span(c in 1usize..5, t in 4usize..300, lo in 0usize..50, extra in 0usize..50, seed in any::<u64>()) {
        let (t_l, t_u) = (lo.min(t), (lo + extra).min(t));
        let w = window(c, t, seed);
        let out = time_out(&w, t_l, t_u, &mut seeded(seed));
        let zeros: Vec<usize> = (0..t).filter(|&j| out[[0, j]] == 0.0).collect();
        prop_assert!(zeros.len() >= t_l && zeros.len() <= t_u);
        if let (Some(&a), Some(&b)) = (zeros.first(), zeros.last()) {
            prop_assert_eq!(b - a + 1, zeros.len());
        }
        for i in 0..c {
            for j in 0..t {
                if !zeros.contains(&j) {
                    prop_assert_eq!(out[[i, j]], w[[i, j]]);
                } else {
                    prop_assert_eq!(out[[i, j]], 0.0);
                }
            }
        }
    }

    #[test]
    fn hemisphere_swap_permutes_rows(half in 1usize..8, extra in 0usize..3, seed in any::<u64>()) {
        let c = 2 * half + extra;
        let w = window(c, 16, seed);
        let cfg = AugmentConfig::default().resolve(c, 16);
        let out = hemisphere_swap(&w, &cfg, &mut seeded(seed)).unwrap();
        prop_assert_eq!(sorted_rows(&out), sorted_rows(&w));
        // Channels outside both lists (the middle one for odd counts) stay put.
        if extra == 1 {
            prop_assert_eq!(out.row(half), w.row(half));
        }
    }

    #[test]
    fn same_seed_same_output(seed in any::<u64>()) {
        let w = window(6, 64, 3);
        let cfg = AugmentConfig { timeout_range: (0, 20), ..AugmentConfig::default() }.resolve(6, 64);
        prop_assert_eq!(
            augment_window(&w, &cfg, &mut seeded(seed)).unwrap(),
            augment_window(&w, &cfg, &mut seeded(seed)).unwrap()
        );
    }
}

#[test]
fn repeated_time_outs_with_disjoint_spans_add_up() {
    let w = window(3, 100, 0);
    let mut out = w.clone();
    mask_span(&mut out, 5, 10);
    mask_span(&mut out, 40, 25);
    for row in out.rows() {
        assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 35);
    }
}

#[test]
fn all_probabilities_zero_is_identity() {
    let w = window(16, 8, 1);
    let cfg = AugmentConfig { p_shuffle_within: 0.0, p_swap_hemispheres: 0.0, ..AugmentConfig::default() }.resolve(16, 8);
    assert_eq!(hemisphere_swap(&w, &cfg, &mut seeded(5)).unwrap(), w);
}

#[test]
fn swap_only_exchanges_blocks() {
    let w = window(16, 8, 2);
    let cfg = AugmentConfig {
        p_shuffle_within: 0.0,
        p_swap_hemispheres: 1.0,
        left_channels: (0..8).collect(),
        right_channels: (8..16).collect(),
        ..AugmentConfig::default()
    };
    let out = hemisphere_swap(&w, &cfg, &mut seeded(0)).unwrap();
    for i in 0..8 {
        assert_eq!(out.row(i), w.row(i + 8));
        assert_eq!(out.row(i + 8), w.row(i));
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let overlap = AugmentConfig { left_channels: vec![0, 1], right_channels: vec![1, 2], ..AugmentConfig::default() };
    assert!(overlap.validate(4, 100).is_err());
    assert!(hemisphere_swap(&window(4, 8, 0), &overlap, &mut seeded(0)).is_err());
    let bad_crop = AugmentConfig { rrc_range: (0.9, 0.8), ..AugmentConfig::default() };
    assert!(bad_crop.validate(4, 10_000).is_err());
    assert!(AugmentConfig::default().validate(16, 1000).is_err());
    assert!(AugmentConfig::default().resolve(16, 1000).validate(16, 1000).is_ok());
}

#[test]
fn timeout_range_scales_with_short_windows() {
    let r = AugmentConfig::default().resolve(16, 512);
    assert_eq!(r.timeout_range, (0, 103));
    let r = AugmentConfig::default().resolve(16, 10_000);
    assert_eq!(r.timeout_range, (0, 2000));
}
