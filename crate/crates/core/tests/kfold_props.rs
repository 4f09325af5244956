mod common;

use std::collections::HashSet;

use common::dataset_with_counts;
use proptest::prelude::*;
use rand::Rng;
use scfnet::rng::seeded;
use scfnet::train::patient_kfold;

proptest! {
    #[test]
    fn folds_are_patient_pure_and_exhaustive(
        counts in prop::collection::vec(1usize..12, 2..40),
        k in 2usize..6,
        seed in any::<u64>(),
    ) {
        prop_assume!(counts.len() >= k);
        let ds = dataset_with_counts(&counts);
        let fa = patient_kfold(&ds, k, seed).unwrap();
        prop_assert_eq!(fa.folds.len(), k);
        let mut seen_patients = HashSet::new();
        let mut seen_segments = HashSet::new();
        for fold in &fa.folds {
            for p in &fold.patients {
                prop_assert!(seen_patients.insert(p.clone()));
            }
            let pats: HashSet<&String> = fold.patients.iter().collect();
            for id in &fold.segments {
                prop_assert!(seen_segments.insert(id.clone()));
                let seg = ds.segments.iter().find(|s| &s.id == id).unwrap();
                prop_assert!(pats.contains(&seg.patient_id));
            }
        }
        prop_assert_eq!(seen_patients.len(), counts.len());
        prop_assert_eq!(seen_segments.len(), ds.len());
    }
}

#[test]
fn skewed_counts_stay_balanced() {
    let mut r = seeded(42);
    let counts: Vec<usize> = (0..100)
        .map(|_| {
            let u: f64 = r.random_range(0.0..1.0);
            1 + (u * u * 40.0) as usize
        })
        .collect();
    let ds = dataset_with_counts(&counts);
    let fa = patient_kfold(&ds, 5, 7).unwrap();
    let sizes: Vec<usize> = fa.folds.iter().map(|f| f.segments.len()).collect();
    let (max, min) = (*sizes.iter().max().unwrap(), *sizes.iter().min().unwrap());
    assert!(max as f64 / min as f64 <= 1.5, "{sizes:?}");
}
