//! Patient-grouped K-fold assignment: every segment of a patient lands in
//! the same fold, so no patient is seen in both training and validation.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::signal::Dataset;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub patients: Vec<String>,
    pub segments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub folds: Vec<Fold>,
}

impl FoldAssignment {
    /// Segment indices of `dataset` belonging to each fold.
    pub fn indices(&self, dataset: &Dataset) -> Vec<Vec<usize>> {
        let fold_of: HashMap<&str, usize> = self
            .folds
            .iter()
            .enumerate()
            .flat_map(|(f, fold)| fold.patients.iter().map(move |p| (p.as_str(), f)))
            .collect();
        let mut out = vec![Vec::new(); self.folds.len()];
        for (i, seg) in dataset.segments.iter().enumerate() {
            if let Some(&f) = fold_of.get(seg.patient_id.as_str()) {
                out[f].push(i);
            }
        }
        out
    }

    /// `(train, validation)` indices with fold `held_out` as validation.
    pub fn split(&self, dataset: &Dataset, held_out: usize) -> (Vec<usize>, Vec<usize>) {
        let mut all = self.indices(dataset);
        let val = std::mem::take(&mut all[held_out]);
        let mut train: Vec<usize> = all.into_iter().flatten().collect();
        train.sort_unstable();
        (train, val)
    }
}

/// Shuffles patients by `seed`, then assigns them largest-first (by segment
/// count, ties in shuffled order) to whichever fold currently holds the
/// fewest segments.
pub fn patient_kfold(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for seg in &dataset.segments {
        *counts.entry(seg.patient_id.as_str()).or_default() += 1;
    }
    let mut patients = dataset.patients();
    if patients.len() < k {
        return Err(Error::Config(format!(
            "{} patients cannot fill {k} folds",
            patients.len()
        )));
    }
    patients.shuffle(&mut rng::seeded(rng::derive(seed, "kfold")));
    patients.sort_by_key(|p| std::cmp::Reverse(counts[p.as_str()]));

    let mut folds = vec![
        Fold {
            patients: Vec::new(),
            segments: Vec::new()
        };
        k
    ];
    let mut sizes = vec![0usize; k];
    for p in patients {
        let target = (0..k).min_by_key(|&f| (sizes[f], f)).unwrap();
        sizes[target] += counts[p.as_str()];
        folds[target].patients.push(p);
    }
    let fold_of: HashMap<&str, usize> = folds
        .iter()
        .enumerate()
        .flat_map(|(f, fold)| fold.patients.iter().map(move |p| (p.as_str(), f)))
        .collect();
    let mut segments = vec![Vec::new(); k];
    for seg in &dataset.segments {
        segments[fold_of[seg.patient_id.as_str()]].push(seg.id.clone());
    }
    for (fold, segs) in folds.iter_mut().zip(segments) {
        fold.segments = segs;
    }
    Ok(FoldAssignment { folds })
}
