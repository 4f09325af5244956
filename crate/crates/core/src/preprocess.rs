//! Raw recordings to model-ready datasets: resampling, lead selection,
//! windowing, expert-count filtering, vote normalization and class balancing.

use std::collections::HashSet;

use ndarray::{s, Array2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::signal::{Dataset, Recording, Segment, SoftLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub target_rate_hz: f64,
    pub window_seconds: f64,
    /// Leads to keep, in output order. Empty keeps every channel.
    pub channel_selection: Vec<String>,
    pub min_expert_votes: i64,
    pub oversample: bool,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_rate_hz: 200.0,
            window_seconds: 50.0,
            channel_selection: Vec::new(),
            min_expert_votes: 10,
            oversample: false,
            seed: 0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_rate_hz > 0.0) {
            return Err(Error::Config(format!(
                "target_rate_hz must be positive, got {}",
                self.target_rate_hz
            )));
        }
        if !(self.window_seconds > 0.0) {
            return Err(Error::Config(format!(
                "window_seconds must be positive, got {}",
                self.window_seconds
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self
            .channel_selection
            .iter()
            .find(|n| !seen.insert(n.as_str()))
        {
            return Err(Error::Config(format!("channel {dup} selected twice")));
        }
        Ok(())
    }
}

/// The sixteen bipolar scalp leads shared by both clinical montages.
pub const SCALP_LEADS: [&str; 16] = [
    "Fp1-F7", "F7-T3", "T3-T5", "T5-O1", "Fp1-F3", "F3-C3", "C3-P3", "P3-O1", "Fp2-F4", "F4-C4",
    "C4-P4", "P4-O2", "Fp2-F8", "F8-T4", "T4-T6", "T6-O2",
];

/// Linear interpolation onto a uniform grid at `target_rate_hz`.
///
/// Output length is `round(samples * target / source)`; output sample `j`
/// sits at time `j / target`.
pub fn resample(recording: &Recording, target_rate_hz: f64) -> Result<Recording> {
    if !(target_rate_hz > 0.0) || !target_rate_hz.is_finite() {
        return Err(Error::Config(format!(
            "resample target must be positive, got {target_rate_hz}"
        )));
    }
    if target_rate_hz == recording.sample_rate_hz {
        return Ok(recording.clone());
    }
    let n_in = recording.n_samples();
    let ratio = recording.sample_rate_hz / target_rate_hz;
    let n_out = ((n_in as f64) * target_rate_hz / recording.sample_rate_hz).round() as usize;
    let mut out = Array2::<f32>::zeros((recording.n_channels(), n_out));
    for (src, mut dst) in recording.data.rows().into_iter().zip(out.rows_mut()) {
        for (j, y) in dst.iter_mut().enumerate() {
            let pos = j as f64 * ratio;
            let i0 = pos.floor() as usize;
            *y = if i0 + 1 >= n_in {
                src[n_in - 1]
            } else {
                let frac = pos - i0 as f64;
                (f64::from(src[i0]) * (1.0 - frac) + f64::from(src[i0 + 1]) * frac) as f32
            };
        }
    }
    Ok(Recording {
        sample_rate_hz: target_rate_hz,
        data: out,
        ..recording.clone()
    })
}

/// Keeps exactly `names`, in that order.
pub fn select_channels(recording: &Recording, names: &[String]) -> Result<Recording> {
    let missing: Vec<String> = names
        .iter()
        .filter(|n| !recording.channel_names.contains(n))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingChannels(missing));
    }
    let rows: Vec<usize> = names
        .iter()
        .map(|n| recording.channel_names.iter().position(|c| c == n).unwrap())
        .collect();
    let data = recording.data.select(ndarray::Axis(0), &rows);
    Recording::new(
        recording.patient_id.clone(),
        names.to_vec(),
        recording.sample_rate_hz,
        data,
    )
}

/// Number of samples in a window of `window_seconds` at `rate_hz`.
pub fn window_len(window_seconds: f64, rate_hz: f64) -> usize {
    (window_seconds * rate_hz).round() as usize
}

/// Non-overlapping consecutive windows; the trailing remainder is dropped.
/// Windows carry no votes.
pub fn segment(recording: &Recording, window_seconds: f64) -> Vec<Segment> {
    let w = window_len(window_seconds, recording.sample_rate_hz);
    if w == 0 {
        return Vec::new();
    }
    (0..recording.n_samples() / w)
        .map(|i| Segment {
            id: format!("{}_w{i:05}", recording.patient_id),
            patient_id: recording.patient_id.clone(),
            data: recording.data.slice(s![.., i * w..(i + 1) * w]).to_owned(),
            votes: Vec::new(),
            channel_names: recording.channel_names.clone(),
        })
        .collect()
}

/// Keeps segments whose vote total is strictly greater than `min_experts`.
pub fn filter_by_votes(dataset: &Dataset, min_experts: i64) -> Dataset {
    Dataset {
        segments: dataset
            .segments
            .iter()
            .filter(|s| s.total_votes() as i128 > i128::from(min_experts))
            .cloned()
            .collect(),
        ..dataset.empty_like()
    }
}

pub fn normalize_votes(votes: &[u32]) -> Result<SoftLabel> {
    let total: u64 = votes.iter().map(|&v| u64::from(v)).sum();
    if total == 0 {
        return Err(Error::Unlabeled(format!("{votes:?}")));
    }
    Ok(SoftLabel {
        probs: votes.iter().map(|&v| f64::from(v) / total as f64).collect(),
    })
}

/// Duplicates minority-class segments (sampled with replacement) until every
/// class matches the majority count. Originals come first, in input order.
pub fn oversample_minority(dataset: &Dataset, seed: u64) -> Result<Dataset> {
    let n_classes = dataset.n_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, seg) in dataset.segments.iter().enumerate() {
        let label = seg
            .hard_label()
            .ok_or_else(|| Error::Unlabeled(seg.id.clone()))?;
        by_class[label].push(i);
    }
    if let Some(empty) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass(dataset.class_names[empty].clone()));
    }
    let majority = by_class.iter().map(Vec::len).max().unwrap_or(0);

    let mut out = dataset.clone();
    let mut taken: HashSet<String> = dataset.segments.iter().map(|s| s.id.clone()).collect();
    for (class, members) in by_class.iter().enumerate() {
        let mut r = rng::seeded(rng::derive_idx(seed, "oversample", class as u64));
        for dup in 0..majority - members.len() {
            let src = &dataset.segments[members[r.random_range(0..members.len())]];
            let mut id = format!("{}~os{dup}", src.id);
            while !taken.insert(id.clone()) {
                id.push('x');
            }
            out.segments.push(Segment {
                id,
                ..src.clone()
            });
        }
    }
    Ok(out)
}

/// Runs the full pipeline on an already windowed dataset: each window is
/// treated as a short recording, resampled, reduced to the selected leads and
/// re-windowed; sub-windows inherit the parent's votes. Then vote filtering
/// and optional oversampling.
pub fn prepare(dataset: &Dataset, config: &PreprocessConfig) -> Result<Dataset> {
    config.validate()?;
    let channels = if config.channel_selection.is_empty() {
        dataset.channel_names.clone()
    } else {
        config.channel_selection.clone()
    };
    let window_samples = window_len(config.window_seconds, config.target_rate_hz);
    if window_samples == 0 {
        return Err(Error::Config("window shorter than one sample".into()));
    }

    let mut segments = Vec::new();
    for seg in &dataset.segments {
        let rec = Recording::new(
            seg.patient_id.clone(),
            seg.channel_names.clone(),
            dataset.sample_rate_hz,
            seg.data.clone(),
        )?;
        let rec = select_channels(&resample(&rec, config.target_rate_hz)?, &channels)?;
        let windows = segment(&rec, config.window_seconds);
        let single = windows.len() == 1;
        for (j, w) in windows.into_iter().enumerate() {
            segments.push(Segment {
                id: if single {
                    seg.id.clone()
                } else {
                    format!("{}_w{j}", seg.id)
                },
                votes: seg.votes.clone(),
                ..w
            });
        }
    }
    let out = Dataset {
        sample_rate_hz: config.target_rate_hz,
        window_samples,
        channel_names: channels,
        class_names: dataset.class_names.clone(),
        segments,
    };
    let out = filter_by_votes(&out, config.min_expert_votes);
    if config.oversample {
        oversample_minority(&out, config.seed)
    } else {
        Ok(out)
    }
}
