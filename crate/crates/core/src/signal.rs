//! Domain types for multi-channel recordings and windowed datasets, plus the
//! on-disk container: a `manifest.json` next to one raw `f32` blob per segment.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// A continuous multi-channel signal, `data` is `[channels × samples]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub patient_id: String,
    pub channel_names: Vec<String>,
    pub sample_rate_hz: f64,
    pub data: Array2<f32>,
}

impl Recording {
    pub fn new(
        patient_id: impl Into<String>,
        channel_names: Vec<String>,
        sample_rate_hz: f64,
        data: Array2<f32>,
    ) -> Result<Self> {
        let rec = Self {
            patient_id: patient_id.into(),
            channel_names,
            sample_rate_hz,
            data,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::Validation {
            id: format!("recording of {}", self.patient_id),
            reason,
        };
        if self.channel_names.is_empty() || self.channel_names.len() != self.data.nrows() {
            return Err(fail(format!(
                "{} channel names for {} data rows",
                self.channel_names.len(),
                self.data.nrows()
            )));
        }
        if self.data.ncols() == 0 {
            return Err(fail("no samples".into()));
        }
        if !(self.sample_rate_hz > 0.0) || !self.sample_rate_hz.is_finite() {
            return Err(fail(format!("sample rate {} Hz", self.sample_rate_hz)));
        }
        if let Some(dup) = first_duplicate(&self.channel_names) {
            return Err(fail(format!("duplicate channel name {dup}")));
        }
        Ok(())
    }
}

/// One fixed-length window with its expert votes.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: String,
    pub patient_id: String,
    /// `[channels × window_samples]`
    pub data: Array2<f32>,
    /// One count per class; empty for unlabeled windows.
    pub votes: Vec<u32>,
    pub channel_names: Vec<String>,
}

impl Segment {
    pub fn total_votes(&self) -> u64 {
        self.votes.iter().map(|&v| u64::from(v)).sum()
    }

    /// Argmax of the votes, ties resolved to the lowest class index.
    pub fn hard_label(&self) -> Option<usize> {
        if self.total_votes() == 0 {
            return None;
        }
        let mut best = 0;
        for (i, &v) in self.votes.iter().enumerate() {
            if v > self.votes[best] {
                best = i;
            }
        }
        Some(best)
    }
}

/// A class distribution derived from vote counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabel {
    pub probs: Vec<f64>,
}

/// A set of equally shaped, labeled windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sample_rate_hz: f64,
    pub window_samples: usize,
    pub channel_names: Vec<String>,
    pub class_names: Vec<String>,
    pub segments: Vec<Segment>,
}

/// A single broken rule, as reported by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub segment_id: String,
    pub rule: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.segment_id, self.rule)
    }
}

impl Dataset {
    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Distinct patient ids in first-appearance order.
    pub fn patients(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.segments
            .iter()
            .filter(|s| seen.insert(s.patient_id.as_str()))
            .map(|s| s.patient_id.clone())
            .collect()
    }

    /// Copy of the dataset restricted to the given segment indices.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            segments: indices.iter().map(|&i| self.segments[i].clone()).collect(),
            ..self.empty_like()
        }
    }

    pub(crate) fn empty_like(&self) -> Dataset {
        Dataset {
            sample_rate_hz: self.sample_rate_hz,
            window_samples: self.window_samples,
            channel_names: self.channel_names.clone(),
            class_names: self.class_names.clone(),
            segments: Vec::new(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for label in self.segments.iter().filter_map(Segment::hard_label) {
            counts[label] += 1;
        }
        counts
    }
}

fn first_duplicate(names: &[String]) -> Option<&str> {
    let mut seen = HashSet::new();
    names
        .iter()
        .find(|n| !seen.insert(n.as_str()))
        .map(String::as_str)
}

/// Reports every broken dataset invariant; never fails.
pub fn validate_dataset(dataset: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |id: &str, rule: String| {
        out.push(Violation {
            segment_id: id.to_string(),
            rule,
        })
    };
    if dataset.class_names.is_empty() {
        push("<dataset>", "class_names is empty".into());
    }
    if dataset.channel_names.is_empty() {
        push("<dataset>", "channel_names is empty".into());
    }
    if let Some(dup) = first_duplicate(&dataset.channel_names) {
        push("<dataset>", format!("duplicate channel name {dup}"));
    }
    if !(dataset.sample_rate_hz > 0.0) {
        push("<dataset>", format!("sample rate {}", dataset.sample_rate_hz));
    }
    let mut ids = HashSet::new();
    for seg in &dataset.segments {
        if !ids.insert(seg.id.as_str()) {
            push(&seg.id, "duplicate segment id".into());
        }
        let (c, t) = seg.data.dim();
        if c != dataset.n_channels() || t != dataset.window_samples {
            push(
                &seg.id,
                format!(
                    "data shape {c}x{t}, expected {}x{}",
                    dataset.n_channels(),
                    dataset.window_samples
                ),
            );
        }
        if seg.votes.len() != dataset.n_classes() {
            push(
                &seg.id,
                format!(
                    "{} votes for {} classes",
                    seg.votes.len(),
                    dataset.n_classes()
                ),
            );
        }
        if seg.channel_names != dataset.channel_names {
            push(&seg.id, "channel names differ from dataset".into());
        }
        if seg.data.iter().any(|v| !v.is_finite()) {
            push(&seg.id, "non-finite sample".into());
        }
    }
    out
}

fn ensure_valid(dataset: &Dataset) -> Result<()> {
    match validate_dataset(dataset).into_iter().next() {
        None => Ok(()),
        Some(v) => Err(Error::Validation {
            id: v.segment_id,
            reason: v.rule,
        }),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    sample_rate_hz: f64,
    window_samples: usize,
    channel_names: Vec<String>,
    class_names: Vec<String>,
    segments: Vec<ManifestSegment>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestSegment {
    id: String,
    patient_id: String,
    file: String,
    votes: Vec<u32>,
}

/// Writes `manifest.json` and `segments/<id>.f32` (little-endian, channel-major).
pub fn save_dataset(dataset: &Dataset, directory: &Path) -> Result<()> {
    ensure_valid(dataset)?;
    let seg_dir = directory.join("segments");
    fs::create_dir_all(&seg_dir).map_err(|e| Error::io(&seg_dir, e))?;

    let mut entries = Vec::with_capacity(dataset.len());
    for seg in &dataset.segments {
        let file = format!("segments/{}.f32", seg.id);
        let path = directory.join(&file);
        let mut bytes = Vec::with_capacity(seg.data.len() * 4);
        // Standard layout iteration is row-major, i.e. channel-major here.
        for v in seg.data.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestSegment {
            id: seg.id.clone(),
            patient_id: seg.patient_id.clone(),
            file,
            votes: seg.votes.clone(),
        });
    }

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        sample_rate_hz: dataset.sample_rate_hz,
        window_samples: dataset.window_samples,
        channel_names: dataset.channel_names.clone(),
        class_names: dataset.class_names.clone(),
        segments: entries,
    };
    let path = directory.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(directory: &Path) -> Result<Dataset> {
    let path = directory.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let probe: serde_json::Value = serde_json::from_str(&text)?;
    match probe.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(MANIFEST_VERSION) => {}
        Some(v) => return Err(Error::UnsupportedVersion(v as u32)),
        None => {
            return Err(Error::Config(
                "manifest has no integer \"version\" field".into(),
            ))
        }
    }
    let manifest: Manifest = serde_json::from_value(probe)?;

    let channels = manifest.channel_names.len();
    let expected = channels * manifest.window_samples * 4;
    let mut segments = Vec::with_capacity(manifest.segments.len());
    for entry in manifest.segments {
        let blob_path = directory.join(&entry.file);
        let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        if bytes.len() != expected {
            return Err(Error::ShapeMismatch {
                id: entry.id,
                expected,
                actual: bytes.len(),
            });
        }
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let data = Array2::from_shape_vec((channels, manifest.window_samples), values)
            .map_err(|e| Error::Shape(e.to_string()))?;
        segments.push(Segment {
            id: entry.id,
            patient_id: entry.patient_id,
            data,
            votes: entry.votes,
            channel_names: manifest.channel_names.clone(),
        });
    }

    let dataset = Dataset {
        sample_rate_hz: manifest.sample_rate_hz,
        window_samples: manifest.window_samples,
        channel_names: manifest.channel_names,
        class_names: manifest.class_names,
        segments,
    };
    ensure_valid(&dataset)?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("ch{i}")).collect()
    }

    fn tiny(n_segments: usize) -> Dataset {
        let channel_names = names(2);
        Dataset {
            sample_rate_hz: 200.0,
            window_samples: 4,
            channel_names: channel_names.clone(),
            class_names: vec!["a".into(), "b".into()],
            segments: (0..n_segments)
                .map(|i| Segment {
                    id: format!("s{i:06}"),
                    patient_id: "p0".into(),
                    data: Array2::from_shape_fn((2, 4), |(c, t)| (i * 8 + c * 4 + t) as f32),
                    votes: vec![1, 2],
                    channel_names: channel_names.clone(),
                })
                .collect(),
        }
    }

    #[test]
    fn empty_dataset_writes_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny(0), dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["segments"], serde_json::json!([]));
        assert_eq!(fs::read_dir(dir.path().join("segments")).unwrap().count(), 0);
    }

    #[test]
    fn blob_is_channel_major_f32() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny(1), dir.path()).unwrap();
        let bytes = fs::read(dir.path().join("segments/s000000.f32")).unwrap();
        assert_eq!(bytes.len(), 32);
        assert_eq!(&bytes[4..8], &1f32.to_le_bytes());
        assert_eq!(&bytes[16..20], &4f32.to_le_bytes());
    }

    #[test]
    fn truncated_blob_names_segment() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny(2), dir.path()).unwrap();
        let p = dir.path().join("segments/s000001.f32");
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::ShapeMismatch { id, expected, actual }) => {
                assert_eq!(id, "s000001");
                assert_eq!((expected, actual), (32, 28));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny(1), dir.path()).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let mut v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        v["version"] = 999.into();
        fs::write(&p, v.to_string()).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::UnsupportedVersion(999))
        ));
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn validation_reports_each_rule() {
        assert!(validate_dataset(&tiny(3)).is_empty());

        let mut ds = tiny(3);
        ds.segments[1].votes.push(0);
        let v = validate_dataset(&ds);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].segment_id, "s000001");

        let mut ds = tiny(3);
        ds.segments[2].data[[1, 3]] = f32::NAN;
        let v = validate_dataset(&ds);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].segment_id, "s000002");
    }

    #[test]
    fn save_rejects_invalid_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = tiny(2);
        ds.segments[0].data[[0, 0]] = f32::INFINITY;
        match save_dataset(&ds, dir.path()) {
            Err(Error::Validation { id, .. }) => assert_eq!(id, "s000000"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hard_label_ties_go_low() {
        let mut s = tiny(1).segments.remove(0);
        s.votes = vec![3, 3];
        assert_eq!(s.hard_label(), Some(0));
        s.votes = vec![0, 0];
        assert_eq!(s.hard_label(), None);
    }

    #[test]
    fn recording_invariants() {
        let data = Array2::zeros((2, 5));
        assert!(Recording::new("p", names(2), 200.0, data.clone()).is_ok());
        assert!(Recording::new("p", names(3), 200.0, data.clone()).is_err());
        assert!(Recording::new("p", names(2), 0.0, data.clone()).is_err());
        assert!(Recording::new("p", vec!["a".into(), "a".into()], 200.0, data).is_err());
    }
}
