//! Confusion matrices, micro TPR, ROC curves and one-vs-rest AUCs.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::network::forward;
use crate::model::params::ModelParams;
use crate::signal::Dataset;
use crate::train::loss::softmax;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `m[i][j]` counts samples of true class `i` predicted as `j`.
pub fn confusion_matrix(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<Vec<Vec<u64>>> {
    if truth.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} true labels for {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::Shape(format!(
                "label pair ({t}, {p}) out of range for {n_classes} classes"
            )));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Pooled true-positive rate: trace over total.
pub fn micro_tpr(cm: &[Vec<u64>]) -> Result<f64> {
    let total: u64 = cm.iter().flatten().sum();
    if total == 0 {
        return Err(Error::Metric("micro TPR of an empty confusion matrix".into()));
    }
    let trace: u64 = (0..cm.len()).map(|i| cm[i][i]).sum();
    Ok(trace as f64 / total as f64)
}

/// Recall of each class; `None` for classes with no true samples.
pub fn per_class_tpr(cm: &[Vec<u64>]) -> Vec<Option<f64>> {
    cm.iter()
        .enumerate()
        .map(|(i, row)| {
            let n: u64 = row.iter().sum();
            (n > 0).then(|| row[i] as f64 / n as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Threshold sweep over the distinct scores, highest first. Tied scores move
/// the curve diagonally, which gives ties half credit in the area.
pub fn roc_curve(truth: &[bool], scores: &[f64]) -> Result<RocCurve> {
    if truth.len() != scores.len() {
        return Err(Error::Shape(format!(
            "{} truths for {} scores",
            truth.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("ROC scores".into()));
    }
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(
            "ROC AUC needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if truth[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (x0, y0) = *points.last().unwrap();
        let p = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        auc += (p.0 - x0) * (p.1 + y0) / 2.0;
        points.push(p);
    }
    Ok(RocCurve { points, auc })
}

/// Per-class one-vs-rest AUCs and their mean over the classes where the AUC
/// is defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroAuc {
    pub value: f64,
    pub per_class: Vec<Option<f64>>,
    /// Classes left out because they have no positives or no negatives.
    pub skipped: Vec<usize>,
}

fn check_probs(probs: &Array2<f64>, labels: &[usize]) -> Result<()> {
    if probs.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} probability rows for {} labels",
            probs.nrows(),
            labels.len()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= probs.ncols()) {
        return Err(Error::Shape(format!(
            "label {y} out of range for {} classes",
            probs.ncols()
        )));
    }
    Ok(())
}

pub fn macro_auc(probs: &Array2<f64>, labels: &[usize]) -> Result<MacroAuc> {
    check_probs(probs, labels)?;
    let mut per_class = Vec::with_capacity(probs.ncols());
    let mut skipped = Vec::new();
    for c in 0..probs.ncols() {
        let truth: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        let has_both = truth.iter().any(|&t| t) && truth.iter().any(|&t| !t);
        if has_both {
            per_class.push(Some(roc_curve(&truth, &probs.column(c).to_vec())?.auc));
        } else {
            per_class.push(None);
            skipped.push(c);
        }
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::Metric("no class has both positives and negatives".into()));
    }
    Ok(MacroAuc {
        value: defined.iter().sum::<f64>() / defined.len() as f64,
        per_class,
        skipped,
    })
}

/// AUC over every `(sample, class)` pair pooled into one binary problem.
pub fn micro_auc(probs: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    Ok(micro_roc_curve(probs, labels)?.auc)
}

/// ROC curve of the pooled one-vs-rest problem behind [`micro_auc`].
pub fn micro_roc_curve(probs: &Array2<f64>, labels: &[usize]) -> Result<RocCurve> {
    check_probs(probs, labels)?;
    let mut truth = Vec::with_capacity(probs.len());
    let mut scores = Vec::with_capacity(probs.len());
    for (row, &y) in probs.rows().into_iter().zip(labels) {
        for (c, &p) in row.iter().enumerate() {
            truth.push(c == y);
            scores.push(p);
        }
    }
    roc_curve(&truth, &scores)
}

/// `fpr,tpr` header then one point per line.
pub fn roc_csv(curve: &RocCurve) -> String {
    let mut out = String::from("fpr,tpr\n");
    for (f, t) in &curve.points {
        out.push_str(&format!("{f},{t}\n"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub n_samples: usize,
    pub confusion_matrix: Vec<Vec<u64>>,
    pub micro_tpr: f64,
    pub per_class_tpr: Vec<Option<f64>>,
    pub per_class_auc: Vec<Option<f64>>,
    pub macro_auc: Option<f64>,
    pub micro_auc: Option<f64>,
    pub warnings: Vec<String>,
}

/// Assembles every metric from class probabilities and true labels. AUCs that
/// are undefined on this sample become `None` plus a warning.
pub fn report_from_probs(probs: &Array2<f64>, labels: &[usize], class_names: &[String]) -> Result<EvalReport> {
    check_probs(probs, labels)?;
    let preds: Vec<usize> = probs
        .rows()
        .into_iter()
        .map(|r| argmax(&r.to_vec()))
        .collect();
    let cm = confusion_matrix(labels, &preds, probs.ncols())?;
    let mut warnings = Vec::new();
    let micro_tpr = if labels.is_empty() {
        warnings.push("no samples".to_string());
        0.0
    } else {
        micro_tpr(&cm)?
    };
    let name = |c: usize| class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
    let (per_class_auc, macro_value) = match macro_auc(probs, labels) {
        Ok(m) => {
            for &c in &m.skipped {
                warnings.push(format!("class {} absent or universal; left out of macro AUC", name(c)));
            }
            (m.per_class, Some(m.value))
        }
        Err(e) => {
            warnings.push(format!("macro AUC: {e}"));
            (vec![None; probs.ncols()], None)
        }
    };
    let micro_value = match micro_auc(probs, labels) {
        Ok(v) => Some(v),
        Err(e) => {
            warnings.push(format!("micro AUC: {e}"));
            None
        }
    };
    Ok(EvalReport {
        class_names: class_names.to_vec(),
        n_samples: labels.len(),
        per_class_tpr: per_class_tpr(&cm),
        confusion_matrix: cm,
        micro_tpr,
        per_class_auc,
        macro_auc: macro_value,
        micro_auc: micro_value,
        warnings,
    })
}

const EVAL_CHUNK: usize = 32;

/// Inference-mode logits for the listed segments, in `f64`.
pub fn predict_logits(params: &ModelParams<f32>, dataset: &Dataset, indices: &[usize]) -> Result<Array2<f64>> {
    let (c, t) = (dataset.n_channels(), dataset.window_samples);
    let n_classes = params.config.n_classes;
    let mut out = Array2::zeros((indices.len(), n_classes));
    for (chunk_no, chunk) in indices.chunks(EVAL_CHUNK).enumerate() {
        let mut batch = Array3::<f32>::zeros((chunk.len(), c, t));
        for (b, &i) in chunk.iter().enumerate() {
            let seg = &dataset.segments[i];
            if seg.data.dim() != (c, t) {
                return Err(Error::Shape(format!(
                    "segment {} has shape {:?}, expected ({c}, {t})",
                    seg.id,
                    seg.data.dim()
                )));
            }
            batch.index_axis_mut(ndarray::Axis(0), b).assign(&seg.data);
        }
        let logits = forward(&batch, params)?;
        for (b, row) in logits.rows().into_iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                out[[chunk_no * EVAL_CHUNK + b, k]] = f64::from(v);
            }
        }
    }
    Ok(out)
}

pub fn logits_to_probs(logits: &Array2<f64>) -> Array2<f64> {
    let mut probs = logits.clone();
    for mut row in probs.rows_mut() {
        let p = softmax(&row.to_vec());
        row.iter_mut().zip(p).for_each(|(dst, v)| *dst = v);
    }
    probs
}

/// Hard labels of every segment; errors on segments without votes.
pub fn hard_labels(dataset: &Dataset, indices: &[usize]) -> Result<Vec<usize>> {
    indices
        .iter()
        .map(|&i| {
            let seg = &dataset.segments[i];
            seg.hard_label().ok_or_else(|| Error::Unlabeled(seg.id.clone()))
        })
        .collect()
}

/// Class probabilities and hard labels of every segment, in dataset order.
pub fn predict_all(params: &ModelParams<f32>, dataset: &Dataset) -> Result<(Array2<f64>, Vec<usize>)> {
    if dataset.n_classes() != params.config.n_classes {
        return Err(Error::Shape(format!(
            "dataset has {} classes, model head has {}",
            dataset.n_classes(),
            params.config.n_classes
        )));
    }
    let all: Vec<usize> = (0..dataset.len()).collect();
    let labels = hard_labels(dataset, &all)?;
    let probs = logits_to_probs(&predict_logits(params, dataset, &all)?);
    Ok((probs, labels))
}

/// Runs the model (no augmentation) over the whole dataset and reports.
pub fn evaluate(params: &ModelParams<f32>, dataset: &Dataset) -> Result<EvalReport> {
    let (probs, labels) = predict_all(params, dataset)?;
    report_from_probs(&probs, &labels, &dataset.class_names)
}
