//! Browser bindings: synthetic signal preview, augmentation preview and a
//! ROC/AUC calculator. Arrays cross the boundary flattened and row-major.

use ndarray::Array2;
use wasm_bindgen::prelude::*;

use scfnet::augment::{augment_window, AugmentConfig};
use scfnet::metrics::roc_curve;
use scfnet::rng;
use scfnet::synth::{generate, SynthConfig};

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// One synthetic window of `class` as `[channels × window]` samples.
#[wasm_bindgen]
pub fn synth_window(
    class: usize,
    channels: usize,
    window: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<f32>, JsValue> {
    let cfg = SynthConfig {
        n_channels: channels,
        window_samples: window,
        noise_sigma,
        n_patients: 1,
        segments_per_patient: 64,
        seed,
        ..SynthConfig::default()
    };
    if class >= cfg.n_classes {
        return Err(js_err(format!("class must be below {}", cfg.n_classes)));
    }
    let ds = generate(&cfg).map_err(js_err)?;
    let seg = ds
        .segments
        .iter()
        .find(|s| s.hard_label() == Some(class))
        .ok_or_else(|| js_err("no window of that class for this seed; try another seed"))?;
    Ok(seg.data.iter().copied().collect())
}

/// The class frequencies used by [`synth_window`], in Hz.
#[wasm_bindgen]
pub fn class_frequencies() -> Vec<f64> {
    SynthConfig::default().class_freqs_hz
}

/// Applies the enabled training augmentations to a flattened window.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn augment(
    data: Vec<f32>,
    channels: usize,
    crop: bool,
    timeout: bool,
    swap: bool,
    max_timeout: usize,
    seed: u64,
) -> Result<Vec<f32>, JsValue> {
    if channels == 0 || !data.len().is_multiple_of(channels) {
        return Err(js_err("data length is not a multiple of the channel count"));
    }
    let window = data.len() / channels;
    let x = Array2::from_shape_vec((channels, window), data).map_err(js_err)?;
    let cfg = AugmentConfig {
        enable_rrc: crop,
        enable_timeout: timeout,
        enable_swap: swap,
        timeout_range: (0, max_timeout.min(window)),
        ..AugmentConfig::default()
    }
    .resolve(channels, window);
    cfg.validate(channels, window).map_err(js_err)?;
    let y = augment_window(&x, &cfg, &mut rng::seeded(seed)).map_err(js_err)?;
    Ok(y.iter().copied().collect())
}

/// ROC curve for binary truths (`0`/`1`) and scores, returned as
/// `[auc, fpr_0, tpr_0, fpr_1, tpr_1, ...]`.
#[wasm_bindgen]
pub fn roc(truth: Vec<u8>, scores: Vec<f64>) -> Result<Vec<f64>, JsValue> {
    let truth: Vec<bool> = truth.iter().map(|&t| t != 0).collect();
    let curve = roc_curve(&truth, &scores).map_err(js_err)?;
    let mut out = vec![curve.auc];
    for (f, t) in curve.points {
        out.extend([f, t]);
    }
    Ok(out)
}
