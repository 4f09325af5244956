//! Seeded synthetic multi-channel recordings: each channel is an independent
//! class-frequency sinusoid plus AR(1) noise, so channels are exchangeable and
//! classes separable.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::SCALP_LEADS;
use crate::rng;
use crate::signal::{Dataset, Segment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub n_channels: usize,
    pub n_patients: usize,
    pub segments_per_patient: usize,
    pub window_samples: usize,
    pub sample_rate_hz: f64,
    pub class_freqs_hz: Vec<f64>,
    pub ar_coeff: f64,
    pub noise_sigma: f64,
    pub amplitude_range: (f64, f64),
    pub patient_gain_range: (f64, f64),
    pub total_votes: u32,
    pub true_class_votes: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 4,
            n_channels: 16,
            n_patients: 40,
            segments_per_patient: 25,
            window_samples: 512,
            sample_rate_hz: 200.0,
            class_freqs_hz: vec![2.0, 6.0, 12.0, 20.0],
            ar_coeff: 0.9,
            noise_sigma: 0.3,
            amplitude_range: (0.5, 1.5),
            patient_gain_range: (0.8, 1.2),
            total_votes: 15,
            true_class_votes: 12,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.class_freqs_hz.len() != self.n_classes {
            return bad(format!(
                "{} class frequencies for {} classes",
                self.class_freqs_hz.len(),
                self.n_classes
            ));
        }
        if self.n_channels == 0 || self.n_patients == 0 || self.segments_per_patient == 0 || self.window_samples == 0 {
            return bad("channel, patient, segment and window counts must be positive".into());
        }
        if !(self.sample_rate_hz > 0.0) {
            return bad(format!("sample rate must be positive, got {}", self.sample_rate_hz));
        }
        for (i, &f) in self.class_freqs_hz.iter().enumerate() {
            if !(f > 0.0 && f < self.sample_rate_hz / 2.0) {
                return bad(format!("class frequency {f} Hz outside (0, Nyquist)"));
            }
            if self.class_freqs_hz[..i].contains(&f) {
                return bad(format!("class frequency {f} Hz repeated"));
            }
        }
        if !(0.0..1.0).contains(&self.ar_coeff) {
            return bad(format!("ar_coeff must lie in [0, 1), got {}", self.ar_coeff));
        }
        if !(self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        for (name, (lo, hi)) in [
            ("amplitude_range", self.amplitude_range),
            ("patient_gain_range", self.patient_gain_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!("{name} must be finite with lo <= hi, got ({lo}, {hi})"));
            }
        }
        if self.true_class_votes > self.total_votes || self.total_votes == 0 {
            return bad(format!(
                "true_class_votes {} must not exceed total_votes {} (> 0)",
                self.true_class_votes, self.total_votes
            ));
        }
        Ok(())
    }
}

pub fn channel_names(n: usize) -> Vec<String> {
    if n <= SCALP_LEADS.len() {
        SCALP_LEADS[..n].iter().map(|s| s.to_string()).collect()
    } else {
        (0..n).map(|i| format!("ch{i}")).collect()
    }
}

fn uniform(r: &mut rng::Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        r.random_range(lo..hi)
    }
}

fn generate_with(cfg: &SynthConfig, patient_prefix: &str) -> Result<Dataset> {
    cfg.validate()?;
    let (c, t) = (cfg.n_channels, cfg.window_samples);
    let names = channel_names(c);
    let innovation = cfg.noise_sigma * (1.0 - cfg.ar_coeff * cfg.ar_coeff).sqrt();
    let mut segments = Vec::with_capacity(cfg.n_patients * cfg.segments_per_patient);
    for p in 0..cfg.n_patients {
        let patient_id = format!("{patient_prefix}{p:03}");
        let gain = uniform(
            &mut rng::seeded(rng::derive_idx(cfg.seed, "gain", p as u64)),
            cfg.patient_gain_range,
        );
        for s in 0..cfg.segments_per_patient {
            let idx = (p * cfg.segments_per_patient + s) as u64;
            let mut r = rng::seeded(rng::derive_idx(cfg.seed, "segment", idx));
            let class = r.random_range(0..cfg.n_classes);
            let omega = 2.0 * PI * cfg.class_freqs_hz[class] / cfg.sample_rate_hz;
            let mut data = Array2::<f32>::zeros((c, t));
            for mut row in data.rows_mut() {
                let a = uniform(&mut r, cfg.amplitude_range);
                let phi = r.random_range(0.0..2.0 * PI);
                let mut noise = cfg.noise_sigma * r.sample::<f64, _>(StandardNormal);
                for (i, v) in row.iter_mut().enumerate() {
                    if i > 0 {
                        noise = cfg.ar_coeff * noise + innovation * r.sample::<f64, _>(StandardNormal);
                    }
                    *v = (gain * a * (omega * i as f64 + phi).sin() + noise) as f32;
                }
            }
            let mut votes = vec![0u32; cfg.n_classes];
            votes[class] = cfg.true_class_votes;
            for _ in cfg.true_class_votes..cfg.total_votes {
                let other = (class + 1 + r.random_range(0..cfg.n_classes - 1)) % cfg.n_classes;
                votes[other] += 1;
            }
            segments.push(Segment {
                id: format!("{patient_id}_s{s:03}"),
                patient_id: patient_id.clone(),
                data,
                votes,
                channel_names: names.clone(),
            });
        }
    }
    Ok(Dataset {
        sample_rate_hz: cfg.sample_rate_hz,
        window_samples: t,
        channel_names: names,
        class_names: (0..cfg.n_classes).map(|k| format!("class{k}")).collect(),
        segments,
    })
}

pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    generate_with(cfg, "p")
}

/// The configured dataset plus an 8-channel companion from the same process
/// with its own patients and seed stream.
pub fn generate_pair(cfg: &SynthConfig) -> Result<(Dataset, Dataset)> {
    if cfg.n_channels < 8 {
        return Err(Error::Config(format!(
            "paired generation needs at least 8 channels, got {}",
            cfg.n_channels
        )));
    }
    let wide = generate_with(cfg, "p")?;
    let narrow_cfg = SynthConfig {
        n_channels: 8,
        seed: rng::derive(cfg.seed, "pair"),
        ..cfg.clone()
    };
    let narrow = generate_with(&narrow_cfg, "q")?;
    Ok((wide, narrow))
}
