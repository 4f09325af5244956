use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which way channels reach the feature extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// One shared single-channel extractor applied to every channel, features
    /// concatenated before the classifier.
    Scfnet,
    /// All channels enter the first convolution together; the network is
    /// bound to the channel count it was built for.
    End2end,
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scfnet" => Ok(Arch::Scfnet),
            "end2end" => Ok(Arch::End2end),
            other => Err(Error::Config(format!(
                "unknown architecture {other:?} (expected scfnet or end2end)"
            ))),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arch::Scfnet => "scfnet",
            Arch::End2end => "end2end",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    pub n_channels: usize,
    pub window_samples: usize,
    /// CNN output width `k`.
    pub feature_width: usize,
    pub inception_kernels: Vec<usize>,
    pub n_resnet_blocks: usize,
    pub resnet_stage_strides: Vec<usize>,
    /// Recurrent hidden size; `None` means `feature_width`.
    pub lstm_hidden: Option<usize>,
    pub classifier_hidden: usize,
    pub n_classes: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Scfnet,
            n_channels: 16,
            window_samples: 10_000,
            feature_width: 64,
            inception_kernels: vec![3, 5, 7, 9],
            n_resnet_blocks: 9,
            resnet_stage_strides: vec![1, 1, 1, 2, 1, 1, 2, 1, 1],
            lstm_hidden: None,
            classifier_hidden: 128,
            n_classes: 6,
            dropout: 0.0,
        }
    }
}

/// The inception layer always halves the time axis.
pub const INCEPTION_STRIDE: usize = 2;

impl ModelConfig {
    /// Small network used for tests and the synthetic benchmarks.
    pub fn desk(n_channels: usize, window_samples: usize, n_classes: usize) -> Self {
        Self {
            n_channels,
            window_samples,
            n_classes,
            feature_width: 16,
            ..Self::default()
        }
    }

    pub fn hidden(&self) -> usize {
        self.lstm_hidden.unwrap_or(self.feature_width)
    }

    /// Width of one channel's feature block.
    pub fn feature_len(&self) -> usize {
        2 * self.hidden()
    }

    /// Input width of the classifier's first layer.
    pub fn classifier_input(&self) -> usize {
        match self.arch {
            Arch::Scfnet => self.n_channels * self.feature_len(),
            Arch::End2end => self.feature_len(),
        }
    }

    /// Channels entering the first convolution.
    pub fn extractor_input_channels(&self) -> usize {
        match self.arch {
            Arch::Scfnet => 1,
            Arch::End2end => self.n_channels,
        }
    }

    pub fn total_downsampling(&self) -> usize {
        INCEPTION_STRIDE * self.resnet_stage_strides.iter().product::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_channels == 0 {
            return bad("n_channels must be at least 1".into());
        }
        if self.n_classes < 2 {
            return bad(format!("n_classes must be at least 2, got {}", self.n_classes));
        }
        if self.inception_kernels.is_empty()
            || self.inception_kernels.iter().any(|k| k % 2 == 0)
        {
            return bad(format!(
                "inception kernels must be a non-empty list of odd sizes, got {:?}",
                self.inception_kernels
            ));
        }
        let k = self.feature_width;
        if k == 0 || !k.is_multiple_of(4) || !k.is_multiple_of(self.inception_kernels.len()) {
            return bad(format!(
                "feature_width {k} must be a positive multiple of 4 and of the branch count"
            ));
        }
        if self.resnet_stage_strides.len() != self.n_resnet_blocks {
            return bad(format!(
                "{} stage strides for {} residual blocks",
                self.resnet_stage_strides.len(),
                self.n_resnet_blocks
            ));
        }
        if self.resnet_stage_strides.iter().any(|&s| s == 0 || s > 2) {
            return bad("residual strides must be 1 or 2".into());
        }
        if self.hidden() == 0 || self.classifier_hidden == 0 {
            return bad("hidden sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        self.check_window(self.window_samples)
    }

    pub fn check_window(&self, samples: usize) -> Result<()> {
        let d = self.total_downsampling();
        if samples == 0 || !samples.is_multiple_of(d) {
            return Err(Error::Shape(format!(
                "window of {samples} samples is not a positive multiple of the total downsampling {d}"
            )));
        }
        Ok(())
    }

    /// Identity of the extractor's parameter layout: two configs with equal
    /// fingerprints can exchange `extractor.*` tensors.
    pub fn extractor_fingerprint(&self) -> String {
        let mut v = serde_json::json!({
            "arch": self.arch,
            "feature_width": self.feature_width,
            "inception_kernels": self.inception_kernels,
            "n_resnet_blocks": self.n_resnet_blocks,
            "resnet_stage_strides": self.resnet_stage_strides,
            "lstm_hidden": self.hidden(),
        });
        if self.arch == Arch::End2end {
            v["input_channels"] = self.n_channels.into();
        }
        v.to_string()
    }
}
