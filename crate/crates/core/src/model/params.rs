//! Named parameter tensors and their initialization.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::nn::conv::Conv1d;
use crate::nn::Real;
use crate::rng;

pub const EXTRACTOR_PREFIX: &str = "extractor.";
pub const CLASSIFIER_PREFIX: &str = "classifier.";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S = f32> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

impl<S: Real> Tensor<S> {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![S::zero(); len],
        }
    }

    pub fn cast<T: Real>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::of(v.to_f64_lossy())).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    Uniform(f64),
    Const(f64),
}

#[derive(Debug, Clone)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Running-statistics buffers are carried with the parameters but never
/// receive gradients.
pub fn is_buffer(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

/// Layer geometry of one residual block.
#[derive(Debug, Clone)]
pub(crate) struct BlockSpec {
    pub prefix: String,
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub proj: Option<Conv1d>,
}

pub(crate) fn inception_convs(cfg: &ModelConfig) -> Vec<Conv1d> {
    let width = cfg.feature_width / cfg.inception_kernels.len();
    cfg.inception_kernels
        .iter()
        .map(|&k| Conv1d::same(cfg.extractor_input_channels(), width, k, 2))
        .collect()
}

pub(crate) fn block_specs(cfg: &ModelConfig) -> Vec<BlockSpec> {
    let k = cfg.feature_width;
    cfg.resnet_stage_strides
        .iter()
        .enumerate()
        .map(|(i, &stride)| BlockSpec {
            prefix: format!("extractor.res{i}"),
            conv1: Conv1d::same(k, k, 3, stride),
            conv2: Conv1d::same(k, k, 3, 1),
            proj: (stride != 1).then(|| Conv1d::same(k, k, 1, stride)),
        })
        .collect()
}

fn norm_specs(prefix: &str, ch: usize, out: &mut Vec<ParamSpec>) {
    for (suffix, value) in [
        ("weight", 1.0),
        ("bias", 0.0),
        ("running_mean", 0.0),
        ("running_var", 1.0),
    ] {
        out.push(ParamSpec {
            name: format!("{prefix}.{suffix}"),
            shape: vec![ch],
            init: Init::Const(value),
        });
    }
}

fn conv_spec(name: String, conv: &Conv1d, out: &mut Vec<ParamSpec>) {
    let fan_in = (conv.in_ch * conv.kernel) as f64;
    out.push(ParamSpec {
        name,
        shape: conv.weight_shape(),
        init: Init::Uniform((6.0 / fan_in).sqrt()),
    });
}

pub(crate) fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let k = cfg.feature_width;
    let h = cfg.hidden();
    let mut out = Vec::new();
    for (b, conv) in inception_convs(cfg).iter().enumerate() {
        conv_spec(format!("extractor.inception.branch{b}.weight"), conv, &mut out);
    }
    norm_specs("extractor.inception.norm", k, &mut out);
    for block in block_specs(cfg) {
        conv_spec(format!("{}.conv1.weight", block.prefix), &block.conv1, &mut out);
        norm_specs(&format!("{}.norm1", block.prefix), k, &mut out);
        conv_spec(format!("{}.conv2.weight", block.prefix), &block.conv2, &mut out);
        norm_specs(&format!("{}.norm2", block.prefix), k, &mut out);
        if let Some(proj) = &block.proj {
            conv_spec(format!("{}.proj.weight", block.prefix), proj, &mut out);
            norm_specs(&format!("{}.proj_norm", block.prefix), k, &mut out);
        }
    }
    let bound = 1.0 / (h as f64).sqrt();
    for dir in ["fwd", "bwd"] {
        let p = format!("extractor.lstm.{dir}");
        out.push(ParamSpec {
            name: format!("{p}.weight_ih"),
            shape: vec![4 * h, k],
            init: Init::Uniform(bound),
        });
        out.push(ParamSpec {
            name: format!("{p}.weight_hh"),
            shape: vec![4 * h, h],
            init: Init::Uniform(bound),
        });
        out.push(ParamSpec {
            name: format!("{p}.bias"),
            shape: vec![4 * h],
            init: Init::Const(0.0),
        });
    }
    let d = cfg.classifier_input();
    let hid = cfg.classifier_hidden;
    out.push(ParamSpec {
        name: "classifier.fc1.weight".into(),
        shape: vec![hid, d],
        init: Init::Uniform((6.0 / d as f64).sqrt()),
    });
    out.push(ParamSpec {
        name: "classifier.fc1.bias".into(),
        shape: vec![hid],
        init: Init::Const(0.0),
    });
    out.push(ParamSpec {
        name: "classifier.fc2.weight".into(),
        shape: vec![cfg.n_classes, hid],
        init: Init::Uniform(1.0 / (hid as f64).sqrt()),
    });
    out.push(ParamSpec {
        name: "classifier.fc2.bias".into(),
        shape: vec![cfg.n_classes],
        init: Init::Const(0.0),
    });
    out
}

/// Parameters of one network, keyed by dotted name.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S = f32> {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, Tensor<S>>,
    /// Names excluded from optimizer updates.
    pub frozen: BTreeSet<String>,
}

impl<S: Real> ModelParams<S> {
    pub fn get(&self, name: &str) -> &[S] {
        match self.tensors.get(name) {
            Some(t) => &t.data,
            None => panic!("parameter {name} missing"),
        }
    }

    pub fn get_mut(&mut self, name: &str) -> &mut [S] {
        match self.tensors.get_mut(name) {
            Some(t) => &mut t.data,
            None => panic!("parameter {name} missing"),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Names the optimizer may update.
    pub fn trainable(&self) -> Vec<String> {
        self.tensors
            .keys()
            .filter(|n| !is_buffer(n) && !self.frozen.contains(*n))
            .cloned()
            .collect()
    }

    pub fn freeze_extractor(&mut self) {
        self.frozen = self
            .tensors
            .keys()
            .filter(|n| n.starts_with(EXTRACTOR_PREFIX))
            .cloned()
            .collect();
    }

    pub fn extractor_frozen(&self) -> bool {
        self.tensors
            .keys()
            .filter(|n| n.starts_with(EXTRACTOR_PREFIX))
            .all(|n| self.frozen.contains(n))
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors
            .iter()
            .filter(|(n, _)| !is_buffer(n))
            .map(|(_, t)| t.data.len())
            .sum()
    }

    pub fn cast<T: Real>(&self) -> ModelParams<T> {
        ModelParams {
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
            frozen: self.frozen.clone(),
        }
    }

    /// Checks names and shapes against what `config` requires.
    pub fn check_layout(&self) -> Result<()> {
        let specs = param_specs(&self.config);
        if specs.len() != self.tensors.len() {
            return Err(Error::Format(format!(
                "{} tensors present, configuration needs {}",
                self.tensors.len(),
                specs.len()
            )));
        }
        for spec in specs {
            match self.tensors.get(&spec.name) {
                None => return Err(Error::Format(format!("tensor {} missing", spec.name))),
                Some(t) if t.shape != spec.shape => {
                    return Err(Error::Format(format!(
                        "tensor {} has shape {:?}, expected {:?}",
                        spec.name, t.shape, spec.shape
                    )))
                }
                Some(t) if t.data.len() != spec.shape.iter().product::<usize>() => {
                    return Err(Error::Format(format!("tensor {} payload size", spec.name)))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn init_tensor<S: Real>(spec: &ParamSpec, seed: u64) -> Tensor<S> {
    let mut t = Tensor::zeros(spec.shape.clone());
    match spec.init {
        Init::Const(v) => t.data.fill(S::of(v)),
        Init::Uniform(bound) => {
            let mut r = rng::seeded(rng::derive(seed, &spec.name));
            for v in &mut t.data {
                *v = S::of(r.random_range(-bound..bound));
            }
        }
    }
    t
}

/// Deterministic initialization. Each tensor draws from its own stream keyed
/// by name, so extractor tensors do not depend on the channel count.
pub fn init_params<S: Real>(config: &ModelConfig, seed: u64) -> Result<ModelParams<S>> {
    config.validate()?;
    Ok(ModelParams {
        config: config.clone(),
        tensors: param_specs(config)
            .iter()
            .map(|spec| (spec.name.clone(), init_tensor(spec, seed)))
            .collect(),
        frozen: BTreeSet::new(),
    })
}

/// Fresh classifier tensors for `params.config`, replacing any existing ones.
pub(crate) fn reinit_classifier<S: Real>(params: &mut ModelParams<S>, seed: u64) {
    params
        .tensors
        .retain(|n, _| !n.starts_with(CLASSIFIER_PREFIX));
    for spec in param_specs(&params.config)
        .iter()
        .filter(|s| s.name.starts_with(CLASSIFIER_PREFIX))
    {
        params
            .tensors
            .insert(spec.name.clone(), init_tensor(spec, seed));
    }
}
