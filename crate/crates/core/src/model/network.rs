//! Forward and backward passes of the extractor and the fusion classifier.
//!
//! The single-channel path reshapes a `[B, C, T]` batch to `B·C` independent
//! one-channel sequences; since the internal activation layout is
//! `[channels, sequences, time]`, that reshape is free. The end-to-end path
//! instead feeds all `C` channels to the first convolution as one sequence.

use std::collections::BTreeMap;

use ndarray::{Array2, Array3};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::model::config::{Arch, ModelConfig};
use crate::model::params::{block_specs, inception_convs, ModelParams};
use crate::nn::linear::Linear;
use crate::nn::lstm::{LstmCache, LstmDir};
use crate::nn::norm::{self, BnCache, BnStats};
use crate::nn::{add_inplace, relu_backward_inplace, relu_inplace, Real};
use crate::rng;

/// Which normalization statistics the extractor uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; caches are kept for backpropagation.
    Train,
    /// Running statistics; nothing is cached.
    Eval,
}

pub type Grads<S> = BTreeMap<String, Vec<S>>;

fn accumulate<S: Real>(grads: &mut Grads<S>, name: String, g: Vec<S>) {
    match grads.get_mut(&name) {
        Some(acc) => add_inplace(acc, &g),
        None => {
            grads.insert(name, g);
        }
    }
}

type NormStats<S> = Vec<(String, BnStats<S>)>;

struct BlockCache<S> {
    bn1: BnCache<S>,
    r1: Vec<S>,
    bn2: BnCache<S>,
    proj: Option<BnCache<S>>,
}

struct ExtractorCache<S> {
    input: Vec<S>,
    n: usize,
    t: usize,
    inception: BnCache<S>,
    /// Post-activation outputs: inception, then each residual block.
    acts: Vec<Vec<S>>,
    lens: Vec<usize>,
    blocks: Vec<BlockCache<S>>,
    lstm: Vec<LstmCache<S>>,
}

struct ClassifierCache<S> {
    input: Vec<S>,
    hidden: Vec<S>,
    scale: S,
    batch: usize,
}

fn norm_forward<S: Real>(
    p: &ModelParams<S>,
    prefix: &str,
    x: &[S],
    ch: usize,
    mode: Mode,
    stats: &mut NormStats<S>,
) -> (Vec<S>, Option<BnCache<S>>) {
    let gamma = p.get(&format!("{prefix}.weight"));
    let beta = p.get(&format!("{prefix}.bias"));
    match mode {
        Mode::Train => {
            let (y, cache, st) = norm::train_forward(x, ch, gamma, beta);
            stats.push((prefix.to_string(), st));
            (y, Some(cache))
        }
        Mode::Eval => (
            norm::eval_forward(
                x,
                ch,
                gamma,
                beta,
                p.get(&format!("{prefix}.running_mean")),
                p.get(&format!("{prefix}.running_var")),
            ),
            None,
        ),
    }
}

fn norm_backward<S: Real>(
    p: &ModelParams<S>,
    prefix: &str,
    dy: &[S],
    cache: &BnCache<S>,
    grads: &mut Grads<S>,
) -> Vec<S> {
    let gamma = p.get(&format!("{prefix}.weight"));
    let mut dgamma = vec![S::zero(); gamma.len()];
    let mut dbeta = vec![S::zero(); gamma.len()];
    let dx = norm::train_backward(dy, cache, gamma, &mut dgamma, &mut dbeta);
    accumulate(grads, format!("{prefix}.weight"), dgamma);
    accumulate(grads, format!("{prefix}.bias"), dbeta);
    dx
}

fn lstm_dirs(cfg: &ModelConfig) -> [(LstmDir, &'static str); 2] {
    let base = LstmDir {
        input: cfg.feature_width,
        hidden: cfg.hidden(),
        reverse: false,
    };
    [
        (base, "extractor.lstm.fwd"),
        (LstmDir { reverse: true, ..base }, "extractor.lstm.bwd"),
    ]
}

/// Runs the extractor on `n` sequences laid out `[in_ch, n, t]`; returns
/// features `[n × 2h]`.
fn extractor_forward<S: Real>(
    p: &ModelParams<S>,
    x: &[S],
    n: usize,
    t: usize,
    mode: Mode,
    stats: &mut NormStats<S>,
) -> (Vec<S>, Option<ExtractorCache<S>>) {
    let cfg = &p.config;
    let k = cfg.feature_width;
    let keep = mode == Mode::Train;

    let convs = inception_convs(cfg);
    let len0 = convs[0].out_len(t);
    let block_rows = convs[0].out_ch * n * len0;
    let mut h0 = vec![S::zero(); k * n * len0];
    for (b, conv) in convs.iter().enumerate() {
        conv.forward_into(
            p.get(&format!("extractor.inception.branch{b}.weight")),
            x,
            n,
            t,
            &mut h0[b * block_rows..(b + 1) * block_rows],
        );
    }
    let (mut a, inc_cache) = norm_forward(p, "extractor.inception.norm", &h0, k, mode, stats);
    drop(h0);
    relu_inplace(&mut a);

    let mut acts = Vec::new();
    let mut lens = vec![len0];
    let mut blocks = Vec::new();
    let mut len = len0;
    for spec in block_specs(cfg) {
        let pre = &spec.prefix;
        let lout = spec.conv1.out_len(len);
        let h1 = spec
            .conv1
            .forward(p.get(&format!("{pre}.conv1.weight")), &a, n, len);
        let (mut r1, bn1) = norm_forward(p, &format!("{pre}.norm1"), &h1, k, mode, stats);
        drop(h1);
        relu_inplace(&mut r1);
        let h2 = spec
            .conv2
            .forward(p.get(&format!("{pre}.conv2.weight")), &r1, n, lout);
        let (mut out, bn2) = norm_forward(p, &format!("{pre}.norm2"), &h2, k, mode, stats);
        drop(h2);
        let proj_cache = match &spec.proj {
            Some(proj) => {
                let hp = proj.forward(p.get(&format!("{pre}.proj.weight")), &a, n, len);
                let (skip, c) = norm_forward(p, &format!("{pre}.proj_norm"), &hp, k, mode, stats);
                add_inplace(&mut out, &skip);
                c
            }
            None => {
                add_inplace(&mut out, &a);
                None
            }
        };
        relu_inplace(&mut out);
        if keep {
            blocks.push(BlockCache {
                bn1: bn1.unwrap(),
                r1,
                bn2: bn2.unwrap(),
                proj: proj_cache,
            });
        }
        let prev = std::mem::replace(&mut a, out);
        if keep {
            acts.push(prev);
        }
        lens.push(lout);
        len = lout;
    }

    let h = cfg.hidden();
    let mut feats = vec![S::zero(); n * 2 * h];
    let mut lstm_caches = Vec::new();
    for (d, (dir, prefix)) in lstm_dirs(cfg).into_iter().enumerate() {
        let (last, cache) = dir.forward(
            p.get(&format!("{prefix}.weight_ih")),
            p.get(&format!("{prefix}.weight_hh")),
            p.get(&format!("{prefix}.bias")),
            &a,
            n,
            len,
            keep,
        );
        for j in 0..h {
            for s in 0..n {
                feats[s * 2 * h + d * h + j] = last[j * n + s];
            }
        }
        lstm_caches.extend(cache);
    }
    acts.push(a);

    let cache = keep.then(|| ExtractorCache {
        input: x.to_vec(),
        n,
        t,
        inception: inc_cache.unwrap(),
        acts,
        lens,
        blocks,
        lstm: lstm_caches,
    });
    (feats, cache)
}

fn extractor_backward<S: Real>(
    p: &ModelParams<S>,
    cache: &ExtractorCache<S>,
    dfeat: &[S],
    grads: &mut Grads<S>,
) {
    let cfg = &p.config;
    let n = cache.n;
    let h = cfg.hidden();
    let last = cache.acts.last().unwrap();

    let mut d_act: Option<Vec<S>> = None;
    for (d, (dir, prefix)) in lstm_dirs(cfg).into_iter().enumerate() {
        let mut dh = vec![S::zero(); h * n];
        for j in 0..h {
            for s in 0..n {
                dh[j * n + s] = dfeat[s * 2 * h + d * h + j];
            }
        }
        let w_ih = p.get(&format!("{prefix}.weight_ih"));
        let w_hh = p.get(&format!("{prefix}.weight_hh"));
        let mut dw_ih = vec![S::zero(); w_ih.len()];
        let mut dw_hh = vec![S::zero(); w_hh.len()];
        let mut db = vec![S::zero(); 4 * h];
        let dx = dir
            .backward(w_ih, w_hh, last, &cache.lstm[d], &dh, &mut dw_ih, &mut dw_hh, &mut db, true)
            .unwrap();
        accumulate(grads, format!("{prefix}.weight_ih"), dw_ih);
        accumulate(grads, format!("{prefix}.weight_hh"), dw_hh);
        accumulate(grads, format!("{prefix}.bias"), db);
        match d_act.as_mut() {
            Some(acc) => add_inplace(acc, &dx),
            None => d_act = Some(dx),
        }
    }
    let mut d = d_act.unwrap();

    let specs = block_specs(cfg);
    for (i, spec) in specs.iter().enumerate().rev() {
        let pre = &spec.prefix;
        let bc = &cache.blocks[i];
        let x = &cache.acts[i];
        let out = &cache.acts[i + 1];
        let (len, lout) = (cache.lens[i], cache.lens[i + 1]);
        relu_backward_inplace(&mut d, out);

        let dh2 = norm_backward(p, &format!("{pre}.norm2"), &d, &bc.bn2, grads);
        let w2 = p.get(&format!("{pre}.conv2.weight"));
        let mut dw2 = vec![S::zero(); w2.len()];
        let mut dr1 = spec
            .conv2
            .backward(w2, &bc.r1, &dh2, n, lout, &mut dw2, true)
            .unwrap();
        accumulate(grads, format!("{pre}.conv2.weight"), dw2);
        relu_backward_inplace(&mut dr1, &bc.r1);
        let dh1 = norm_backward(p, &format!("{pre}.norm1"), &dr1, &bc.bn1, grads);
        let w1 = p.get(&format!("{pre}.conv1.weight"));
        let mut dw1 = vec![S::zero(); w1.len()];
        let mut dx = spec
            .conv1
            .backward(w1, x, &dh1, n, len, &mut dw1, true)
            .unwrap();
        accumulate(grads, format!("{pre}.conv1.weight"), dw1);

        match (&spec.proj, &bc.proj) {
            (Some(proj), Some(pc)) => {
                let dhp = norm_backward(p, &format!("{pre}.proj_norm"), &d, pc, grads);
                let wp = p.get(&format!("{pre}.proj.weight"));
                let mut dwp = vec![S::zero(); wp.len()];
                let dxp = proj.backward(wp, x, &dhp, n, len, &mut dwp, true).unwrap();
                accumulate(grads, format!("{pre}.proj.weight"), dwp);
                add_inplace(&mut dx, &dxp);
            }
            _ => add_inplace(&mut dx, &d),
        }
        d = dx;
    }

    relu_backward_inplace(&mut d, &cache.acts[0]);
    let dh0 = norm_backward(p, "extractor.inception.norm", &d, &cache.inception, grads);
    let convs = inception_convs(cfg);
    let block_rows = convs[0].out_ch * n * cache.lens[0];
    for (b, conv) in convs.iter().enumerate() {
        let name = format!("extractor.inception.branch{b}.weight");
        let w = p.get(&name);
        let mut dw = vec![S::zero(); w.len()];
        conv.backward(
            w,
            &cache.input,
            &dh0[b * block_rows..(b + 1) * block_rows],
            n,
            cache.t,
            &mut dw,
            false,
        );
        accumulate(grads, name, dw);
    }
}

fn classifier_layers(cfg: &ModelConfig) -> (Linear, Linear) {
    (
        Linear {
            input: cfg.classifier_input(),
            output: cfg.classifier_hidden,
        },
        Linear {
            input: cfg.classifier_hidden,
            output: cfg.n_classes,
        },
    )
}

fn classifier_forward<S: Real>(
    p: &ModelParams<S>,
    input: Vec<S>,
    batch: usize,
    dropout_seed: Option<u64>,
) -> (Vec<S>, ClassifierCache<S>) {
    let (fc1, fc2) = classifier_layers(&p.config);
    let mut hidden = fc1.forward(
        p.get("classifier.fc1.weight"),
        p.get("classifier.fc1.bias"),
        &input,
        batch,
    );
    relu_inplace(&mut hidden);
    let rate = p.config.dropout;
    let mut scale = S::one();
    if let (Some(seed), true) = (dropout_seed, rate > 0.0) {
        let mut r = rng::seeded(seed);
        scale = S::of(1.0 / (1.0 - rate));
        for v in &mut hidden {
            if r.random_bool(rate) {
                *v = S::zero();
            } else {
                *v *= scale;
            }
        }
    }
    let logits = fc2.forward(
        p.get("classifier.fc2.weight"),
        p.get("classifier.fc2.bias"),
        &hidden,
        batch,
    );
    (
        logits,
        ClassifierCache {
            input,
            hidden,
            scale,
            batch,
        },
    )
}

fn classifier_backward<S: Real>(
    p: &ModelParams<S>,
    cache: &ClassifierCache<S>,
    dlogits: &[S],
    grads: &mut Grads<S>,
    need_dinput: bool,
) -> Option<Vec<S>> {
    let (fc1, fc2) = classifier_layers(&p.config);
    let b = cache.batch;
    let w2 = p.get("classifier.fc2.weight");
    let mut dw2 = vec![S::zero(); w2.len()];
    let mut db2 = vec![S::zero(); fc2.output];
    let mut dh = fc2
        .backward(w2, &cache.hidden, dlogits, b, &mut dw2, &mut db2, true)
        .unwrap();
    accumulate(grads, "classifier.fc2.weight".into(), dw2);
    accumulate(grads, "classifier.fc2.bias".into(), db2);
    for (g, &y) in dh.iter_mut().zip(&cache.hidden) {
        *g = if y > S::zero() { *g * cache.scale } else { S::zero() };
    }
    let w1 = p.get("classifier.fc1.weight");
    let mut dw1 = vec![S::zero(); w1.len()];
    let mut db1 = vec![S::zero(); fc1.output];
    let dx = fc1.backward(w1, &cache.input, &dh, b, &mut dw1, &mut db1, need_dinput);
    accumulate(grads, "classifier.fc1.weight".into(), dw1);
    accumulate(grads, "classifier.fc1.bias".into(), db1);
    dx
}

/// Options of a full-network pass.
#[derive(Debug, Clone, Copy)]
pub struct PassOptions {
    pub extractor_mode: Mode,
    /// Enables dropout (when configured) with this mask seed.
    pub dropout_seed: Option<u64>,
}

impl PassOptions {
    pub const EVAL: PassOptions = PassOptions {
        extractor_mode: Mode::Eval,
        dropout_seed: None,
    };
}

/// Result of [`forward_pass`]: logits plus whatever backpropagation needs.
pub struct Pass<S> {
    /// `[batch × n_classes]`, row-major.
    pub logits: Vec<S>,
    pub batch: usize,
    /// Batch statistics of every normalization layer (training mode only).
    pub norm_stats: Vec<(String, BnStats<S>)>,
    extractor: Option<ExtractorCache<S>>,
    classifier: ClassifierCache<S>,
}

fn check_input<S: Real>(cfg: &ModelConfig, data: &[S], c: usize, t: usize) -> Result<()> {
    cfg.check_window(t)?;
    if c == 0 {
        return Err(Error::Shape("batch has no channels".into()));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("model input".into()));
    }
    Ok(())
}

fn check_head(cfg: &ModelConfig, c: usize) -> Result<()> {
    if c != cfg.n_channels {
        return Err(match cfg.arch {
            Arch::Scfnet => Error::Shape(format!(
                "classifier head expects {} channels, got {c}",
                cfg.n_channels
            )),
            Arch::End2end => Error::Architecture(format!(
                "end-to-end network is bound to {} input channels, got {c}",
                cfg.n_channels
            )),
        });
    }
    Ok(())
}

/// Rearranges `[b, c, t]` into the extractor layout. For the single-channel
/// path this is the identity.
fn to_extractor_layout<S: Real>(arch: Arch, data: &[S], b: usize, c: usize, t: usize) -> (Vec<S>, usize) {
    match arch {
        Arch::Scfnet => (data.to_vec(), b * c),
        Arch::End2end => {
            let mut out = vec![S::zero(); data.len()];
            for s in 0..b {
                for ch in 0..c {
                    out[(ch * b + s) * t..][..t].copy_from_slice(&data[(s * c + ch) * t..][..t]);
                }
            }
            (out, b)
        }
    }
}

/// Full network on a row-major `[b, c, t]` batch.
pub fn forward_pass<S: Real>(
    p: &ModelParams<S>,
    data: &[S],
    b: usize,
    c: usize,
    t: usize,
    opts: PassOptions,
) -> Result<Pass<S>> {
    assert_eq!(data.len(), b * c * t, "batch buffer size");
    check_input(&p.config, data, c, t)?;
    check_head(&p.config, c)?;
    let (x, n) = to_extractor_layout(p.config.arch, data, b, c, t);
    let mut stats = Vec::new();
    let (feats, ext_cache) = extractor_forward(p, &x, n, t, opts.extractor_mode, &mut stats);
    let (logits, cls_cache) = classifier_forward(p, feats, b, opts.dropout_seed);
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    Ok(Pass {
        logits,
        batch: b,
        norm_stats: stats,
        extractor: ext_cache,
        classifier: cls_cache,
    })
}

/// Gradients of every tensor touched by the pass. Extractor gradients are
/// present only when the pass ran the extractor in training mode.
pub fn backward_pass<S: Real>(p: &ModelParams<S>, pass: &Pass<S>, dlogits: &[S]) -> Grads<S> {
    let mut grads = Grads::new();
    let dfeat = classifier_backward(
        p,
        &pass.classifier,
        dlogits,
        &mut grads,
        pass.extractor.is_some(),
    );
    if let (Some(cache), Some(dfeat)) = (&pass.extractor, dfeat) {
        extractor_backward(p, cache, &dfeat, &mut grads);
    }
    grads
}

fn as_slice<S: Real>(a: &Array3<S>) -> std::borrow::Cow<'_, [S]> {
    match a.as_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(a.iter().copied().collect()),
    }
}

/// Per-channel feature blocks `[B × C × 2h]` in inference mode.
///
/// For the single-channel architecture `C` may differ from the channel count
/// the classifier was built for. The end-to-end architecture yields one block
/// per sample (`[B × 1 × 2h]`).
pub fn extract_features<S: Real>(batch: &Array3<S>, params: &ModelParams<S>) -> Result<Array3<S>> {
    let (b, c, t) = batch.dim();
    let cfg = &params.config;
    let data = as_slice(batch);
    check_input(cfg, &data, c, t)?;
    if cfg.arch == Arch::End2end {
        check_head(cfg, c)?;
    }
    let (x, n) = to_extractor_layout(cfg.arch, &data, b, c, t);
    let (feats, _) = extractor_forward(params, &x, n, t, Mode::Eval, &mut Vec::new());
    let blocks = n / b.max(1);
    Array3::from_shape_vec((b, blocks, cfg.feature_len()), feats).map_err(|e| Error::Shape(e.to_string()))
}

/// Fusion classifier on `[B × C × 2h]` feature blocks; returns logits.
pub fn classify<S: Real>(features: &Array3<S>, params: &ModelParams<S>) -> Result<Array2<S>> {
    let cfg = &params.config;
    let (b, c, f) = features.dim();
    let expected_blocks = match cfg.arch {
        Arch::Scfnet => cfg.n_channels,
        Arch::End2end => 1,
    };
    if c != expected_blocks || f != cfg.feature_len() {
        return Err(Error::Shape(format!(
            "classifier head expects {expected_blocks} feature blocks of {}, got {c} of {f}",
            cfg.feature_len()
        )));
    }
    let (logits, _) = classifier_forward(params, as_slice(features).into_owned(), b, None);
    Array2::from_shape_vec((b, cfg.n_classes), logits).map_err(|e| Error::Shape(e.to_string()))
}

fn forward_arch<S: Real>(batch: &Array3<S>, params: &ModelParams<S>, arch: Arch) -> Result<Array2<S>> {
    if params.config.arch != arch {
        return Err(Error::Architecture(format!(
            "parameters are for {}, not {arch}",
            params.config.arch
        )));
    }
    forward(batch, params)
}

/// Shared extractor on each channel, concatenated blocks, then the head.
pub fn scfnet_forward<S: Real>(batch: &Array3<S>, params: &ModelParams<S>) -> Result<Array2<S>> {
    forward_arch(batch, params, Arch::Scfnet)
}

/// Baseline whose first convolution sees all channels at once.
pub fn end2end_forward<S: Real>(batch: &Array3<S>, params: &ModelParams<S>) -> Result<Array2<S>> {
    forward_arch(batch, params, Arch::End2end)
}

/// Inference-mode logits `[B × n_classes]` for either architecture.
pub fn forward<S: Real>(batch: &Array3<S>, params: &ModelParams<S>) -> Result<Array2<S>> {
    let (b, c, t) = batch.dim();
    let pass = forward_pass(params, &as_slice(batch), b, c, t, PassOptions::EVAL)?;
    Array2::from_shape_vec((b, params.config.n_classes), pass.logits)
        .map_err(|e| Error::Shape(e.to_string()))
}

/// Applies a pass's batch statistics to the running estimates.
pub fn update_running_stats<S: Real>(params: &mut ModelParams<S>, stats: &[(String, BnStats<S>)]) {
    for (prefix, st) in stats {
        norm::update_running(params.get_mut(&format!("{prefix}.running_mean")), &st.mean);
        norm::update_running(params.get_mut(&format!("{prefix}.running_var")), &st.var);
    }
}
