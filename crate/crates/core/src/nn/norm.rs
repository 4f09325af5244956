//! Per-channel batch normalization over `[ch, m]` rows.

use super::Real;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

pub struct BnCache<S> {
    xhat: Vec<S>,
    inv_std: Vec<S>,
}

/// Batch statistics of one training forward pass, used to update the running
/// estimates. `var` is unbiased.
#[derive(Debug, Clone)]
pub struct BnStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

pub fn train_forward<S: Real>(
    x: &[S],
    ch: usize,
    gamma: &[S],
    beta: &[S],
) -> (Vec<S>, BnCache<S>, BnStats<S>) {
    let m = x.len() / ch;
    let mut y = vec![S::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(ch);
    let mut stats = BnStats {
        mean: Vec::with_capacity(ch),
        var: Vec::with_capacity(ch),
    };
    for c in 0..ch {
        let row = &x[c * m..][..m];
        let mean = row.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / m as f64;
        let ss = row
            .iter()
            .map(|v| (v.to_f64_lossy() - mean).powi(2))
            .sum::<f64>();
        let var = ss / m as f64;
        let istd = 1.0 / (var + BN_EPS).sqrt();
        let (mean_s, istd_s) = (S::of(mean), S::of(istd));
        for (o, &v) in y[c * m..][..m].iter_mut().zip(row) {
            *o = (v - mean_s) * istd_s;
        }
        inv_std.push(istd_s);
        stats.mean.push(mean_s);
        stats
            .var
            .push(S::of(if m > 1 { ss / (m - 1) as f64 } else { var }));
    }
    let xhat = y.clone();
    for c in 0..ch {
        for o in &mut y[c * m..][..m] {
            *o = *o * gamma[c] + beta[c];
        }
    }
    (y, BnCache { xhat, inv_std }, stats)
}

pub fn eval_forward<S: Real>(
    x: &[S],
    ch: usize,
    gamma: &[S],
    beta: &[S],
    running_mean: &[S],
    running_var: &[S],
) -> Vec<S> {
    let m = x.len() / ch;
    let mut y = vec![S::zero(); x.len()];
    for c in 0..ch {
        let scale = gamma[c] / (running_var[c] + S::of(BN_EPS)).sqrt();
        let shift = beta[c] - running_mean[c] * scale;
        for (o, &v) in y[c * m..][..m].iter_mut().zip(&x[c * m..][..m]) {
            *o = v * scale + shift;
        }
    }
    y
}

/// Accumulates `dgamma`/`dbeta`; returns the input gradient.
pub fn train_backward<S: Real>(
    dy: &[S],
    cache: &BnCache<S>,
    gamma: &[S],
    dgamma: &mut [S],
    dbeta: &mut [S],
) -> Vec<S> {
    let ch = gamma.len();
    let m = dy.len() / ch;
    let inv_m = 1.0 / m as f64;
    let mut dx = vec![S::zero(); dy.len()];
    for c in 0..ch {
        let g = &dy[c * m..][..m];
        let xh = &cache.xhat[c * m..][..m];
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for (&gi, &xi) in g.iter().zip(xh) {
            sum_g += gi.to_f64_lossy();
            sum_gx += (gi * xi).to_f64_lossy();
        }
        dgamma[c] += S::of(sum_gx);
        dbeta[c] += S::of(sum_g);
        let k = gamma[c] * cache.inv_std[c];
        let mean_g = S::of(sum_g * inv_m);
        let mean_gx = S::of(sum_gx * inv_m);
        for ((d, &gi), &xi) in dx[c * m..][..m].iter_mut().zip(g).zip(xh) {
            *d = k * (gi - mean_g - xi * mean_gx);
        }
    }
    dx
}

/// Input gradient when running statistics were used (frozen normalization).
pub fn eval_backward<S: Real>(
    dy: &[S],
    ch: usize,
    gamma: &[S],
    running_var: &[S],
) -> Vec<S> {
    let m = dy.len() / ch;
    let mut dx = dy.to_vec();
    for c in 0..ch {
        let scale = gamma[c] / (running_var[c] + S::of(BN_EPS)).sqrt();
        for d in &mut dx[c * m..][..m] {
            *d *= scale;
        }
    }
    dx
}

/// `running = (1 - momentum) * running + momentum * batch`.
pub fn update_running<S: Real>(running: &mut [S], batch: &[S]) {
    let mom = S::of(BN_MOMENTUM);
    for (r, &b) in running.iter_mut().zip(batch) {
        *r = (S::one() - mom) * *r + mom * b;
    }
}
