//! One direction of a single-layer LSTM over `[input, n, len]` sequences.
//!
//! Gate rows are ordered input, forget, cell, output. Only the final hidden
//! state is emitted.

use super::{gemm, sigmoid, tanh, Mat, MatMut, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmDir {
    pub input: usize,
    pub hidden: usize,
    /// Consume the sequence from the last time step to the first.
    pub reverse: bool,
}

pub struct LstmCache<S> {
    n: usize,
    len: usize,
    /// Post-activation gates per step, `[4h × n]` each.
    gates: Vec<S>,
    /// Cell state per step, `[h × n]` each.
    cells: Vec<S>,
    /// `tanh` of the cell state per step.
    tanh_cells: Vec<S>,
    /// Hidden state per step, `[h × n]` each.
    hiddens: Vec<S>,
}

/// `[ch, n, len]` to `[ch, len, n]`.
fn to_time_major<S: Real>(x: &[S], ch: usize, n: usize, len: usize) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for c in 0..ch {
        let src = &x[c * n * len..][..n * len];
        let dst = &mut out[c * n * len..][..n * len];
        for s in 0..n {
            for t in 0..len {
                dst[t * n + s] = src[s * len + t];
            }
        }
    }
    out
}

fn from_time_major<S: Real>(x: &[S], ch: usize, n: usize, len: usize) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for c in 0..ch {
        let src = &x[c * n * len..][..n * len];
        let dst = &mut out[c * n * len..][..n * len];
        for t in 0..len {
            for s in 0..n {
                dst[s * len + t] = src[t * n + s];
            }
        }
    }
    out
}

impl LstmDir {
    fn time_at(&self, step: usize, len: usize) -> usize {
        if self.reverse {
            len - 1 - step
        } else {
            step
        }
    }

    /// Returns the final hidden state `[h × n]` and, when asked, the cache.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<S: Real>(
        &self,
        w_ih: &[S],
        w_hh: &[S],
        bias: &[S],
        x: &[S],
        n: usize,
        len: usize,
        keep_cache: bool,
    ) -> (Vec<S>, Option<LstmCache<S>>) {
        let h = self.hidden;
        let g4 = 4 * h;
        let cols = n * len;
        let xt = to_time_major(x, self.input, n, len);
        let mut gin = vec![S::zero(); g4 * cols];
        gemm(
            S::one(),
            Mat::new(w_ih, g4, self.input),
            Mat::new(&xt, self.input, cols),
            S::zero(),
            MatMut::new(&mut gin, g4, cols),
        );
        for (row, &b) in gin.chunks_exact_mut(cols).zip(bias) {
            for v in row {
                *v += b;
            }
        }

        let mut h_prev = vec![S::zero(); h * n];
        let mut c_prev = vec![S::zero(); h * n];
        let mut g = vec![S::zero(); g4 * n];
        let mut tc = vec![S::zero(); h * n];
        let mut cache = keep_cache.then(|| LstmCache {
            n,
            len,
            gates: Vec::with_capacity(len * g4 * n),
            cells: Vec::with_capacity(len * h * n),
            tanh_cells: Vec::with_capacity(len * h * n),
            hiddens: Vec::with_capacity(len * h * n),
        });

        for step in 0..len {
            let t = self.time_at(step, len);
            for r in 0..g4 {
                g[r * n..][..n].copy_from_slice(&gin[r * cols + t * n..][..n]);
            }
            gemm(
                S::one(),
                Mat::new(w_hh, g4, h),
                Mat::new(&h_prev, h, n),
                S::one(),
                MatMut::new(&mut g, g4, n),
            );
            let (gi, rest) = g.split_at_mut(h * n);
            let (gf, rest) = rest.split_at_mut(h * n);
            let (gg, go) = rest.split_at_mut(h * n);
            for j in 0..h * n {
                let i = sigmoid(gi[j]);
                let f = sigmoid(gf[j]);
                let cg = tanh(gg[j]);
                let o = sigmoid(go[j]);
                let c = f * c_prev[j] + i * cg;
                gi[j] = i;
                gf[j] = f;
                gg[j] = cg;
                go[j] = o;
                c_prev[j] = c;
                tc[j] = tanh(c);
                h_prev[j] = o * tc[j];
            }
            if let Some(cache) = cache.as_mut() {
                cache.gates.extend_from_slice(&g);
                cache.cells.extend_from_slice(&c_prev);
                cache.tanh_cells.extend_from_slice(&tc);
                cache.hiddens.extend_from_slice(&h_prev);
            }
        }
        (h_prev, cache)
    }

    /// Backpropagates the gradient of the final hidden state. Accumulates
    /// weight gradients and returns the input gradient `[input, n, len]`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward<S: Real>(
        &self,
        w_ih: &[S],
        w_hh: &[S],
        x: &[S],
        cache: &LstmCache<S>,
        dh_final: &[S],
        dw_ih: &mut [S],
        dw_hh: &mut [S],
        dbias: &mut [S],
        need_dx: bool,
    ) -> Option<Vec<S>> {
        let h = self.hidden;
        let g4 = 4 * h;
        let (n, len) = (cache.n, cache.len);
        let hn = h * n;
        let cols = n * len;

        let mut dgin = vec![S::zero(); g4 * cols];
        let mut dh = dh_final.to_vec();
        let mut dc = vec![S::zero(); hn];
        let mut dg = vec![S::zero(); g4 * n];
        let zeros = vec![S::zero(); hn];

        for step in (0..len).rev() {
            let t = self.time_at(step, len);
            let gates = &cache.gates[step * g4 * n..][..g4 * n];
            let tcs = &cache.tanh_cells[step * hn..][..hn];
            let c_prev = if step > 0 {
                &cache.cells[(step - 1) * hn..][..hn]
            } else {
                &zeros
            };
            let h_prev = if step > 0 {
                &cache.hiddens[(step - 1) * hn..][..hn]
            } else {
                &zeros
            };
            for j in 0..hn {
                let i = gates[j];
                let f = gates[hn + j];
                let cg = gates[2 * hn + j];
                let o = gates[3 * hn + j];
                let tc = tcs[j];
                let d_o = dh[j] * tc;
                let dcj = dc[j] + dh[j] * o * (S::one() - tc * tc);
                dg[j] = dcj * cg * i * (S::one() - i);
                dg[hn + j] = dcj * c_prev[j] * f * (S::one() - f);
                dg[2 * hn + j] = dcj * i * (S::one() - cg * cg);
                dg[3 * hn + j] = d_o * o * (S::one() - o);
                dc[j] = dcj * f;
            }
            for r in 0..g4 {
                dgin[r * cols + t * n..][..n].copy_from_slice(&dg[r * n..][..n]);
            }
            if step > 0 {
                gemm(
                    S::one(),
                    Mat::new(&dg, g4, n),
                    Mat::new(h_prev, h, n).t(),
                    S::one(),
                    MatMut::new(dw_hh, g4, h),
                );
            }
            gemm(
                S::one(),
                Mat::new(w_hh, g4, h).t(),
                Mat::new(&dg, g4, n),
                S::zero(),
                MatMut::new(&mut dh, h, n),
            );
        }

        let xt = to_time_major(x, self.input, n, len);
        gemm(
            S::one(),
            Mat::new(&dgin, g4, cols),
            Mat::new(&xt, self.input, cols).t(),
            S::one(),
            MatMut::new(dw_ih, g4, self.input),
        );
        for (row, db) in dgin.chunks_exact(cols).zip(dbias.iter_mut()) {
            *db += row.iter().copied().sum::<S>();
        }
        if !need_dx {
            return None;
        }
        let mut dx = vec![S::zero(); self.input * cols];
        gemm(
            S::one(),
            Mat::new(w_ih, g4, self.input).t(),
            Mat::new(&dgin, g4, cols),
            S::zero(),
            MatMut::new(&mut dx, self.input, cols),
        );
        Some(from_time_major(&dx, self.input, n, len))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(len: usize, scale: f64, phase: f64) -> Vec<f64> {
        (0..len).map(|i| scale * (i as f64 * 0.77 + phase).sin()).collect()
    }

    #[test]
    fn reverse_direction_reads_backwards() {
        let dir = LstmDir { input: 2, hidden: 3, reverse: false };
        let rev = LstmDir { reverse: true, ..dir };
        let (w_ih, w_hh, b) = (det(24, 0.5, 0.0), det(36, 0.4, 1.0), det(12, 0.1, 2.0));
        let (n, len) = (1, 5);
        let x = det(2 * len, 1.0, 3.0);
        let mut flipped = x.clone();
        for c in 0..2 {
            flipped[c * len..(c + 1) * len].reverse();
        }
        let (a, _) = dir.forward(&w_ih, &w_hh, &b, &x, n, len, false);
        let (r, _) = rev.forward(&w_ih, &w_hh, &b, &flipped, n, len, false);
        assert_eq!(a, r);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let dir = LstmDir { input: 2, hidden: 2, reverse: true };
        let (n, len) = (2, 4);
        let w_ih = det(16, 0.6, 0.2);
        let w_hh = det(16, 0.5, 0.9);
        let b = det(8, 0.2, 1.3);
        let x = det(2 * n * len, 1.0, 0.4);
        let probe = det(4, 1.0, 2.2);
        let loss = |x: &[f64], w_ih: &[f64]| {
            let (h, _) = dir.forward(w_ih, &w_hh, &b, x, n, len, false);
            h.iter().zip(&probe).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, cache) = dir.forward(&w_ih, &w_hh, &b, &x, n, len, true);
        let mut dw_ih = vec![0.0; 16];
        let mut dw_hh = vec![0.0; 16];
        let mut db = vec![0.0; 8];
        let dx = dir
            .backward(&w_ih, &w_hh, &x, &cache.unwrap(), &probe, &mut dw_ih, &mut dw_hh, &mut db, true)
            .unwrap();
        let eps = 1e-6;
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += eps;
            xm[i] -= eps;
            let fd = (loss(&xp, &w_ih) - loss(&xm, &w_ih)) / (2.0 * eps);
            assert!((fd - dx[i]).abs() < 1e-8, "dx[{i}] {fd} vs {}", dx[i]);
        }
        for i in 0..w_ih.len() {
            let (mut wp, mut wm) = (w_ih.clone(), w_ih.clone());
            wp[i] += eps;
            wm[i] -= eps;
            let fd = (loss(&x, &wp) - loss(&x, &wm)) / (2.0 * eps);
            assert!((fd - dw_ih[i]).abs() < 1e-8, "dw_ih[{i}]");
        }
    }
}
