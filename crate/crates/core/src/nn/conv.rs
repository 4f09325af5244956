//! 1-D convolution as im2col + GEMM on `[in_ch, n, len]` activations.

use std::ops::Range;

use super::{gemm, Mat, MatMut, Real};

const CHUNK_COLS: usize = 2048;

/// Shape of a bias-free 1-D convolution; weights are `[out_ch, in_ch, kernel]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    /// Stride-`stride` convolution with `kernel / 2` zero padding on each side.
    pub fn same(in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad: kernel / 2,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.out_ch, self.in_ch, self.kernel]
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Sequences per im2col chunk, sized so the column buffer stays in cache.
    fn chunk(&self, lout: usize) -> usize {
        (CHUNK_COLS / lout.max(1)).max(1)
    }

    /// Columns for sequences `seqs` only: `[in_ch * kernel, seqs.len() * lout]`.
    fn im2col<S: Real>(&self, x: &[S], n: usize, len: usize, seqs: Range<usize>, col: &mut Vec<S>) {
        let lout = self.out_len(len);
        let cols = seqs.len() * lout;
        col.clear();
        col.resize(self.in_ch * self.kernel * cols, S::zero());
        for ci in 0..self.in_ch {
            for kk in 0..self.kernel {
                let row = &mut col[(ci * self.kernel + kk) * cols..][..cols];
                for (j, s) in seqs.clone().enumerate() {
                    let src = &x[(ci * n + s) * len..][..len];
                    let dst = &mut row[j * lout..][..lout];
                    if self.stride == 1 {
                        // Valid outputs are those with 0 <= lo + kk - pad < len.
                        let lo0 = self.pad.saturating_sub(kk);
                        let lo1 = (len + self.pad).saturating_sub(kk).min(lout);
                        if lo0 < lo1 {
                            let p0 = lo0 + kk - self.pad;
                            dst[lo0..lo1].copy_from_slice(&src[p0..p0 + (lo1 - lo0)]);
                        }
                    } else {
                        for (lo, d) in dst.iter_mut().enumerate() {
                            let pos = (lo * self.stride + kk).wrapping_sub(self.pad);
                            if pos < len {
                                *d = src[pos];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<S: Real>(&self, dcol: &[S], n: usize, len: usize, seqs: Range<usize>, dx: &mut [S]) {
        let lout = self.out_len(len);
        let cols = seqs.len() * lout;
        for ci in 0..self.in_ch {
            for kk in 0..self.kernel {
                let row = &dcol[(ci * self.kernel + kk) * cols..][..cols];
                for (j, s) in seqs.clone().enumerate() {
                    let dst = &mut dx[(ci * n + s) * len..][..len];
                    let src = &row[j * lout..][..lout];
                    if self.stride == 1 {
                        let lo0 = self.pad.saturating_sub(kk);
                        let lo1 = (len + self.pad).saturating_sub(kk).min(lout);
                        if lo0 < lo1 {
                            let p0 = lo0 + kk - self.pad;
                            for (d, &g) in dst[p0..p0 + (lo1 - lo0)].iter_mut().zip(&src[lo0..lo1]) {
                                *d += g;
                            }
                        }
                        continue;
                    }
                    for (lo, &g) in src.iter().enumerate() {
                        let pos = (lo * self.stride + kk).wrapping_sub(self.pad);
                        if pos < len {
                            dst[pos] += g;
                        }
                    }
                }
            }
        }
    }

    /// Output into `out`, a `[out_ch, n * out_len]` buffer.
    pub fn forward_into<S: Real>(&self, w: &[S], x: &[S], n: usize, len: usize, out: &mut [S]) {
        debug_assert_eq!(x.len(), self.in_ch * n * len);
        let lout = self.out_len(len);
        let kdim = self.in_ch * self.kernel;
        let step = self.chunk(lout);
        let mut col = Vec::new();
        for s0 in (0..n).step_by(step) {
            let seqs = s0..(s0 + step).min(n);
            let cc = seqs.len() * lout;
            self.im2col(x, n, len, seqs, &mut col);
            gemm(
                S::one(),
                Mat::new(w, self.out_ch, kdim),
                Mat::new(&col, kdim, cc),
                S::zero(),
                MatMut::strided(&mut out[s0 * lout..], self.out_ch, cc, n * lout, 1),
            );
        }
    }

    pub fn forward<S: Real>(&self, w: &[S], x: &[S], n: usize, len: usize) -> Vec<S> {
        let mut out = vec![S::zero(); self.out_ch * n * self.out_len(len)];
        self.forward_into(w, x, n, len, &mut out);
        out
    }

    /// Accumulates the weight gradient into `dw`; returns the input gradient
    /// when `need_dx`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward<S: Real>(
        &self,
        w: &[S],
        x: &[S],
        dy: &[S],
        n: usize,
        len: usize,
        dw: &mut [S],
        need_dx: bool,
    ) -> Option<Vec<S>> {
        let lout = self.out_len(len);
        let kdim = self.in_ch * self.kernel;
        let step = self.chunk(lout);
        let mut dx = need_dx.then(|| vec![S::zero(); self.in_ch * n * len]);
        let mut col = Vec::new();
        let mut dcol = Vec::new();
        for s0 in (0..n).step_by(step) {
            let seqs = s0..(s0 + step).min(n);
            let cc = seqs.len() * lout;
            let dy_chunk = Mat::strided(&dy[s0 * lout..], self.out_ch, cc, n * lout, 1);
            self.im2col(x, n, len, seqs.clone(), &mut col);
            gemm(
                S::one(),
                dy_chunk,
                Mat::new(&col, kdim, cc).t(),
                S::one(),
                MatMut::new(dw, self.out_ch, kdim),
            );
            if let Some(dx) = dx.as_mut() {
                dcol.clear();
                dcol.resize(kdim * cc, S::zero());
                gemm(
                    S::one(),
                    Mat::new(w, self.out_ch, kdim).t(),
                    dy_chunk,
                    S::zero(),
                    MatMut::new(&mut dcol, kdim, cc),
                );
                self.col2im(&dcol, n, len, seqs, dx);
            }
        }
        dx
    }
}
