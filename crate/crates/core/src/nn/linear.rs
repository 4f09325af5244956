//! Affine layer on row-major `[batch × in]` inputs, weights `[out × in]`.

use super::{gemm, Mat, MatMut, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn forward<S: Real>(&self, w: &[S], b: &[S], x: &[S], batch: usize) -> Vec<S> {
        let mut y = Vec::with_capacity(batch * self.output);
        for _ in 0..batch {
            y.extend_from_slice(b);
        }
        gemm(
            S::one(),
            Mat::new(x, batch, self.input),
            Mat::new(w, self.output, self.input).t(),
            S::one(),
            MatMut::new(&mut y, batch, self.output),
        );
        y
    }

    #[allow(clippy::too_many_arguments)]
    pub fn backward<S: Real>(
        &self,
        w: &[S],
        x: &[S],
        dy: &[S],
        batch: usize,
        dw: &mut [S],
        db: &mut [S],
        need_dx: bool,
    ) -> Option<Vec<S>> {
        gemm(
            S::one(),
            Mat::new(dy, batch, self.output).t(),
            Mat::new(x, batch, self.input),
            S::one(),
            MatMut::new(dw, self.output, self.input),
        );
        for row in dy.chunks_exact(self.output) {
            for (d, &g) in db.iter_mut().zip(row) {
                *d += g;
            }
        }
        need_dx.then(|| {
            let mut dx = vec![S::zero(); batch * self.input];
            gemm(
                S::one(),
                Mat::new(dy, batch, self.output),
                Mat::new(w, self.output, self.input),
                S::zero(),
                MatMut::new(&mut dx, batch, self.input),
            );
            dx
        })
    }
}
