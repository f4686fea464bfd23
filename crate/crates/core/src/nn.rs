//! Dense and 1-D convolution kernels with hand-written backward passes.
//!
//! Tensors are flat row-major `f64` slices. Weights follow the
//! `[out x in]` (dense) and `[out x in x kernel]` (conv) layouts.

pub(crate) fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of ELU (alpha = 1) at pre-activation `x`.
pub(crate) fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// `y[n, o] = b[o] + sum_i w[o, i] x[n, i]`, accumulated in input order.
pub(crate) fn dense_forward(w: &[f64], b: &[f64], x: &[f64], inputs: usize, outputs: usize) -> Vec<f64> {
    let n = x.len() / inputs;
    let mut y = Vec::with_capacity(n * outputs);
    for row in x.chunks_exact(inputs) {
        for o in 0..outputs {
            let wr = &w[o * inputs..(o + 1) * inputs];
            let mut acc = b[o];
            for (wi, xi) in wr.iter().zip(row) {
                acc += wi * xi;
            }
            y.push(acc);
        }
    }
    y
}

/// Accumulates weight/bias gradients into `dw`/`db`; returns `dx` when asked.
pub(crate) fn dense_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    inputs: usize,
    outputs: usize,
    dw: &mut [f64],
    db: &mut [f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    let mut dx = want_dx.then(|| vec![0.0; x.len()]);
    for (n, (xr, gr)) in x.chunks_exact(inputs).zip(dy.chunks_exact(outputs)).enumerate() {
        for (o, &g) in gr.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            let dwr = &mut dw[o * inputs..(o + 1) * inputs];
            for (d, xi) in dwr.iter_mut().zip(xr) {
                *d += g * xi;
            }
            if let Some(dx) = dx.as_mut() {
                let wr = &w[o * inputs..(o + 1) * inputs];
                for (d, wi) in dx[n * inputs..(n + 1) * inputs].iter_mut().zip(wr) {
                    *d += g * wi;
                }
            }
        }
    }
    dx
}

/// Dot product over four interleaved partial sums, which lets the compiler
/// vectorise it. The summation order is fixed, so results are reproducible.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Causal 1-D convolution. Input and output are channel-major `[C x T]`.
///
/// Left padding is `(kernel - 1) * dilation + 1 - stride`, so the output has
/// exactly `T / stride` frames and never sees future input samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Conv1d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl Conv1d {
    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kernel
    }

    fn pad(&self) -> isize {
        ((self.kernel - 1) * self.dilation + 1) as isize - self.stride as isize
    }

    pub fn out_len(&self, t: usize) -> usize {
        t / self.stride
    }

    /// Range of output frames whose tap at `offset` lands inside `0..t_in`.
    fn valid(&self, offset: isize, t_in: usize, t_out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let lo = if offset < 0 { ((-offset) + s - 1) / s } else { 0 };
        let hi = ((t_in as isize - offset + s - 1) / s).clamp(0, t_out as isize);
        (lo as usize, (hi as usize).max(lo as usize))
    }

    pub fn forward(&self, w: &[f64], b: &[f64], x: &[f64], t_in: usize) -> Vec<f64> {
        let t_out = self.out_len(t_in);
        let mut y = vec![0.0; self.out_ch * t_out];
        let pad = self.pad();
        for o in 0..self.out_ch {
            let yr = &mut y[o * t_out..(o + 1) * t_out];
            yr.fill(b[o]);
            for i in 0..self.in_ch {
                let xr = &x[i * t_in..(i + 1) * t_in];
                for j in 0..self.kernel {
                    let wv = w[(o * self.in_ch + i) * self.kernel + j];
                    if wv == 0.0 {
                        continue;
                    }
                    let offset = (j * self.dilation) as isize - pad;
                    let (lo, hi) = self.valid(offset, t_in, t_out);
                    if lo >= hi {
                        continue;
                    }
                    if self.stride == 1 {
                        let src = &xr[(lo as isize + offset) as usize..(hi as isize + offset) as usize];
                        for (yv, xv) in yr[lo..hi].iter_mut().zip(src) {
                            *yv += wv * xv;
                        }
                    } else {
                        for t in lo..hi {
                            yr[t] += wv * xr[(t as isize * self.stride as isize + offset) as usize];
                        }
                    }
                }
            }
        }
        y
    }

    /// Accumulates `dw`, `db` and returns `dx` when asked.
    pub fn backward(
        &self,
        w: &[f64],
        x: &[f64],
        t_in: usize,
        dy: &[f64],
        dw: &mut [f64],
        db: &mut [f64],
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let t_out = self.out_len(t_in);
        let pad = self.pad();
        let mut dx = want_dx.then(|| vec![0.0; self.in_ch * t_in]);
        for o in 0..self.out_ch {
            let gr = &dy[o * t_out..(o + 1) * t_out];
            db[o] += gr.iter().sum::<f64>();
            for i in 0..self.in_ch {
                let xr = &x[i * t_in..(i + 1) * t_in];
                for j in 0..self.kernel {
                    let widx = (o * self.in_ch + i) * self.kernel + j;
                    let offset = (j * self.dilation) as isize - pad;
                    let (lo, hi) = self.valid(offset, t_in, t_out);
                    if lo >= hi {
                        continue;
                    }
                    let wv = w[widx];
                    if self.stride == 1 {
                        let a = (lo as isize + offset) as usize;
                        let b = (hi as isize + offset) as usize;
                        let src = &xr[a..b];
                        dw[widx] += dot(&gr[lo..hi], src);
                        if let Some(dx) = dx.as_mut() {
                            if wv != 0.0 {
                                let dxr = &mut dx[i * t_in + a..i * t_in + b];
                                for (d, g) in dxr.iter_mut().zip(&gr[lo..hi]) {
                                    *d += wv * g;
                                }
                            }
                        }
                    } else {
                        let s = self.stride as isize;
                        let mut acc = 0.0;
                        for t in lo..hi {
                            let src = (t as isize * s + offset) as usize;
                            acc += gr[t] * xr[src];
                            if let Some(dx) = dx.as_mut() {
                                dx[i * t_in + src] += wv * gr[t];
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(c: &Conv1d, w: &[f64], b: &[f64], x: &[f64], t_in: usize) -> Vec<f64> {
        let t_out = t_in / c.stride;
        let pad = c.pad();
        let mut y = vec![0.0; c.out_ch * t_out];
        for o in 0..c.out_ch {
            for t in 0..t_out {
                let mut acc = b[o];
                for i in 0..c.in_ch {
                    for j in 0..c.kernel {
                        let src = (t * c.stride + j * c.dilation) as isize - pad;
                        if src >= 0 && (src as usize) < t_in {
                            acc += w[(o * c.in_ch + i) * c.kernel + j] * x[i * t_in + src as usize];
                        }
                    }
                }
                y[o * t_out + t] = acc;
            }
        }
        y
    }

    fn ramp(n: usize, k: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + 1.0) * k).sin()).collect()
    }

    #[test]
    fn conv_matches_direct_sum() {
        for c in [
            Conv1d { in_ch: 2, out_ch: 3, kernel: 3, stride: 1, dilation: 3 },
            Conv1d { in_ch: 2, out_ch: 4, kernel: 8, stride: 4, dilation: 1 },
            Conv1d { in_ch: 1, out_ch: 2, kernel: 7, stride: 1, dilation: 1 },
        ] {
            let t = 16;
            let w = ramp(c.weight_len(), 0.7);
            let b = ramp(c.out_ch, 1.3);
            let x = ramp(c.in_ch * t, 0.41);
            let got = c.forward(&w, &b, &x, t);
            let want = naive_conv(&c, &w, &b, &x, t);
            for (g, e) in got.iter().zip(&want) {
                assert!((g - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_is_causal() {
        let c = Conv1d { in_ch: 1, out_ch: 1, kernel: 3, stride: 1, dilation: 2 };
        let w = [1.0, 1.0, 1.0];
        let mut x = vec![0.0; 10];
        x[6] = 1.0;
        let y = c.forward(&w, &[0.0], &x, 10);
        assert!(y[..6].iter().all(|&v| v == 0.0));
        assert_eq!(y[6], 1.0);
    }

    #[test]
    fn conv_backward_is_adjoint() {
        let c = Conv1d { in_ch: 3, out_ch: 2, kernel: 4, stride: 2, dilation: 1 };
        let t = 12;
        let w = ramp(c.weight_len(), 0.3);
        let x = ramp(c.in_ch * t, 0.9);
        let dy = ramp(c.out_ch * t / 2, 0.55);
        let zero_b = vec![0.0; c.out_ch];
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; c.out_ch];
        let dx = c.backward(&w, &x, t, &dy, &mut dw, &mut db, true).unwrap();
        // <dy, conv(x)> == <dx, x> == <dw, w> for a bias-free linear map
        let y = c.forward(&w, &zero_b, &x, t);
        let lhs: f64 = y.iter().zip(&dy).map(|(a, b)| a * b).sum();
        let via_x: f64 = dx.iter().zip(&x).map(|(a, b)| a * b).sum();
        let via_w: f64 = dw.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-10);
        assert!((lhs - via_w).abs() < 1e-10);
        assert!((db.iter().sum::<f64>() - dy.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn dense_backward_is_adjoint() {
        let (i, o, n) = (3, 2, 4);
        let w = ramp(o * i, 0.8);
        let x = ramp(n * i, 0.3);
        let dy = ramp(n * o, 0.6);
        let y = dense_forward(&w, &[0.0; 2], &x, i, o);
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; o];
        let dx = dense_backward(&w, &x, &dy, i, o, &mut dw, &mut db, true).unwrap();
        let lhs: f64 = y.iter().zip(&dy).map(|(a, b)| a * b).sum();
        assert!((lhs - dx.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()).abs() < 1e-12);
        assert!((lhs - dw.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn elu_is_continuous_with_unit_slope_at_zero() {
        assert_eq!(elu(0.0), 0.0);
        assert_eq!(elu_grad(0.0), 1.0);
        assert!((elu(-1.0) - ((-1f64).exp() - 1.0)).abs() < 1e-15);
    }
}
