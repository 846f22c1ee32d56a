//! Convolution, activation and GEMM helpers over flat `f64` buffers.
//!
//! Feature maps are channel-planar (`c * h * w + y * w + x`). Layer weights
//! live in one flat parameter vector; each layer records its offsets.

/// `C = A * B + beta * C` for row-major `C` (`m x n`). `a_t` / `b_t` read the
/// stored buffer as the transpose (`A` stored `k x m`, `B` stored `n x k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover exactly m*k, k*n and m*n elements and the
    // strides above address only those elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub w_off: usize,
    pub b_off: usize,
}

pub(crate) struct ConvOut {
    pub out: Vec<f64>,
    pub col: Vec<f64>,
    pub ho: usize,
    pub wo: usize,
}

impl Conv2d {
    /// Lays the layer out at `*offset` and advances it.
    pub fn new(cin: usize, cout: usize, kernel: usize, stride: usize, offset: &mut usize) -> Self {
        let w_off = *offset;
        let b_off = w_off + cout * cin * kernel * kernel;
        *offset = b_off + cout;
        Self {
            cin,
            cout,
            kernel,
            stride,
            pad: kernel / 2,
            w_off,
            b_off,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.fan_in()
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn im2col(&self, input: &[f64], h: usize, w: usize, ho: usize, wo: usize) -> Vec<f64> {
        let k = self.kernel;
        let p = ho * wo;
        let mut col = vec![0.0; self.fan_in() * p];
        for ci in 0..self.cin {
            let plane = &input[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((ci * k + ky) * k + kx) * p..((ci * k + ky) * k + kx + 1) * p];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut row[oy * wo..(oy + 1) * wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[f64], h: usize, w: usize, ho: usize, wo: usize) -> Vec<f64> {
        let k = self.kernel;
        let p = ho * wo;
        let mut out = vec![0.0; self.cin * h * w];
        for ci in 0..self.cin {
            let plane = &mut out[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((ci * k + ky) * k + kx) * p..((ci * k + ky) * k + kx + 1) * p];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, g) in row[oy * wo..(oy + 1) * wo].iter().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward(&self, params: &[f64], input: &[f64], h: usize, w: usize) -> ConvOut {
        debug_assert_eq!(input.len(), self.cin * h * w);
        let (ho, wo) = self.out_dims(h, w);
        let p = ho * wo;
        let col = self.im2col(input, h, w, ho, wo);
        let mut out = vec![0.0; self.cout * p];
        for (co, plane) in out.chunks_mut(p).enumerate() {
            plane.fill(params[self.b_off + co]);
        }
        let weights = &params[self.w_off..self.w_off + self.weight_len()];
        gemm(self.cout, self.fan_in(), p, weights, false, &col, false, 1.0, &mut out);
        ConvOut { out, col, ho, wo }
    }

    /// Accumulates weight/bias gradients and returns the input gradient when asked.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        params: &[f64],
        col: &[f64],
        grad_out: &[f64],
        h: usize,
        w: usize,
        ho: usize,
        wo: usize,
        grads: &mut [f64],
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let p = ho * wo;
        let k = self.fan_in();
        gemm(
            self.cout,
            p,
            k,
            grad_out,
            false,
            col,
            true,
            1.0,
            &mut grads[self.w_off..self.w_off + self.weight_len()],
        );
        for (co, plane) in grad_out.chunks(p).enumerate() {
            grads[self.b_off + co] += plane.iter().sum::<f64>();
        }
        if !want_input {
            return None;
        }
        let mut dcol = vec![0.0; k * p];
        let weights = &params[self.w_off..self.w_off + self.weight_len()];
        gemm(k, self.cout, p, weights, true, grad_out, false, 0.0, &mut dcol);
        Some(self.col2im(&dcol, h, w, ho, wo))
    }
}

pub(crate) fn relu_inplace(values: &mut [f64]) {
    for v in values {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries where the (post-activation) output is not positive.
pub(crate) fn relu_backward(grad: &mut [f64], activated: &[f64]) {
    for (g, a) in grad.iter_mut().zip(activated) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}
