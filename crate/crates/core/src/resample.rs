//! Separable bilinear / nearest resampling on planar grids, with the adjoint
//! needed to backpropagate through bilinear upsampling.

#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    w_hi: f64,
}

fn bilinear_taps(n_in: usize, n_out: usize) -> Vec<Tap> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            Tap {
                lo,
                hi,
                w_hi: src - lo as f64,
            }
        })
        .collect()
}

/// Bilinear map from an `in_h x in_w` plane to an `out_h x out_w` plane
/// using half-pixel centers. Same-size maps are exact identities.
#[derive(Debug, Clone)]
pub struct Bilinear {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    rows: Vec<Tap>,
    cols: Vec<Tap>,
}

impl Bilinear {
    pub fn new(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Self {
        Self {
            in_h,
            in_w,
            out_h,
            out_w,
            rows: bilinear_taps(in_h, out_h),
            cols: bilinear_taps(in_w, out_w),
        }
    }

    pub fn output_len(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn forward(&self, input: &[f64], output: &mut [f64]) {
        debug_assert_eq!(input.len(), self.in_h * self.in_w);
        debug_assert_eq!(output.len(), self.out_h * self.out_w);
        for (oy, r) in self.rows.iter().enumerate() {
            let row_lo = &input[r.lo * self.in_w..(r.lo + 1) * self.in_w];
            let row_hi = &input[r.hi * self.in_w..(r.hi + 1) * self.in_w];
            for (ox, c) in self.cols.iter().enumerate() {
                let top = row_lo[c.lo] * (1.0 - c.w_hi) + row_lo[c.hi] * c.w_hi;
                let bottom = row_hi[c.lo] * (1.0 - c.w_hi) + row_hi[c.hi] * c.w_hi;
                output[oy * self.out_w + ox] = top * (1.0 - r.w_hi) + bottom * r.w_hi;
            }
        }
    }

    /// Accumulates the adjoint: `grad_input += A^T grad_output`.
    pub fn backward(&self, grad_output: &[f64], grad_input: &mut [f64]) {
        for (oy, r) in self.rows.iter().enumerate() {
            for (ox, c) in self.cols.iter().enumerate() {
                let g = grad_output[oy * self.out_w + ox];
                if g == 0.0 {
                    continue;
                }
                let g_lo = g * (1.0 - r.w_hi);
                let g_hi = g * r.w_hi;
                grad_input[r.lo * self.in_w + c.lo] += g_lo * (1.0 - c.w_hi);
                grad_input[r.lo * self.in_w + c.hi] += g_lo * c.w_hi;
                grad_input[r.hi * self.in_w + c.lo] += g_hi * (1.0 - c.w_hi);
                grad_input[r.hi * self.in_w + c.hi] += g_hi * c.w_hi;
            }
        }
    }
}

fn nearest_index(i: usize, n_in: usize, n_out: usize) -> usize {
    (((i as f64 + 0.5) * n_in as f64 / n_out as f64).floor() as usize).min(n_in - 1)
}

/// Nearest-neighbour resample of a row-major plane.
pub fn nearest<T: Copy>(input: &[T], in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Vec<T> {
    let cols: Vec<usize> = (0..out_w).map(|x| nearest_index(x, in_w, out_w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let sy = nearest_index(y, in_h, out_h);
        out.extend(cols.iter().map(|sx| input[sy * in_w + sx]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let input: Vec<f64> = (0..12).map(|v| v as f64 * 0.37).collect();
        let b = Bilinear::new(3, 4, 3, 4);
        let mut out = vec![0.0; 12];
        b.forward(&input, &mut out);
        assert_eq!(out, input);
        assert_eq!(nearest(&input, 3, 4, 3, 4), input);
    }

    #[test]
    fn backward_is_adjoint() {
        let b = Bilinear::new(3, 5, 7, 4);
        let x: Vec<f64> = (0..15).map(|v| ((v * 7) % 11) as f64 - 3.0).collect();
        let y: Vec<f64> = (0..28).map(|v| ((v * 5) % 13) as f64 * 0.1).collect();
        let mut ax = vec![0.0; 28];
        b.forward(&x, &mut ax);
        let mut aty = vec![0.0; 15];
        b.backward(&y, &mut aty);
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn constant_plane_stays_constant() {
        let b = Bilinear::new(4, 4, 9, 13);
        let mut out = vec![0.0; 9 * 13];
        b.forward(&[0.25; 16], &mut out);
        assert!(out.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }
}
