//! Scalar abstraction and the raw layer kernels (conv via im2col + GEMM,
//! ReLU, 2x2 max-pool, GAP) with their backward rules.

use std::fmt::Debug;

use num_traits::Float;

/// Floating-point type the network can run in. Training uses `f32`;
/// gradient checks run the same code in `f64`.
pub trait Real: Float + Default + Debug + Send + Sync + 'static + std::iter::Sum {
    /// `C <- A B + beta C` with explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
        c_strides: (usize, usize),
    );

    fn of_f32(v: f32) -> Self;
    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

fn check_extent(len: usize, rows: usize, cols: usize, (rs, cs): (usize, usize)) {
    if rows > 0 && cols > 0 {
        assert!((rows - 1) * rs + (cols - 1) * cs < len, "gemm operand too short");
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                beta: Self,
                c: &mut [Self],
                c_strides: (usize, usize),
            ) {
                check_extent(a.len(), m, k, a_strides);
                check_extent(b.len(), k, n, b_strides);
                check_extent(c.len(), m, n, c_strides);
                // SAFETY: every operand was checked to cover its strided extent.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0 as isize,
                        c_strides.1 as isize,
                    )
                }
            }

            #[inline]
            fn of_f32(v: f32) -> Self {
                v as $t
            }

            #[inline]
            fn of_f64(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Spatial bookkeeping of one conv block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct BlockGeometry {
    pub cin: usize,
    pub hin: usize,
    pub win: usize,
    pub cout: usize,
    pub stride: usize,
    pub hout: usize,
    pub wout: usize,
    pub pool: bool,
}

impl BlockGeometry {
    pub fn k(&self) -> usize {
        self.cin * 9
    }

    pub fn conv_pixels(&self) -> usize {
        self.hout * self.wout
    }

    /// `(height, width)` of the block's output after optional pooling.
    pub fn out_hw(&self) -> (usize, usize) {
        if self.pool {
            (self.hout / 2, self.wout / 2)
        } else {
            (self.hout, self.wout)
        }
    }
}

/// 3x3 patches with zero padding 1: row `(c*3 + ky)*3 + kx`, column
/// `oy*wout + ox`.
pub(crate) fn im2col<T: Real>(input: &[T], g: &BlockGeometry, col: &mut Vec<T>) {
    let p = g.conv_pixels();
    col.clear();
    col.resize(g.k() * p, T::zero());
    for c in 0..g.cin {
        let plane = &input[c * g.hin * g.win..(c + 1) * g.hin * g.win];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((c * 3 + ky) * 3 + kx) * p..][..p];
                for oy in 0..g.hout {
                    let iy = (oy * g.stride + ky) as isize - 1;
                    if iy < 0 || iy >= g.hin as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.win..][..g.win];
                    let dst = &mut row[oy * g.wout..][..g.wout];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - 1;
                        if ix >= 0 && ix < g.win as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub(crate) fn col2im<T: Real>(dcol: &[T], g: &BlockGeometry, dinput: &mut [T]) {
    let p = g.conv_pixels();
    dinput.iter_mut().for_each(|v| *v = T::zero());
    for c in 0..g.cin {
        let plane = &mut dinput[c * g.hin * g.win..(c + 1) * g.hin * g.win];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &dcol[((c * 3 + ky) * 3 + kx) * p..][..p];
                for oy in 0..g.hout {
                    let iy = (oy * g.stride + ky) as isize - 1;
                    if iy < 0 || iy >= g.hin as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.win..][..g.win];
                    let src = &row[oy * g.wout..][..g.wout];
                    for (ox, s) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - 1;
                        if ix >= 0 && ix < g.win as isize {
                            dst[ix as usize] = dst[ix as usize] + *s;
                        }
                    }
                }
            }
        }
    }
}

/// `out[cout, P] = relu(W[cout, K] col[K, P] + b)`
pub(crate) fn conv_relu_forward<T: Real>(
    col: &[T],
    g: &BlockGeometry,
    weight: &[T],
    bias: &[T],
    out: &mut Vec<T>,
) {
    let p = g.conv_pixels();
    let k = g.k();
    out.clear();
    out.resize(g.cout * p, T::zero());
    for (c, row) in out.chunks_mut(p).enumerate() {
        row.iter_mut().for_each(|v| *v = bias[c]);
    }
    T::gemm(g.cout, k, p, weight, (k, 1), col, (p, 1), T::one(), out, (p, 1));
    for v in out.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Backward through ReLU and the convolution. `dact` is the gradient with
/// respect to the post-ReLU output and is overwritten with the
/// pre-activation gradient. Parameter gradients accumulate into `dweight`
/// and `dbias`; the input gradient is written only when `dinput` is given.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_relu_backward<T: Real>(
    col: &[T],
    act: &[T],
    dact: &mut [T],
    g: &BlockGeometry,
    weight: &[T],
    grads: Option<(&mut [T], &mut [T])>,
    dinput: Option<(&mut [T], &mut Vec<T>)>,
) {
    let p = g.conv_pixels();
    let k = g.k();
    for (d, a) in dact.iter_mut().zip(act) {
        if *a <= T::zero() {
            *d = T::zero();
        }
    }
    if let Some((dweight, dbias)) = grads {
        // dW[cout, K] += dpre[cout, P] * col^T[P, K]
        T::gemm(g.cout, p, k, dact, (p, 1), col, (1, p), T::one(), dweight, (k, 1));
        for (c, row) in dact.chunks(p).enumerate() {
            dbias[c] = dbias[c] + row.iter().copied().sum::<T>();
        }
    }
    if let Some((dinput, dcol)) = dinput {
        dcol.clear();
        dcol.resize(k * p, T::zero());
        // dcol[K, P] = W^T[K, cout] * dpre[cout, P]
        T::gemm(k, g.cout, p, weight, (1, k), dact, (p, 1), T::zero(), dcol, (p, 1));
        col2im(dcol, g, dinput);
    }
}

/// 2x2 stride-2 max-pool; `argmax` records the winning input offset of each
/// output cell (first maximum in row-major window order).
pub(crate) fn maxpool_forward<T: Real>(
    input: &[T],
    c: usize,
    h: usize,
    w: usize,
    out: &mut Vec<T>,
    argmax: &mut Vec<u32>,
) {
    let (ho, wo) = (h / 2, w / 2);
    out.clear();
    out.resize(c * ho * wo, T::zero());
    argmax.clear();
    argmax.resize(c * ho * wo, 0);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                let o = ch * ho * wo + oy * wo + ox;
                out[o] = input[best];
                argmax[o] = best as u32;
            }
        }
    }
}

pub(crate) fn maxpool_backward<T: Real>(dout: &[T], argmax: &[u32], dinput: &mut [T]) {
    dinput.iter_mut().for_each(|v| *v = T::zero());
    for (d, &i) in dout.iter().zip(argmax) {
        dinput[i as usize] = dinput[i as usize] + *d;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposed_operands() {
        // A = [[1,2],[3,4]], B = [[5,6],[7,8]]; A^T B = [[26,30],[38,44]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 2, 2, &a, (1, 2), &b, (2, 1), 0.0, &mut c, (2, 1));
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = BlockGeometry {
            cin: 2,
            hin: 5,
            win: 4,
            cout: 1,
            stride: 2,
            hout: 3,
            wout: 2,
            pool: false,
        };
        let x: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let y: Vec<f64> = (0..g.k() * g.conv_pixels()).map(|i| ((i * 3) % 5) as f64).collect();
        let mut col = Vec::new();
        im2col(&x, &g, &mut col);
        let mut back = vec![0.0; 40];
        col2im(&y, &g, &mut back);
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn maxpool_routes_gradient_to_winner() {
        let x = [1.0f64, 5.0, 2.0, 0.0, 3.0, 4.0, 9.0, 1.0];
        let (mut out, mut arg) = (Vec::new(), Vec::new());
        maxpool_forward(&x, 1, 2, 4, &mut out, &mut arg);
        assert_eq!(out, vec![5.0, 9.0]);
        let mut dx = vec![0.0; 8];
        maxpool_backward(&[1.0, 2.0], &arg, &mut dx);
        assert_eq!(dx, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }
}
