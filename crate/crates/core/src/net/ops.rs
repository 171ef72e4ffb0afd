use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Scalar type the network is generic over: `f32` for training, `f64` for
/// gradient checks.
pub trait Real: Float + Default + Debug + Send + Sync + AddAssign + SubAssign + MulAssign + Sum + 'static {
    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy<F: Real>(alpha: F, x: &[F], y: &mut [F]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

#[inline]
pub fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Unfolds a `[ch, n, n]` input into `[ch*9, m*m]` patch columns for a 3×3
/// kernel with stride 2 and padding 1 (`m = (n - 1) / 2 + 1`).
pub fn im2col<F: Real>(input: &[F], ch: usize, n: usize, cols: &mut Vec<F>) {
    let m = (n - 1) / 2 + 1;
    cols.clear();
    cols.resize(ch * 9 * m * m, F::zero());
    for c in 0..ch {
        let plane = &input[c * n * n..(c + 1) * n * n];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((c * 9) + ky * 3 + kx) * m * m..][..m * m];
                for oy in 0..m {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= n as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * n..(iy as usize + 1) * n];
                    for ox in 0..m {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix >= 0 && ix < n as isize {
                            row[oy * m + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates column gradients back onto the input.
pub fn col2im<F: Real>(cols: &[F], ch: usize, n: usize, out: &mut [F]) {
    let m = (n - 1) / 2 + 1;
    out.iter_mut().for_each(|v| *v = F::zero());
    for c in 0..ch {
        let plane = &mut out[c * n * n..(c + 1) * n * n];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((c * 9) + ky * 3 + kx) * m * m..][..m * m];
                for oy in 0..m {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= n as isize {
                        continue;
                    }
                    for ox in 0..m {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix >= 0 && ix < n as isize {
                            plane[iy as usize * n + ix as usize] += row[oy * m + ox];
                        }
                    }
                }
            }
        }
    }
}
