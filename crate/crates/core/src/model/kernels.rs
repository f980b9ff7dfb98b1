//! Dense row kernels. Every loop runs in a fixed order with separate multiply
//! and add, so results are reproducible bit for bit.

use crate::scalar::Scalar;

pub const LN_EPS: f64 = 1e-5;

/// `out = x · W + b` with `W` stored row-major as `x.len() × out.len()`.
#[inline]
pub fn affine<T: Scalar>(x: &[T], w: &[T], b: &[T], out: &mut [T]) {
    let n_out = out.len();
    debug_assert_eq!(w.len(), x.len() * n_out);
    let mut o0 = 0;
    while o0 + 32 <= n_out {
        affine_block::<T, 32>(x, w, b, out, o0);
        o0 += 32;
    }
    if o0 + 16 <= n_out {
        affine_block::<T, 16>(x, w, b, out, o0);
        o0 += 16;
    }
    if o0 + 8 <= n_out {
        affine_block::<T, 8>(x, w, b, out, o0);
        o0 += 8;
    }
    for o in o0..n_out {
        let mut acc = b[o];
        for (i, &xi) in x.iter().enumerate() {
            acc += xi * w[i * n_out + o];
        }
        out[o] = acc;
    }
}

/// Outputs `o0..o0 + B` of [`affine`], accumulated in registers. Each output
/// still sums `b + x_0 w_0 + x_1 w_1 + ...` in input order.
#[inline(always)]
fn affine_block<T: Scalar, const B: usize>(x: &[T], w: &[T], b: &[T], out: &mut [T], o0: usize) {
    let n_out = out.len();
    let mut acc: [T; B] = b[o0..o0 + B].try_into().unwrap();
    for (i, &xi) in x.iter().enumerate() {
        let start = i * n_out + o0;
        let wr: &[T; B] = w[start..start + B].try_into().unwrap();
        for k in 0..B {
            acc[k] += xi * wr[k];
        }
    }
    out[o0..o0 + B].copy_from_slice(&acc);
}

/// `y += a · x`, elementwise.
#[inline(always)]
pub fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    let n = y.len().min(x.len());
    let (x, y) = (&x[..n], &mut y[..n]);
    let mut xc = x.chunks_exact(8);
    let mut yc = y.chunks_exact_mut(8);
    for (xs, ys) in (&mut xc).zip(&mut yc) {
        let xs: &[T; 8] = xs.try_into().unwrap();
        let ys: &mut [T; 8] = ys.try_into().unwrap();
        for k in 0..8 {
            ys[k] += a * xs[k];
        }
    }
    for (yv, &xv) in yc.into_remainder().iter_mut().zip(xc.remainder()) {
        *yv += a * xv;
    }
}

/// Accumulates gradients of [`affine`]: `dW += xᵀ dy`, `db += dy`, and
/// `dx += W dy` when `dx` is given.
#[inline]
pub fn affine_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    let n_out = dy.len();
    for (d, &g) in db.iter_mut().zip(dy) {
        *d += g;
    }
    for (&xi, row) in x.iter().zip(dw.chunks_exact_mut(n_out)) {
        axpy(xi, dy, row);
    }
    if let Some(dx) = dx {
        for (d, row) in dx.iter_mut().zip(w.chunks_exact(n_out)) {
            *d += dot(row, dy);
        }
    }
}

/// Inner product accumulated in eight fixed lanes, summed pairwise at the end.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [T::zero(); 8];
    let mut ac = a.chunks_exact(8);
    let mut bc = b.chunks_exact(8);
    for (xs, ys) in (&mut ac).zip(&mut bc) {
        let xs: &[T; 8] = xs.try_into().unwrap();
        let ys: &[T; 8] = ys.try_into().unwrap();
        for k in 0..8 {
            lanes[k] += xs[k] * ys[k];
        }
    }
    for (k, (&x, &y)) in ac.remainder().iter().zip(bc.remainder()).enumerate() {
        lanes[k] += x * y;
    }
    let quads = [lanes[0] + lanes[4], lanes[1] + lanes[5], lanes[2] + lanes[6], lanes[3] + lanes[7]];
    (quads[0] + quads[2]) + (quads[1] + quads[3])
}

/// Layer normalization. Writes the normalized input to `xhat`, the scaled and
/// shifted result to `out`, and returns the inverse standard deviation.
#[inline]
pub fn layer_norm<T: Scalar>(x: &[T], gain: &[T], bias: &[T], xhat: &mut [T], out: &mut [T]) -> T {
    let n = T::lit(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    let mut var = T::zero();
    for &v in x {
        let d = v - mean;
        var += d * d;
    }
    var /= n;
    let inv = T::one() / (var + T::lit(LN_EPS)).sqrt();
    for i in 0..x.len() {
        xhat[i] = (x[i] - mean) * inv;
        out[i] = xhat[i] * gain[i] + bias[i];
    }
    inv
}

/// Gradient of [`layer_norm`]; accumulates into `dgain`, `dbias` and `dx`.
#[inline]
pub fn layer_norm_backward<T: Scalar>(
    xhat: &[T],
    inv: T,
    gain: &[T],
    dy: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
    dx: &mut [T],
) {
    let n = T::lit(xhat.len() as f64);
    let mut mean_d = T::zero();
    let mut mean_dx = T::zero();
    for i in 0..xhat.len() {
        dgain[i] += dy[i] * xhat[i];
        dbias[i] += dy[i];
        let dxh = dy[i] * gain[i];
        mean_d += dxh;
        mean_dx += dxh * xhat[i];
    }
    mean_d /= n;
    mean_dx /= n;
    for i in 0..xhat.len() {
        let dxh = dy[i] * gain[i];
        dx[i] += inv * (dxh - mean_d - xhat[i] * mean_dx);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `tanh` through one exponential; cheaper than the library routine and
/// equally reproducible.
#[inline]
fn tanh_exp<T: Scalar>(u: T) -> T {
    let e = (T::lit(-2.0) * u.abs()).exp_det();
    let t = (T::one() - e) / (T::one() + e);
    if u < T::zero() {
        -t
    } else {
        t
    }
}

/// Tanh approximation of GELU.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let inner = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    T::lit(0.5) * x * (T::one() + tanh_exp(inner))
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let t = tanh_exp(c * (x + a * x * x * x));
    let half = T::lit(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
}

/// In-place numerically stable softmax.
#[inline]
pub fn softmax_in_place<T: Scalar>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp_det();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Masked attention weights for one query: softmax over `scale · q·k_n` for
/// the first `visible` keys (row-major `keys`, stride `q.len()`).
pub fn attention_weights<T: Scalar>(q: &[T], keys: &[T], visible: usize, scale: T, out: &mut Vec<T>) {
    let dh = q.len();
    out.clear();
    out.extend((0..visible).map(|n| scale * dot(q, &keys[n * dh..(n + 1) * dh])));
    softmax_in_place(out);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_equal_logits_uniform() {
        let mut v = vec![0.3f64; 255];
        softmax_in_place(&mut v);
        assert!(v.iter().all(|&p| (p - 1.0 / 255.0).abs() < 1e-15));
    }

    #[test]
    fn gelu_derivative_matches_difference_quotient() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_backward_matches_difference_quotient() {
        let x = [0.3f64, -1.2, 2.0, 0.7];
        let g = [1.1, 0.9, -0.5, 2.0];
        let b = [0.1, 0.0, -0.2, 0.3];
        let w = [0.7, -0.3, 0.25, 1.5];
        let f = |x: &[f64]| {
            let mut xh = [0.0; 4];
            let mut y = [0.0; 4];
            layer_norm(x, &g, &b, &mut xh, &mut y);
            dot(&y, &w)
        };
        let mut xh = [0.0; 4];
        let mut y = [0.0; 4];
        let inv = layer_norm(&x, &g, &b, &mut xh, &mut y);
        let (mut dg, mut db, mut dx) = ([0.0; 4], [0.0; 4], [0.0; 4]);
        layer_norm_backward(&xh, inv, &g, &w, &mut dg, &mut db, &mut dx);
        for i in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += 1e-6;
            xm[i] -= 1e-6;
            let fd = (f(&xp) - f(&xm)) / 2e-6;
            assert!((fd - dx[i]).abs() < 1e-7, "{i}: {fd} vs {}", dx[i]);
        }
    }

    #[test]
    fn constant_projections_give_uniform_attention() {
        let q = [0.5f64, -1.0];
        let keys = [1.0, 2.0, 1.0, 2.0, 1.0, 2.0];
        let mut w = Vec::new();
        attention_weights(&q, &keys, 3, 1.0, &mut w);
        assert_eq!(w.len(), 3);
        assert!(w.iter().all(|&a| (a - 1.0 / 3.0).abs() < 1e-15));
        attention_weights(&q, &keys, 1, 1.0, &mut w);
        assert_eq!(w, vec![1.0]);
    }
}
