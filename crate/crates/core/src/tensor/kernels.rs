//! Dense kernels shared by the eager forward pass and the autodiff tape, so
//! both produce the same bits.

/// `y[i, o] = sum_k x[i, k] * w[o, k] (+ b[o])`, with `w` stored `out x in`.
pub fn linear(x: &[f64], n: usize, input: usize, w: &[f64], out: usize, b: Option<&[f64]>) -> Vec<f64> {
    debug_assert_eq!(x.len(), n * input);
    debug_assert_eq!(w.len(), out * input);
    let mut y = vec![0.0; n * out];
    for i in 0..n {
        let xr = &x[i * input..(i + 1) * input];
        let yr = &mut y[i * out..(i + 1) * out];
        for (o, yo) in yr.iter_mut().enumerate() {
            let wr = &w[o * input..(o + 1) * input];
            let mut acc = dot(xr, wr);
            if let Some(b) = b {
                acc += b[o];
            }
            *yo = acc;
        }
    }
    y
}

/// `dx[i, k] = sum_o dy[i, o] * w[o, k]`.
pub fn linear_grad_input(dy: &[f64], n: usize, out: usize, w: &[f64], input: usize) -> Vec<f64> {
    let mut dx = vec![0.0; n * input];
    for i in 0..n {
        let dyr = &dy[i * out..(i + 1) * out];
        let dxr = &mut dx[i * input..(i + 1) * input];
        for (o, &g) in dyr.iter().enumerate() {
            if g != 0.0 {
                axpy(g, &w[o * input..(o + 1) * input], dxr);
            }
        }
    }
    dx
}

/// `dw[o, k] = sum_i dy[i, o] * x[i, k]`, accumulated in row order.
pub fn linear_grad_weight(dy: &[f64], n: usize, out: usize, x: &[f64], input: usize) -> Vec<f64> {
    let mut dw = vec![0.0; out * input];
    for i in 0..n {
        let dyr = &dy[i * out..(i + 1) * out];
        let xr = &x[i * input..(i + 1) * input];
        for (o, &g) in dyr.iter().enumerate() {
            if g != 0.0 {
                axpy(g, xr, &mut dw[o * input..(o + 1) * input]);
            }
        }
    }
    dw
}

pub fn bias_grad(dy: &[f64], n: usize, out: usize) -> Vec<f64> {
    let mut db = vec![0.0; out];
    for i in 0..n {
        for (d, g) in db.iter_mut().zip(&dy[i * out..(i + 1) * out]) {
            *d += g;
        }
    }
    db
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler vectorize; the summation
    // order is fixed, so results do not depend on the caller.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = c * 4;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in chunks * 4..a.len() {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_matches_naive() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let w = [1.0, 0.0, -1.0, 0.5, 0.5, 0.5];
        let b = [0.1, 0.2];
        let y = linear(&x, 2, 3, &w, 2, Some(&b));
        assert_eq!(y, vec![1.0 - 3.0 + 0.1, 3.0 + 0.2, 4.0 - 6.0 + 0.1, 7.5 + 0.2]);
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(0.0), std::f64::consts::LN_2);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
    }
}
