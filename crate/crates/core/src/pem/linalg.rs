//! Row-major dense kernels used by the pose model. Matrix products go through
//! `matrixmultiply`; everything else is plain loops in a fixed order, so
//! results do not depend on thread count.

/// `c (+)= op(a) · op(b)` with `op(a)` of shape `m × k` and `op(b)` of shape
/// `k × n`. A transposed operand is stored row-major in its untransposed shape.
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], accumulate: bool) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every strided access within the slices.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `x · W + b` for `x` of shape `rows × fan_in`.
pub fn linear(x: &[f64], rows: usize, w: &[f64], b: &[f64], fan_in: usize, fan_out: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(rows * fan_out);
    for _ in 0..rows {
        y.extend_from_slice(b);
    }
    gemm(rows, fan_in, fan_out, x, false, w, false, &mut y, true);
    y
}

/// Backward of [`linear`]: accumulates `dW`, `db` and returns `dx` when asked.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    x: &[f64],
    dy: &[f64],
    rows: usize,
    w: &[f64],
    fan_in: usize,
    fan_out: usize,
    dw: &mut [f64],
    db: &mut [f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    gemm(fan_in, rows, fan_out, x, true, dy, false, dw, true);
    for row in dy.chunks_exact(fan_out) {
        for (acc, g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    want_dx.then(|| {
        let mut dx = vec![0.0; rows * fan_in];
        gemm(rows, fan_out, fan_in, dy, false, w, true, &mut dx, false);
        dx
    })
}

pub fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Zeroes `grad` where the pre-activation was not positive.
pub fn relu_backward_in_place(pre: &[f64], grad: &mut [f64]) {
    for (g, &p) in grad.iter_mut().zip(pre) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Per-row statistics kept for the layer-norm backward pass.
#[derive(Debug, Clone, Default)]
pub struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub fn layer_norm(x: &[f64], dim: usize, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, LayerNormCache) {
    let rows = x.len() / dim;
    let mut y = vec![0.0; x.len()];
    let mut cache = LayerNormCache { xhat: vec![0.0; x.len()], rstd: vec![0.0; rows] };
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let mean = row.iter().sum::<f64>() / dim as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
        let rstd = 1.0 / (var + LN_EPS).sqrt();
        cache.rstd[r] = rstd;
        for c in 0..dim {
            let xh = (row[c] - mean) * rstd;
            cache.xhat[r * dim + c] = xh;
            y[r * dim + c] = xh * gamma[c] + beta[c];
        }
    }
    (y, cache)
}

pub fn layer_norm_backward(
    dy: &[f64],
    dim: usize,
    gamma: &[f64],
    cache: &LayerNormCache,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let rows = dy.len() / dim;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; dim];
    for r in 0..rows {
        let xhat = &cache.xhat[r * dim..(r + 1) * dim];
        let g = &dy[r * dim..(r + 1) * dim];
        let (mut mean_d, mut mean_dx) = (0.0, 0.0);
        for c in 0..dim {
            dgamma[c] += g[c] * xhat[c];
            dbeta[c] += g[c];
            dxhat[c] = g[c] * gamma[c];
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xhat[c];
        }
        mean_d /= dim as f64;
        mean_dx /= dim as f64;
        let rstd = cache.rstd[r];
        for c in 0..dim {
            dx[r * dim + c] = rstd * (dxhat[c] - mean_d - xhat[c] * mean_dx);
        }
    }
    dx
}

pub fn add_in_place(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}
