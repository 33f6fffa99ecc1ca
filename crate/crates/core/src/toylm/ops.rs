//! Row-level kernels shared by inference and training. All math is f64.

pub(crate) const LN_EPS: f64 = 1e-5;

/// `out = (x - mean) * rstd * gain + bias`; returns `(mean, rstd)`.
pub(crate) fn layernorm_row(x: &[f64], gain: &[f64], bias: &[f64], out: &mut [f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    for i in 0..x.len() {
        out[i] = (x[i] - mean) * rstd * gain[i] + bias[i];
    }
    (mean, rstd)
}

/// Accumulates gradients of one layer-norm row.
#[allow(clippy::too_many_arguments)]
pub(crate) fn layernorm_row_backward(
    x: &[f64],
    mean: f64,
    rstd: f64,
    gain: &[f64],
    dout: &[f64],
    dx: &mut [f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) {
    let n = x.len() as f64;
    let mut mean_dnorm = 0.0;
    let mut mean_dnorm_norm = 0.0;
    for i in 0..x.len() {
        let norm = (x[i] - mean) * rstd;
        let dnorm = dout[i] * gain[i];
        mean_dnorm += dnorm;
        mean_dnorm_norm += dnorm * norm;
    }
    mean_dnorm /= n;
    mean_dnorm_norm /= n;
    for i in 0..x.len() {
        let norm = (x[i] - mean) * rstd;
        let dnorm = dout[i] * gain[i];
        dx[i] += (dnorm - mean_dnorm - norm * mean_dnorm_norm) * rstd;
        dgain[i] += dout[i] * norm;
        dbias[i] += dout[i];
    }
}

/// `out = x W + b` for one row, `W` stored `[in, out]`.
pub(crate) fn linear_row(x: &[f64], w: &[f64], b: Option<&[f64]>, out: &mut [f64]) {
    let o = out.len();
    match b {
        Some(b) => out.copy_from_slice(b),
        None => out.fill(0.0),
    }
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let wi = &w[i * o..(i + 1) * o];
        for (oj, &wij) in out.iter_mut().zip(wi) {
            *oj += xi * wij;
        }
    }
}

/// Backward of [`linear_row`] for one row: accumulates into `dx`, `dw`, `db`.
pub(crate) fn linear_row_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    dx: &mut [f64],
    dw: &mut [f64],
    db: Option<&mut [f64]>,
) {
    let o = dout.len();
    for (i, &xi) in x.iter().enumerate() {
        let wi = &w[i * o..(i + 1) * o];
        let dwi = &mut dw[i * o..(i + 1) * o];
        let mut s = 0.0;
        for j in 0..o {
            s += dout[j] * wi[j];
            dwi[j] += xi * dout[j];
        }
        dx[i] += s;
    }
    if let Some(db) = db {
        for (b, &g) in db.iter_mut().zip(dout) {
            *b += g;
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let cube = 0.044715 * x * x * x;
    let arg = GELU_C * (x + cube);
    let th = arg.tanh();
    let sech2 = 1.0 - th * th;
    0.5 * (1.0 + th) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// In-place numerically stable softmax.
pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// `log softmax(logits)[target]`.
pub(crate) fn log_softmax_at(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
    logits[target] - lse
}
