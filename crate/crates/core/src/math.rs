//! Scalar math on top of `libm` so results are identical with and without `std`.

pub const LN_2: f64 = core::f64::consts::LN_2;
/// `0.5 * ln(2π)`
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub fn atanh(x: f64) -> f64 {
    libm::atanh(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn powi(x: f64, n: i32) -> f64 {
    libm::pow(x, n as f64)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        exp(x)
    } else {
        x.max(0.0) + ln_1p(exp(-x.abs()))
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// `ln(1 - tanh(u)^2)` without cancellation for large `|u|`.
#[inline]
pub fn log_tanh_jacobian(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ln(xs.iter().map(|&x| exp(x - m)).sum::<f64>())
}

/// Softmax of `xs` into `out`.
pub fn softmax_into(xs: &[f64], out: &mut [f64]) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = exp(x - m);
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

pub fn softmax(xs: &[f64]) -> alloc::vec::Vec<f64> {
    let mut out = alloc::vec![0.0; xs.len()];
    softmax_into(xs, &mut out);
    out
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn norm(xs: &[f64]) -> f64 {
    sqrt(xs.iter().map(|x| x * x).sum())
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}
