//! Overflow-safe scalar helpers for the logit link.

/// `log(1 + e^x)` without overflow for large `|x|`.
#[inline]
pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function `e^x / (1 + e^x)`.
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
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Logit loss of a single observation at linear predictor `eta`:
/// `-y * eta + log(1 + e^eta)`.
#[inline]
pub fn logit_loss(eta: f64, y: bool) -> f64 {
    if y {
        log1p_exp(-eta)
    } else {
        log1p_exp(eta)
    }
}

/// Soft hinge `h(eta; pi) = -pi * eta + log(1 + e^eta)`, the conditional
/// expectation of the logit loss when `P(Y = 1) = pi`.
#[inline]
pub fn soft_hinge(eta: f64, pi: f64) -> f64 {
    pi * log1p_exp(-eta) + (1.0 - pi) * log1p_exp(eta)
}
