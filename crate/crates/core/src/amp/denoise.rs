//! Scalar posterior mean/variance computations.

use crate::model::qpsk_alphabet;
use crate::C64;

/// Lower bound applied to every message variance.
pub const VAR_FLOOR: f64 = 1e-12;
/// Upper bound applied to message variances (precision floor).
pub const VAR_CAP: f64 = 1e12;

/// Clamp a message variance into `[VAR_FLOOR, VAR_CAP]`; NaN passes through.
#[inline]
pub fn clamp_var(v: f64) -> f64 {
    if v < VAR_FLOOR {
        VAR_FLOOR
    } else if v > VAR_CAP {
        VAR_CAP
    } else {
        v
    }
}

/// Variance from an accumulated precision, clamped.
#[inline]
pub fn var_from_precision(prec: f64) -> f64 {
    if prec.is_nan() {
        return f64::NAN;
    }
    if prec <= 1.0 / VAR_CAP {
        VAR_CAP
    } else {
        clamp_var(1.0 / prec)
    }
}

/// Posterior of `x ~ CN(0, q)` observed as `r = x + CN(0, v)`.
///
/// Returns `(mean, var, floored)` where `floored` reports that a non-positive
/// `v` was replaced by [`VAR_FLOOR`].
#[inline]
pub fn denoise_gaussian(r: C64, v: f64, q: f64) -> (C64, f64, bool) {
    let floored = !(v > 0.0);
    let v = if floored { VAR_FLOOR } else { v };
    if q <= 0.0 {
        return (C64::new(0.0, 0.0), 0.0, floored);
    }
    let w = q / (q + v);
    (r * w, v * w, floored)
}

/// Posterior of a uniform QPSK symbol observed as `r = x + CN(0, v)`.
///
/// Returns `(mean, var, probs)` with `probs` ordered as [`qpsk_alphabet`].
pub fn denoise_qpsk(r: C64, v: f64) -> (C64, f64, [f64; 4]) {
    let v = if v > 0.0 { v } else { VAR_FLOOR };
    let alphabet = qpsk_alphabet();
    let mut logits = [0.0; 4];
    for (l, s) in logits.iter_mut().zip(alphabet.iter()) {
        *l = 2.0 * (r * s.conj()).re / v;
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs = [0.0; 4];
    let mut total = 0.0;
    for (p, l) in probs.iter_mut().zip(logits.iter()) {
        *p = (l - max).exp();
        total += *p;
    }
    let mut mean = C64::new(0.0, 0.0);
    for (p, s) in probs.iter_mut().zip(alphabet.iter()) {
        *p /= total;
        mean += s * *p;
    }
    let var = (1.0 - mean.norm_sqr()).max(0.0);
    (mean, var, probs)
}

/// Posterior of `c` from the inner plausibility `CN(r_c, v_rc)` and the
/// outer aggregate `CN(xi, v_xi)`; masked entries are exactly zero.
#[inline]
pub fn denoise_c(r_c: C64, v_rc: f64, xi: C64, v_xi: f64, s: bool) -> (C64, f64) {
    if !s {
        return (C64::new(0.0, 0.0), 0.0);
    }
    let (r, v) = fuse(r_c, v_rc, xi, v_xi);
    (r, v)
}

/// Product of two Gaussian messages as a single `(mean, var)`.
#[inline]
pub fn fuse(a: C64, va: f64, b: C64, vb: f64) -> (C64, f64) {
    let va = clamp_var(va);
    let vb = clamp_var(vb);
    let var = va * vb / (va + vb);
    let mean = (a * vb + b * va) / (va + vb);
    (mean, var)
}

/// Prior of one data symbol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DataPrior {
    Qpsk,
    Gaussian(f64),
}

/// Posterior of `x_kt` from the outer message `CN(r_x, v_rx)`, the inner
/// message `CN(gamma, v_gx)` and the prior. Pilots ignore the messages.
#[inline]
pub fn denoise_x(
    r_x: C64,
    v_rx: f64,
    gamma: C64,
    v_gx: f64,
    prior: DataPrior,
    pilot: Option<C64>,
) -> (C64, f64) {
    if let Some(p) = pilot {
        return (p, 0.0);
    }
    let (r, v) = fuse(r_x, v_rx, gamma, v_gx);
    match prior {
        DataPrior::Qpsk => {
            let (m, var, _) = denoise_qpsk(r, v);
            (m, var)
        }
        DataPrior::Gaussian(q) => {
            let (m, var, _) = denoise_gaussian(r, v, q);
            (m, var)
        }
    }
}
