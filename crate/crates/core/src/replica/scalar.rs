use statrs::function::erf::erfc;
use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

/// Default Gauss–Hermite order for the QPSK integral.
pub const GH_NODES: usize = 61;

/// Standard normal tail probability `Q(x) = erfc(x/√2)/2`.
pub fn qfunc(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Nodes and weights of `n`-point Gauss–Hermite quadrature for the weight
/// `e^{-x²}`, found by Newton iteration on the orthonormal recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let pim4 = PI.powf(-0.25);
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / j as f64).sqrt() * p2 - ((j as f64 - 1.0) / j as f64).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Probabilists' nodes/weights: `E f(ζ) ≈ Σ w_i f(ζ_i)`, `ζ ~ N(0, 1)`.
fn standard_normal_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let (x, w) = gauss_hermite(GH_NODES);
        let norm = PI.sqrt();
        (
            x.iter().map(|v| v * SQRT_2).collect(),
            w.iter().map(|v| v / norm).collect(),
        )
    })
}

/// MMSE of a zero-mean Gaussian scalar of power `q` seen through an AWGN
/// channel of effective SNR `m_tilde`.
pub fn scalar_mmse_gaussian(m_tilde: f64, q: f64) -> f64 {
    if m_tilde.is_infinite() {
        return 0.0;
    }
    q / (1.0 + q * m_tilde)
}

/// MMSE of a unit-power QPSK symbol: `1 − E tanh(m̃ + √m̃ ζ)`.
pub fn scalar_mmse_qpsk(m_tilde: f64) -> f64 {
    if m_tilde <= 0.0 {
        return 1.0;
    }
    if m_tilde.is_infinite() {
        return 0.0;
    }
    let (nodes, weights) = standard_normal_rule();
    let s = m_tilde.sqrt();
    // 1 − tanh(u) = 2 / (1 + e^{2u}).
    let v: f64 = nodes
        .iter()
        .zip(weights)
        .map(|(z, w)| w * 2.0 / (1.0 + (2.0 * (m_tilde + s * z)).exp()))
        .sum();
    v.clamp(0.0, 1.0)
}

/// Asymptotic QPSK symbol error rate `2Q(√m̃) − Q(√m̃)²`.
pub fn ser_asymptotic(m_tilde: f64) -> f64 {
    let q = qfunc(m_tilde.max(0.0).sqrt());
    2.0 * q - q * q
}
