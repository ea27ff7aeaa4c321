use super::qpsk_alphabet;
use super::FrameRealization;
use crate::{CMat, C64};
use ndarray::ArrayView2;

/// Point estimates of the unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    pub g: CMat,
    pub f: CMat,
    pub h: CMat,
    /// Data block only, `K × T_d`.
    pub x_d: CMat,
}

/// Normalized errors of one estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mse_g: f64,
    pub mse_f: f64,
    pub mse_h: f64,
    /// `None` when the frame has no data block.
    pub mse_xd: Option<f64>,
    /// `None` when the frame has no data block or the alphabet is not QPSK.
    pub ser: Option<f64>,
    pub iterations: usize,
}

impl Metrics {
    pub fn mse_g_db(&self) -> f64 {
        to_db(self.mse_g)
    }
    pub fn mse_f_db(&self) -> f64 {
        to_db(self.mse_f)
    }
    pub fn mse_h_db(&self) -> f64 {
        to_db(self.mse_h)
    }
    pub fn mse_xd_db(&self) -> Option<f64> {
        self.mse_xd.map(to_db)
    }
}

pub fn to_db(v: f64) -> f64 {
    10.0 * v.log10()
}

/// Result of removing the per-element scale ambiguity between `G` and `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguityResolution {
    pub g: CMat,
    pub f: CMat,
    pub alpha: Vec<C64>,
    /// RIS indices whose estimated `G` column was zero (scale left at 1).
    pub degenerate: Vec<usize>,
}

/// Rescale column `n` of `G_hat` by the least-squares factor
/// `α_n = ĝ_nᴴ g_n / ĝ_nᴴ ĝ_n` and row `n` of `F_hat` by `1/α_n`.
pub fn resolve_diagonal_ambiguity(
    g_hat: &CMat,
    f_hat: &CMat,
    g_true: &CMat,
    f_true: &CMat,
) -> AmbiguityResolution {
    debug_assert_eq!(g_hat.dim(), g_true.dim());
    debug_assert_eq!(f_hat.dim(), f_true.dim());
    let n = g_hat.ncols();
    let mut g = g_hat.clone();
    let mut f = f_hat.clone();
    let mut alpha = Vec::with_capacity(n);
    let mut degenerate = Vec::new();
    for col in 0..n {
        let est = g_hat.column(col);
        let truth = g_true.column(col);
        let energy: f64 = est.iter().map(|v| v.norm_sqr()).sum();
        let a = if energy > 0.0 {
            let corr: C64 = est.iter().zip(truth.iter()).map(|(e, t)| e.conj() * t).sum();
            corr / energy
        } else {
            degenerate.push(col);
            C64::new(1.0, 0.0)
        };
        // Zero alpha keeps the estimate.
        let a = if a.norm_sqr() > 0.0 { a } else { C64::new(1.0, 0.0) };
        g.column_mut(col).mapv_inplace(|v| v * a);
        f.row_mut(col).mapv_inplace(|v| v / a);
        alpha.push(a);
    }
    AmbiguityResolution {
        g,
        f,
        alpha,
        degenerate,
    }
}

/// `‖est − truth‖²_F / #entries`.
pub fn normalized_mse(est: ArrayView2<'_, C64>, truth: ArrayView2<'_, C64>) -> f64 {
    assert_eq!(est.dim(), truth.dim(), "shape mismatch in mse");
    if truth.is_empty() {
        return f64::NAN;
    }
    let sum: f64 = est
        .iter()
        .zip(truth.iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    sum / truth.len() as f64
}

/// Nearest-point QPSK decisions.
pub fn hard_decide_qpsk(x: ArrayView2<'_, C64>) -> CMat {
    let a = std::f64::consts::FRAC_1_SQRT_2;
    x.mapv(|v| {
        C64::new(
            if v.re >= 0.0 { a } else { -a },
            if v.im >= 0.0 { a } else { -a },
        )
    })
}

/// Fraction of mismatched symbols.
pub fn ser_metric(decided: ArrayView2<'_, C64>, truth: ArrayView2<'_, C64>) -> f64 {
    assert_eq!(decided.dim(), truth.dim(), "shape mismatch in ser");
    if truth.is_empty() {
        return f64::NAN;
    }
    let alphabet = qpsk_alphabet();
    let nearest = |v: &C64| {
        alphabet
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - v).norm_sqr().total_cmp(&(b.1 - v).norm_sqr()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    };
    let wrong = decided
        .iter()
        .zip(truth.iter())
        .filter(|(d, t)| nearest(d) != nearest(t))
        .count();
    wrong as f64 / truth.len() as f64
}

/// Score estimates against the realization. `G`/`F` must already be
/// ambiguity-resolved; see [`resolve_diagonal_ambiguity`].
pub fn mse_metrics(
    est: &Estimates,
    truth: &FrameRealization,
    qpsk: bool,
    iterations: usize,
) -> Metrics {
    let x_d = truth.x_data();
    let has_data = x_d.ncols() > 0;
    let mse_xd = has_data.then(|| normalized_mse(est.x_d.view(), x_d));
    let ser = (has_data && qpsk)
        .then(|| ser_metric(hard_decide_qpsk(est.x_d.view()).view(), x_d));
    Metrics {
        mse_g: normalized_mse(est.g.view(), truth.g.view()),
        mse_f: normalized_mse(est.f.view(), truth.f.view()),
        mse_h: normalized_mse(est.h.view(), truth.h.view()),
        mse_xd,
        ser,
        iterations,
    }
}

/// Resolve the `G`/`F` ambiguity against the truth and score.
pub fn score(est: &Estimates, truth: &FrameRealization, qpsk: bool, iterations: usize) -> Metrics {
    let res = resolve_diagonal_ambiguity(&est.g, &est.f, &truth.g, &truth.f);
    let resolved = Estimates {
        g: res.g,
        f: res.f,
        h: est.h.clone(),
        x_d: est.x_d.clone(),
    };
    mse_metrics(&resolved, truth, qpsk, iterations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use rand::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> CMat {
        let mut rng = stream_rng(seed, Stream::Init);
        CMat::from_shape_simple_fn((rows, cols), || {
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    #[test]
    fn injected_ambiguity_is_removed() {
        let g = random(6, 4, 1);
        let f = random(4, 3, 2);
        let d: Vec<C64> = (0..4).map(|i| C64::new(1.0 + i as f64, 0.5 - i as f64)).collect();
        let mut g_hat = g.clone();
        let mut f_hat = f.clone();
        for n in 0..4 {
            g_hat.column_mut(n).mapv_inplace(|v| v * d[n]);
            f_hat.row_mut(n).mapv_inplace(|v| v / d[n]);
        }
        let r = resolve_diagonal_ambiguity(&g_hat, &f_hat, &g, &f);
        assert!(normalized_mse(r.g.view(), g.view()) < 1e-28);
        assert!(normalized_mse(r.f.view(), f.view()) < 1e-28);
        assert!(r.degenerate.is_empty());
    }

    #[test]
    fn unit_scales_are_identity() {
        let g = random(5, 3, 3);
        let f = random(3, 2, 4);
        let r = resolve_diagonal_ambiguity(&g, &f, &g, &f);
        for a in &r.alpha {
            assert!((a - C64::new(1.0, 0.0)).norm() < 1e-14);
        }
        assert!(normalized_mse(r.g.view(), g.view()) < 1e-28);
    }

    #[test]
    fn alpha_minimizes_column_error_on_grid() {
        let g = random(3, 1, 5);
        let g_hat = random(3, 1, 6);
        let f = random(1, 2, 7);
        let r = resolve_diagonal_ambiguity(&g_hat, &f, &g, &f);
        let err = |a: C64| -> f64 {
            g_hat.column(0).iter().zip(g.column(0)).map(|(e, t)| (a * e - t).norm_sqr()).sum()
        };
        let best = err(r.alpha[0]);
        let mut grid_best = f64::INFINITY;
        let steps = 400;
        for i in 0..=steps {
            for j in 0..=steps {
                let a = C64::new(-4.0 + 8.0 * i as f64 / steps as f64, -4.0 + 8.0 * j as f64 / steps as f64);
                grid_best = grid_best.min(err(a));
            }
        }
        assert!(best <= grid_best + 1e-12, "{best} vs grid {grid_best}");
        assert!(grid_best - best < 1e-3);
    }

    #[test]
    fn zero_column_is_flagged() {
        let g = random(4, 2, 8);
        let f = random(2, 2, 9);
        let mut g_hat = g.clone();
        g_hat.column_mut(1).fill(C64::new(0.0, 0.0));
        let r = resolve_diagonal_ambiguity(&g_hat, &f, &g, &f);
        assert_eq!(r.degenerate, vec![1]);
        assert_eq!(r.alpha[1], C64::new(1.0, 0.0));
        assert_eq!(r.g.column(1), g_hat.column(1));
        assert_eq!(r.f.row(1), f.row(1));
    }

    #[test]
    fn mse_simple_cases() {
        let t = random(3, 3, 1);
        assert_eq!(normalized_mse(t.view(), t.view()), 0.0);
        let one = CMat::from_elem((1, 1), C64::new(1.0, 0.0));
        let zero = CMat::zeros((1, 1));
        assert_eq!(normalized_mse(zero.view(), one.view()), 1.0);
    }

    #[test]
    fn ser_counting() {
        let a = qpsk_alphabet();
        let truth = CMat::from_shape_fn((2, 5), |(i, j)| a[(i + j) % 4]);
        assert_eq!(ser_metric(truth.view(), truth.view()), 0.0);
        let neg = truth.mapv(|v| -v);
        assert_eq!(ser_metric(neg.view(), truth.view()), 1.0);
        let mut one_off = truth.clone();
        one_off[[1, 3]] = -one_off[[1, 3]];
        assert_eq!(ser_metric(one_off.view(), truth.view()), 0.1);
    }

    #[test]
    fn hard_decisions_pick_nearest_point() {
        let x = CMat::from_shape_vec((1, 2), vec![C64::new(0.3, -2.0), C64::new(-0.01, 0.02)]).unwrap();
        let d = hard_decide_qpsk(x.view());
        let a = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(d[[0, 0]], C64::new(a, -a));
        assert_eq!(d[[0, 1]], C64::new(-a, a));
    }
}
