use super::denoise::{denoise_gaussian, denoise_x, VAR_CAP};
use super::outer::{outer_step, StepControl};
use super::run::{damp_assign, estimates_of};
use super::{AmpOptions, AmpState, DataPrior, Observation, PriorSpec};
use crate::model::{hard_decide_qpsk, Estimates};
use crate::{CMat, Error, RMat, Result, C64};
use nalgebra::DMatrix;
use ndarray::Zip;

/// Output of the two-stage baseline.
#[derive(Debug, Clone)]
pub struct BaselineOutput {
    pub estimates: Estimates,
    pub x_hard: Option<CMat>,
    /// Iterations of the bilinear stage.
    pub iterations: usize,
    pub converged: bool,
    pub finite: bool,
}

/// Stage 1 runs bilinear AMP on `Y = [G H] [C; X] + W` with an independent
/// prior `CN(0, s K q_f q_x)` on each entry of `C`; stage 2 regresses the
/// unmasked entries of each row of `Ĉ` on `X̂` (see [`lmmse_rows`]).
pub fn bigamp_lmmse_baseline(
    obs: &Observation<'_>,
    priors: &PriorSpec,
    opts: &AmpOptions,
) -> Result<BaselineOutput> {
    opts.validate()?;
    let t_p = obs.t_p();
    let c_var = obs.k() as f64 * priors.q_f * priors.data_var();
    let mut state = AmpState::init(obs, priors, &opts.init, opts.direct_link);
    let mut last_finite = state.clone();
    let mut z_prev = state.z_estimate();
    let mut iterations = 0;
    let mut converged = false;
    let mut finite = true;

    for it in 1..=opts.max_iters {
        let damped = |on: bool| if state.residuals_ready && on { opts.beta } else { 1.0 };
        let ctl = StepControl {
            beta_residual: damped(opts.damp.outer_residuals),
            beta_factor: damped(opts.damp.factors),
            direct_link: opts.direct_link,
        };
        outer_step(&mut state, obs, priors, &ctl);
        state.residuals_ready = true;

        let mut c_new = CMat::zeros(state.c_hat.dim());
        let mut vc_new = RMat::zeros(state.c_hat.dim());
        Zip::from(&mut c_new)
            .and(&mut vc_new)
            .and(&state.xi)
            .and(&state.v_xi)
            .and(&obs.s)
            .for_each(|c, v, &xi, &vxi, &on| {
                if on {
                    let (m, var, _) = denoise_gaussian(xi, vxi, c_var);
                    *c = m;
                    *v = var;
                }
            });
        damp_assign(&mut state.c_hat, c_new, ctl.beta_factor);
        damp_assign(&mut state.v_c, vc_new, ctl.beta_factor);

        let (k, t) = state.x_hat.dim();
        for kk in 0..k {
            for tt in t_p..t {
                let (m, v) = denoise_x(
                    state.r_x[[kk, tt]],
                    state.v_rx[[kk, tt]],
                    C64::new(0.0, 0.0),
                    VAR_CAP,
                    priors.data,
                    None,
                );
                let b = ctl.beta_factor;
                state.x_hat[[kk, tt]] = state.x_hat[[kk, tt]] * (1.0 - b) + m * b;
                state.v_x[[kk, tt]] = state.v_x[[kk, tt]] * (1.0 - b) + v * b;
            }
        }
        iterations = it;
        if !state.is_finite() {
            finite = false;
            state = last_finite;
            break;
        }
        let z = state.z_estimate();
        let diff: f64 = Zip::from(&z).and(&z_prev).fold(0.0, |a, &x, &y| a + (x - y).norm_sqr());
        let norm: f64 = z.iter().map(|v| v.norm_sqr()).sum();
        z_prev = z;
        last_finite.clone_from(&state);
        if diff <= opts.tol * norm {
            converged = true;
            break;
        }
    }

    let mut estimates = estimates_of(&state, t_p);
    let active = obs.s.iter().filter(|&&on| on).count();
    let noise = if active > 0 {
        Zip::from(&state.v_c)
            .and(&obs.s)
            .fold(0.0, |a, &v, &on| if on { a + v } else { a })
            / active as f64
    } else {
        0.0
    };
    let rows = lmmse_rows(&state.c_hat, &obs.s.to_owned(), &state.x_hat, noise, priors.q_f)?;
    estimates.f = rows.f;
    let x_hard = (priors.data == DataPrior::Qpsk).then(|| hard_decide_qpsk(estimates.x_d.view()));
    Ok(BaselineOutput {
        estimates,
        x_hard,
        iterations,
        converged,
        finite,
    })
}

/// Row-wise linear MMSE estimate of `F` from `C ≈ S ⊙ (F X)`.
#[derive(Debug, Clone)]
pub struct LmmseRows {
    pub f: CMat,
    /// Trace of each row's posterior covariance.
    pub error_trace: Vec<f64>,
}

/// For each row `n` with active set `A = {t : s_nt = 1}`:
/// `f̂_nᵀ = c_{n,A} X_Aᴴ (X_A X_Aᴴ + (noise/q_f) I)⁻¹`,
/// posterior covariance `noise · (X_A X_Aᴴ + (noise/q_f) I)⁻¹`.
/// With `noise = 0` the regularizer vanishes and `X_A` must have full row rank.
pub fn lmmse_rows(
    c: &CMat,
    s: &ndarray::Array2<bool>,
    x: &CMat,
    noise: f64,
    q_f: f64,
) -> Result<LmmseRows> {
    let (n, t) = c.dim();
    let k = x.nrows();
    if s.dim() != (n, t) || x.ncols() != t {
        return Err(Error::Dimension(format!(
            "C {:?}, S {:?}, X {:?}",
            c.dim(),
            s.dim(),
            x.dim()
        )));
    }
    let mut f = CMat::zeros((n, k));
    let mut error_trace = vec![q_f * k as f64; n];
    if q_f == 0.0 {
        error_trace.fill(0.0);
        return Ok(LmmseRows { f, error_trace });
    }
    let reg = noise / q_f;
    for row in 0..n {
        let active: Vec<usize> = (0..t).filter(|&tt| s[[row, tt]]).collect();
        if active.is_empty() {
            continue;
        }
        let xa = DMatrix::from_fn(k, active.len(), |i, j| x[[i, active[j]]]);
        let ca = DMatrix::from_fn(1, active.len(), |_, j| c[[row, active[j]]]);
        let gram = &xa * xa.adjoint() + DMatrix::identity(k, k) * C64::new(reg, 0.0);
        let Some(inv) = gram.clone().try_inverse() else {
            continue;
        };
        let fr = ca * xa.adjoint() * &inv;
        for kk in 0..k {
            f[[row, kk]] = fr[(0, kk)];
        }
        error_trace[row] = (0..k).map(|i| inv[(i, i)].re).sum::<f64>() * noise;
    }
    Ok(LmmseRows { f, error_trace })
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use crate::model::{score, sigma_from_snr, ChannelEnsemble, FrameRealization, SystemConfig};
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cn(rng: &mut ChaCha8Rng, var: f64) -> C64 {
        let s = (var / 2.0).sqrt();
        let n = rand_distr::Normal::new(0.0, s).unwrap();
        C64::new(rng.sample(n), rng.sample(n))
    }

    #[test]
    fn noiseless_full_rank_rows_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let f = CMat::from_shape_fn((3, 2), |_| cn(&mut rng, 1.0));
        let x = CMat::from_shape_fn((2, 5), |_| cn(&mut rng, 1.0));
        let s = Array2::from_elem((3, 5), true);
        let out = lmmse_rows(&f.dot(&x), &s, &x, 0.0, 1.0).unwrap();
        assert!(max_abs_diff(&out.f, &f) < 1e-10);
        assert!(out.error_trace.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn single_user_closed_form() {
        let x = array![[C64::new(1.0, 0.0), C64::new(0.0, 2.0), C64::new(-1.0, 1.0)]];
        let c = array![[C64::new(0.5, 0.5), C64::new(1.0, -1.0), C64::new(3.0, 0.0)]];
        let s = array![[true, false, true]];
        let (noise, q_f) = (0.3, 2.0);
        let out = lmmse_rows(&c, &s, &x, noise, q_f).unwrap();
        let energy = x[[0, 0]].norm_sqr() + x[[0, 2]].norm_sqr();
        let corr = c[[0, 0]] * x[[0, 0]].conj() + c[[0, 2]] * x[[0, 2]].conj();
        let den = energy + noise / q_f;
        assert!((out.f[[0, 0]] - corr / den).norm() < 1e-12);
        assert!((out.error_trace[0] - noise / den).abs() < 1e-12);
    }

    #[test]
    fn empty_rows_keep_the_prior() {
        let x = array![[C64::new(1.0, 0.0), C64::new(1.0, 0.0)]];
        let c = CMat::zeros((2, 2));
        let s = array![[false, false], [true, true]];
        let out = lmmse_rows(&c, &s, &x, 0.1, 1.5).unwrap();
        assert_eq!(out.f[[0, 0]], C64::new(0.0, 0.0));
        assert_eq!(out.error_trace[0], 1.5);
    }

    #[test]
    fn error_trace_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (k, t, noise, q_f) = (2, 6, 0.5, 1.0);
        let x = CMat::from_shape_fn((k, t), |_| cn(&mut rng, 1.0));
        let s = Array2::from_elem((1, t), true);
        let draws = 20000;
        let mut sq = 0.0;
        let mut predicted = 0.0;
        for _ in 0..draws {
            let f = CMat::from_shape_fn((1, k), |_| cn(&mut rng, q_f));
            let c = f.dot(&x) + CMat::from_shape_fn((1, t), |_| cn(&mut rng, noise));
            let out = lmmse_rows(&c, &s, &x, noise, q_f).unwrap();
            sq += (&out.f - &f).iter().map(|v| v.norm_sqr()).sum::<f64>();
            predicted = out.error_trace[0];
        }
        let empirical = sq / draws as f64;
        assert!((empirical / predicted - 1.0).abs() < 0.05, "{empirical} vs {predicted}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let r = lmmse_rows(&CMat::zeros((2, 3)), &Array2::from_elem((2, 4), true), &CMat::zeros((1, 3)), 0.1, 1.0);
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn baseline_runs_and_decodes_at_high_snr() {
        let mut cfg = SystemConfig {
            m: 32,
            n: 16,
            k: 4,
            t: 60,
            t_p: 12,
            ..SystemConfig::desk()
        };
        cfg.sigma2 = sigma_from_snr(&cfg, 30.0);
        let fr = FrameRealization::generate(&cfg, &ChannelEnsemble::Iid).unwrap();
        let obs = Observation::from_realization(&fr, cfg.sigma2).unwrap();
        let out = bigamp_lmmse_baseline(&obs, &priors(), &AmpOptions { max_iters: 300, ..AmpOptions::default() }).unwrap();
        assert!(out.finite);
        assert!(out.iterations >= 1);
        let m = score(&out.estimates, &fr, true, out.iterations);
        assert!(m.mse_h.is_finite() && m.mse_f.is_finite() && m.mse_g.is_finite());
        assert!(m.ser.unwrap() < 0.05, "SER {:?}", m.ser);
    }
}
