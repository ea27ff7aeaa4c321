use super::denoise::{clamp_var, denoise_c, denoise_x};
use super::outer::{abs2, conj_t, posterior_gaussian, pseudo_obs, StepControl};
use super::run::damp_assign;
use super::{AmpState, Observation, PriorSpec};
use crate::{CMat, RMat};
use ndarray::{s, Zip};

/// Bilinear AMP pass on `C = S ⊙ (F X)` with output channel `CN(c; ξ̂, v^ξ)`.
///
/// Uses the aggregates `ξ̂/v^ξ` and `r̂^x/v^rx` left by [`super::outer_step`].
/// Refreshes `r̂^c/v^rc`, the posterior of `C`, `η̂/v^η`, `q̂^f`, `γ̂/v^γ`,
/// and the posteriors of `F` and the data columns of `X`. Entries with
/// `s = 0` carry zero residual and do not influence `F` or `X`.
pub fn inner_step(
    state: &mut AmpState,
    obs: &Observation<'_>,
    priors: &PriorSpec,
    ctl: &StepControl,
) {
    let t_p = obs.t_p();
    let af2 = abs2(&state.f_hat);
    let ax2 = abs2(&state.x_hat);

    let vbar = af2.dot(&state.v_x) + state.v_f.dot(&ax2);
    let r_bar = state.f_hat.dot(&state.x_hat);
    let v_full = state.v_f.dot(&state.v_x) + &vbar;

    let shape = r_bar.dim();
    let mut r_c = CMat::zeros(shape);
    let mut v_rc = RMat::zeros(shape);
    let mut c_hat = CMat::zeros(shape);
    let mut v_c = RMat::zeros(shape);
    let mut eta_new = CMat::zeros(shape);
    let mut veta_new = RMat::zeros(shape);
    for ((n, t), &on) in obs.s.indexed_iter() {
        if !on {
            continue;
        }
        let vrc = clamp_var(v_full[[n, t]]);
        let rc = r_bar[[n, t]] - state.eta_hat[[n, t]] * vbar[[n, t]];
        let (cm, cv) = denoise_c(rc, vrc, state.xi[[n, t]], state.v_xi[[n, t]], true);
        r_c[[n, t]] = rc;
        v_rc[[n, t]] = vrc;
        c_hat[[n, t]] = cm;
        v_c[[n, t]] = cv;
        eta_new[[n, t]] = (cm - rc) / vrc;
        veta_new[[n, t]] = (1.0 - cv / vrc) / vrc;
    }
    state.r_c = r_c;
    state.v_rc = v_rc;
    state.c_hat = c_hat;
    state.v_c = v_c;
    damp_assign(&mut state.eta_hat, eta_new, ctl.beta_residual);
    damp_assign(&mut state.v_eta, veta_new, ctl.beta_residual);
    let eta = &state.eta_hat;
    let v_eta = &state.v_eta;

    // Pseudo-observations of F.
    let prec = v_eta.dot(&ax2.t());
    let onsager = v_eta.dot(&state.v_x.t());
    let corr = eta.dot(&conj_t(&state.x_hat));
    let (q_f, v_qf) = pseudo_obs(&state.f_hat, &prec, &onsager, &corr);

    // Inner message toward X.
    let prec = af2.t().dot(v_eta);
    let onsager = state.v_f.t().dot(v_eta);
    let corr = conj_t(&state.f_hat).dot(eta);
    let (gamma, v_gamma) = pseudo_obs(&state.x_hat, &prec, &onsager, &corr);
    state.q_f = q_f;
    state.v_qf = v_qf;
    state.gamma = gamma;
    state.v_gamma = v_gamma;

    let (f_new, vf_new) = posterior_gaussian(&state.q_f, &state.v_qf, priors.q_f);
    damp_assign(&mut state.f_hat, f_new, ctl.beta_factor);
    damp_assign(&mut state.v_f, vf_new, ctl.beta_factor);

    // Data columns of X; pilots stay clamped.
    let (k, t) = state.x_hat.dim();
    let mut x_new = CMat::zeros((k, t - t_p));
    let mut vx_new = RMat::zeros((k, t - t_p));
    Zip::indexed(&mut x_new)
        .and(&mut vx_new)
        .for_each(|(kk, td), xm, xv| {
            let tt = td + t_p;
            let (m, v) = denoise_x(
                state.r_x[[kk, tt]],
                state.v_rx[[kk, tt]],
                state.gamma[[kk, tt]],
                state.v_gamma[[kk, tt]],
                priors.data,
                None,
            );
            *xm = m;
            *xv = v;
        });
    let mut x_data = state.x_hat.slice_mut(s![.., t_p..]);
    let mut vx_data = state.v_x.slice_mut(s![.., t_p..]);
    damp_view(&mut x_data, &x_new, ctl.beta_factor);
    damp_view(&mut vx_data, &vx_new, ctl.beta_factor);
}

fn damp_view<T>(dst: &mut ndarray::ArrayViewMut2<'_, T>, new: &ndarray::Array2<T>, beta: f64)
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
{
    if beta >= 1.0 {
        dst.assign(new);
        return;
    }
    Zip::from(dst)
        .and(new)
        .for_each(|d, &n| *d = *d * (1.0 - beta) + n * beta);
}
