use super::denoise::{clamp_var, denoise_gaussian, var_from_precision};
use super::run::damp_assign;
use super::{AmpState, DirectLink, Observation, PriorSpec};
use crate::{CMat, RMat, C64};
use ndarray::Zip;

/// Per-step controls shared by the outer and inner passes.
#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    /// Damping applied to residuals (1 when no previous residual exists).
    pub beta_residual: f64,
    /// Damping applied to factor posteriors.
    pub beta_factor: f64,
    pub direct_link: DirectLink,
}

pub(crate) fn abs2(a: &CMat) -> RMat {
    a.mapv(|v| v.norm_sqr())
}

pub(crate) fn conj_t(a: &CMat) -> CMat {
    a.t().mapv(|v| v.conj())
}

/// Bilinear AMP pass on `Y = [G H] [C; X] + W`.
///
/// Refreshes `p̂/v^p`, `ẑ/v^z`, `û/v^u`, the pseudo-observations `q̂^g`,
/// `q̂^h`, the aggregates `ξ̂/v^ξ` toward `C` and `r̂^x/v^rx` toward `X`, and
/// the posteriors of `G` and `H`. `C` and `X` are left untouched.
pub fn outer_step(
    state: &mut AmpState,
    obs: &Observation<'_>,
    priors: &PriorSpec,
    ctl: &StepControl,
) {
    let direct = ctl.direct_link == DirectLink::Present;
    let sigma2 = obs.sigma2;

    let ag2 = abs2(&state.g_hat);
    let ac2 = abs2(&state.c_hat);
    let ah2 = abs2(&state.h_hat);
    let ax2 = abs2(&state.x_hat);

    // Plausibilities of z.
    let mut vbar_p = ag2.dot(&state.v_c) + state.v_g.dot(&ac2);
    let mut p_bar = state.g_hat.dot(&state.c_hat);
    let mut v_p = state.v_g.dot(&state.v_c);
    if direct {
        vbar_p = vbar_p + ah2.dot(&state.v_x) + state.v_h.dot(&ax2);
        p_bar = p_bar + state.h_hat.dot(&state.x_hat);
        v_p = v_p + state.v_h.dot(&state.v_x);
    }
    v_p = v_p + &vbar_p;
    v_p.mapv_inplace(clamp_var);
    let mut p_hat = p_bar;
    Zip::from(&mut p_hat)
        .and(&state.u_hat)
        .and(&vbar_p)
        .for_each(|p, &u, &vb| *p -= u * vb);

    // Posterior of z under CN(y; z, σ²) and the scaled residuals.
    let mut z_hat = CMat::zeros(p_hat.dim());
    let mut v_z = RMat::zeros(p_hat.dim());
    let mut u_new = CMat::zeros(p_hat.dim());
    let mut vu_new = RMat::zeros(p_hat.dim());
    for ((i, j), &p) in p_hat.indexed_iter() {
        let vp = v_p[[i, j]];
        let y = obs.y[[i, j]];
        let z = (p * sigma2 + y * vp) / (sigma2 + vp);
        let vz = sigma2 * vp / (sigma2 + vp);
        z_hat[[i, j]] = z;
        v_z[[i, j]] = vz;
        u_new[[i, j]] = (z - p) / vp;
        vu_new[[i, j]] = (1.0 - vz / vp) / vp;
    }
    state.p_hat = p_hat;
    state.v_p = v_p;
    state.z_hat = z_hat;
    state.v_z = v_z;
    damp_assign(&mut state.u_hat, u_new, ctl.beta_residual);
    damp_assign(&mut state.v_u, vu_new, ctl.beta_residual);
    let u = &state.u_hat;
    let v_u = &state.v_u;

    // Pseudo-observations of G.
    let prec = v_u.dot(&ac2.t());
    let onsager = v_u.dot(&state.v_c.t());
    let corr = u.dot(&conj_t(&state.c_hat));
    let (q_g, v_qg) = pseudo_obs(&state.g_hat, &prec, &onsager, &corr);

    // Aggregate toward C.
    let prec = ag2.t().dot(v_u);
    let onsager = state.v_g.t().dot(v_u);
    let corr = conj_t(&state.g_hat).dot(u);
    let (xi, v_xi) = pseudo_obs(&state.c_hat, &prec, &onsager, &corr);

    if direct {
        let prec = v_u.dot(&ax2.t());
        let onsager = v_u.dot(&state.v_x.t());
        let corr = u.dot(&conj_t(&state.x_hat));
        let (q_h, v_qh) = pseudo_obs(&state.h_hat, &prec, &onsager, &corr);

        let prec = ah2.t().dot(v_u);
        let onsager = state.v_h.t().dot(v_u);
        let corr = conj_t(&state.h_hat).dot(u);
        let (r_x, v_rx) = pseudo_obs(&state.x_hat, &prec, &onsager, &corr);
        state.q_h = q_h;
        state.v_qh = v_qh;
        state.r_x = r_x;
        state.v_rx = v_rx;
    } else {
        state.q_h.fill(C64::new(0.0, 0.0));
        state.v_qh.fill(super::VAR_CAP);
        state.r_x.assign(&state.x_hat);
        state.v_rx.fill(super::VAR_CAP);
    }
    state.q_g = q_g;
    state.v_qg = v_qg;
    state.xi = xi;
    state.v_xi = v_xi;

    // Posteriors of G and H.
    let (g_new, vg_new) = posterior_gaussian(&state.q_g, &state.v_qg, priors.q_g);
    damp_assign(&mut state.g_hat, g_new, ctl.beta_factor);
    damp_assign(&mut state.v_g, vg_new, ctl.beta_factor);
    if direct {
        let (h_new, vh_new) = posterior_gaussian(&state.q_h, &state.v_qh, priors.q_h);
        damp_assign(&mut state.h_hat, h_new, ctl.beta_factor);
        damp_assign(&mut state.v_h, vh_new, ctl.beta_factor);
    }
}

/// `v = 1/prec`, `q̂ = â (1 − v · onsager) + v · corr`, elementwise.
pub(crate) fn pseudo_obs(est: &CMat, prec: &RMat, onsager: &RMat, corr: &CMat) -> (CMat, RMat) {
    let v = prec.mapv(var_from_precision);
    let mut q = CMat::zeros(est.dim());
    Zip::from(&mut q)
        .and(est)
        .and(&v)
        .and(onsager)
        .and(corr)
        .for_each(|q, &a, &v, &o, &c| *q = a * (1.0 - v * o) + c * v);
    (q, v)
}

pub(crate) fn posterior_gaussian(q: &CMat, v: &RMat, prior_var: f64) -> (CMat, RMat) {
    let mut mean = CMat::zeros(q.dim());
    let mut var = RMat::zeros(q.dim());
    Zip::from(&mut mean)
        .and(&mut var)
        .and(q)
        .and(v)
        .for_each(|m, vv, &r, &rv| {
            let (a, b, _) = denoise_gaussian(r, rv, prior_var);
            *m = a;
            *vv = b;
        });
    (mean, var)
}
