//! Exact posterior means of the data block by exhaustive QPSK enumeration,
//! for instances with at most [`MAX_UNKNOWN_SYMBOLS`] unknown symbols.

use super::Observation;
use crate::model::qpsk_alphabet;
use crate::{CMat, Error, Result, C64};
use nalgebra::DMatrix;
use ndarray::{s, Array2};

pub const MAX_UNKNOWN_SYMBOLS: usize = 8;

/// What the oracle treats as known.
#[derive(Debug, Clone, Copy)]
pub enum ChannelKnowledge<'a> {
    /// `G`, `F`, `H` all known.
    Known { g: &'a CMat, f: &'a CMat, h: &'a CMat },
    /// `F` known; `G`, `H` integrated out under their Gaussian priors.
    MarginalGh { f: &'a CMat, q_g: f64, q_h: f64 },
}

/// Posterior mean of `X_d` (`K × T_d`) under a uniform QPSK prior.
pub fn brute_force_posterior(
    obs: &Observation<'_>,
    channels: ChannelKnowledge<'_>,
) -> Result<CMat> {
    let (k, t, t_p) = (obs.k(), obs.t(), obs.t_p());
    let t_d = t - t_p;
    let unknown = k * t_d;
    if unknown > MAX_UNKNOWN_SYMBOLS {
        return Err(Error::EnumerationBudget(unknown, MAX_UNKNOWN_SYMBOLS));
    }
    let alphabet = qpsk_alphabet();
    let hypotheses = 1usize << (2 * unknown);
    let mut x = CMat::zeros((k, t));
    x.slice_mut(s![.., ..t_p]).assign(&obs.x_pilot);

    let mut log_w = Vec::with_capacity(hypotheses);
    let mut frames = Vec::with_capacity(hypotheses);
    for h in 0..hypotheses {
        for i in 0..unknown {
            let sym = alphabet[(h >> (2 * i)) & 3];
            x[[i % k, t_p + i / k]] = sym;
        }
        log_w.push(log_likelihood(obs, channels, &x)?);
        frames.push(x.slice(s![.., t_p..]).to_owned());
    }

    let mut mean = CMat::zeros((k, t_d));
    if obs.sigma2 == 0.0 && matches!(channels, ChannelKnowledge::Known { .. }) {
        // Likelihood collapses onto the hypotheses with the smallest residual.
        let best = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tol = 1e-9 * best.abs().max(1.0);
        let winners: Vec<usize> = (0..hypotheses).filter(|&i| log_w[i] >= best - tol).collect();
        for &i in &winners {
            mean = mean + &frames[i];
        }
        return Ok(mean / C64::new(winners.len() as f64, 0.0));
    }
    let best = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (w, fr) in log_w.iter().zip(&frames) {
        let p = (w - best).exp();
        total += p;
        mean = mean + fr.mapv(|v| v * p);
    }
    Ok(mean / C64::new(total, 0.0))
}

fn log_likelihood(obs: &Observation<'_>, ch: ChannelKnowledge<'_>, x: &CMat) -> Result<f64> {
    match ch {
        ChannelKnowledge::Known { g, f, h } => {
            let c = masked_product(f, x, obs);
            let z = g.dot(&c) + h.dot(x);
            let r: f64 = (&obs.y - &z).iter().map(|v| v.norm_sqr()).sum();
            Ok(if obs.sigma2 > 0.0 { -r / obs.sigma2 } else { -r })
        }
        ChannelKnowledge::MarginalGh { f, q_g, q_h } => {
            // Each row of Y is CN(0, Σ) with Σ = q_g Cᵀ C̄ + q_h Xᵀ X̄ + σ² I.
            let c = masked_product(f, x, obs);
            let t = x.ncols();
            let cm = to_dmatrix(&c);
            let xm = to_dmatrix(x);
            let sigma = cm.transpose() * cm.conjugate() * C64::new(q_g, 0.0)
                + xm.transpose() * xm.conjugate() * C64::new(q_h, 0.0)
                + DMatrix::<C64>::identity(t, t) * C64::new(obs.sigma2, 0.0);
            let chol = sigma
                .cholesky()
                .ok_or_else(|| Error::Numerical("marginal covariance not positive definite".into()))?;
            let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.re.ln()).sum::<f64>();
            let ym = to_dmatrix(&obs.y.to_owned()).transpose();
            let sol = chol.solve(&ym);
            let quad: f64 = ym
                .iter()
                .zip(sol.iter())
                .map(|(a, b)| (a.conj() * b).re)
                .sum();
            Ok(-(obs.m() as f64) * log_det - quad)
        }
    }
}

fn masked_product(f: &CMat, x: &CMat, obs: &Observation<'_>) -> CMat {
    let mut c = f.dot(x);
    ndarray::Zip::from(&mut c).and(&obs.s).for_each(|c, &on| {
        if !on {
            *c = C64::new(0.0, 0.0);
        }
    });
    c
}

fn to_dmatrix(a: &Array2<C64>) -> DMatrix<C64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}
