use super::{ChannelEnsemble, Constellation, SystemConfig};
use crate::rng::{stream_rng, Stream};
use crate::{CMat, Error, Result, C64};
use ndarray::{Array2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::FRAC_1_SQRT_2;

/// The four unit-power QPSK points `(±1 ± j)/√2`.
pub fn qpsk_alphabet() -> [C64; 4] {
    let a = FRAC_1_SQRT_2;
    [
        C64::new(a, a),
        C64::new(-a, a),
        C64::new(-a, -a),
        C64::new(a, -a),
    ]
}

fn complex_normal<R: Rng>(rng: &mut R, var: f64) -> C64 {
    let scale = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(scale * re, scale * im)
}

fn complex_normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, var: f64) -> CMat {
    Array2::from_shape_simple_fn((rows, cols), || complex_normal(rng, var))
}

/// Pseudo-random on/off pattern with `P(s = 1) = rho`.
pub fn gen_bernoulli_mask(n: usize, t: usize, rho: f64, seed: u64) -> Array2<bool> {
    let mut rng = stream_rng(seed, Stream::Mask);
    Array2::from_shape_simple_fn((n, t), || rng.random::<f64>() < rho)
}

/// Exponential correlation matrix with entries `c^(i-j)` on and below the
/// diagonal and their conjugates above it.
pub fn gen_correlation_matrix(dim: usize, c: C64) -> Result<CMat> {
    if !(c.norm() < 1.0) {
        return Err(Error::Correlation(c.norm()));
    }
    let mut powers = Vec::with_capacity(dim);
    let mut p = C64::new(1.0, 0.0);
    for _ in 0..dim {
        powers.push(p);
        p *= c;
    }
    Ok(Array2::from_shape_fn((dim, dim), |(i, j)| {
        if i >= j {
            powers[i - j]
        } else {
            powers[j - i].conj()
        }
    }))
}

/// Draw `(G, F, H)` for the given ensemble.
///
/// The correlated ensemble multiplies the i.i.d. draws by the correlation
/// matrices directly, so the entry variances are not exactly `q_*`.
pub fn gen_channels(
    cfg: &SystemConfig,
    ensemble: &ChannelEnsemble,
    seed: u64,
) -> Result<(CMat, CMat, CMat)> {
    ensemble.validate()?;
    let mut rng = stream_rng(seed, Stream::Channels);
    let g = complex_normal_matrix(&mut rng, cfg.m, cfg.n, cfg.q_g);
    let f = complex_normal_matrix(&mut rng, cfg.n, cfg.k, cfg.q_f);
    let h = complex_normal_matrix(&mut rng, cfg.m, cfg.k, cfg.q_h);
    match *ensemble {
        ChannelEnsemble::Iid => Ok((g, f, h)),
        ChannelEnsemble::Correlated { c_gl, c_gr, c_f, c_h } => {
            let cgl = gen_correlation_matrix(cfg.m, c_gl)?;
            let cgr = gen_correlation_matrix(cfg.n, c_gr)?;
            let cf = gen_correlation_matrix(cfg.n, c_f)?;
            let ch = gen_correlation_matrix(cfg.m, c_h)?;
            Ok((cgl.dot(&g).dot(&cgr), cf.dot(&f), ch.dot(&h)))
        }
    }
}

/// Symbols of one frame; the first `t_p` columns are the known pilots.
#[derive(Debug, Clone, PartialEq)]
pub struct DataFrame {
    pub x: CMat,
    pub t_p: usize,
}

pub fn gen_data_frame(cfg: &SystemConfig, seed: u64) -> DataFrame {
    let mut rng = stream_rng(seed, Stream::Data);
    let alphabet = qpsk_alphabet();
    let x = match cfg.constellation {
        Constellation::Qpsk => {
            Array2::from_shape_simple_fn((cfg.k, cfg.t), || alphabet[rng.random_range(0..4)])
        }
        Constellation::Gaussian => complex_normal_matrix(&mut rng, cfg.k, cfg.t, 1.0),
    };
    DataFrame { x, t_p: cfg.t_p }
}

/// `Y = G (S ⊙ (F X)) + H X + W` with fresh noise of variance `sigma2`.
/// Returns `(Y, W)`.
pub fn forward_model(
    g: &CMat,
    f: &CMat,
    h: &CMat,
    x: &CMat,
    s: &Array2<bool>,
    sigma2: f64,
    seed: u64,
) -> Result<(CMat, CMat)> {
    let (m, n) = g.dim();
    let (n_f, k) = f.dim();
    let (m_h, k_h) = h.dim();
    let (k_x, t) = x.dim();
    if n_f != n || m_h != m || k_h != k || k_x != k || s.dim() != (n, t) {
        return Err(Error::Dimension(format!(
            "G {:?}, F {:?}, H {:?}, X {:?}, S {:?}",
            g.dim(),
            f.dim(),
            h.dim(),
            x.dim(),
            s.dim()
        )));
    }
    let mut c = f.dot(x);
    Zip::from(&mut c).and(s).for_each(|c, &on| {
        if !on {
            *c = C64::new(0.0, 0.0);
        }
    });
    let mut rng = stream_rng(seed, Stream::Noise);
    let w = if sigma2 > 0.0 {
        complex_normal_matrix(&mut rng, m, t, sigma2)
    } else {
        CMat::zeros((m, t))
    };
    let y = g.dot(&c) + h.dot(x) + &w;
    Ok((y, w))
}

/// Noise variance giving the requested SNR, assuming unit symbol power:
/// `sigma2 = (rho N K q_g q_f + K q_h) / 10^(snr_db / 10)`.
pub fn sigma_from_snr(cfg: &SystemConfig, snr_db: f64) -> f64 {
    signal_power(cfg) / 10f64.powf(snr_db / 10.0)
}

/// Inverse of [`sigma_from_snr`].
pub fn snr_from_sigma(cfg: &SystemConfig, sigma2: f64) -> f64 {
    10.0 * (signal_power(cfg) / sigma2).log10()
}

fn signal_power(cfg: &SystemConfig) -> f64 {
    let (n, k) = (cfg.n as f64, cfg.k as f64);
    cfg.rho * n * k * cfg.q_g * cfg.q_f + k * cfg.q_h
}
