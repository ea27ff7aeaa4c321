//! Problem instances: configuration, channel ensembles, frame generation,
//! the forward model and performance metrics.

mod generate;
mod metrics;

pub use generate::{
    forward_model, gen_bernoulli_mask, gen_channels, gen_correlation_matrix, gen_data_frame,
    qpsk_alphabet, sigma_from_snr, snr_from_sigma, DataFrame,
};
pub use metrics::{
    score,
    hard_decide_qpsk, mse_metrics, normalized_mse, resolve_diagonal_ambiguity, ser_metric,
    to_db, AmbiguityResolution, Estimates, Metrics,
};

use crate::rng::StreamSeeds;
use crate::{CMat, Error, Result, C64};
use ndarray::{s, Array2, ArrayView2};

/// Data alphabet of the unknown payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constellation {
    /// Unit-power QPSK, `(±1 ± j)/√2`.
    Qpsk,
    /// Unit-variance circular Gaussian.
    Gaussian,
}

impl Constellation {
    pub fn tag(&self) -> &'static str {
        match self {
            Constellation::Qpsk => "qpsk",
            Constellation::Gaussian => "gaussian",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag.to_ascii_lowercase().as_str() {
            "qpsk" => Some(Constellation::Qpsk),
            "gaussian" | "gauss" => Some(Constellation::Gaussian),
            _ => None,
        }
    }
}

/// Dimensions, priors and noise of one system.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// BS antennas.
    pub m: usize,
    /// RIS elements.
    pub n: usize,
    /// Users.
    pub k: usize,
    /// Frame length.
    pub t: usize,
    /// Pilot length; pilots occupy the first `t_p` columns.
    pub t_p: usize,
    /// Probability that a RIS element is on at a given symbol.
    pub rho: f64,
    /// Noise variance per complex entry.
    pub sigma2: f64,
    pub q_g: f64,
    pub q_f: f64,
    pub q_h: f64,
    pub constellation: Constellation,
    pub seeds: StreamSeeds,
}

impl SystemConfig {
    /// Desk-scale system keeping the full-scale ratios at `K = 8`.
    pub fn desk() -> Self {
        Self {
            m: 64,
            n: 32,
            k: 8,
            t: 100,
            t_p: 24,
            rho: 0.3,
            sigma2: 0.0,
            q_g: 1.0,
            q_f: 1.0,
            q_h: 1.0,
            constellation: Constellation::Qpsk,
            seeds: StreamSeeds::uniform(0),
        }
    }

    pub fn t_d(&self) -> usize {
        self.t - self.t_p
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.m == 0 || self.n == 0 || self.k == 0 || self.t == 0 {
            return bad(format!(
                "all dimensions must be >= 1 (m={}, n={}, k={}, t={})",
                self.m, self.n, self.k, self.t
            ));
        }
        if self.t_p > self.t {
            return bad(format!("t_p={} exceeds t={}", self.t_p, self.t));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho={} outside [0, 1]", self.rho));
        }
        if !(self.sigma2 >= 0.0) || !self.sigma2.is_finite() {
            return bad(format!("sigma2={} must be finite and >= 0", self.sigma2));
        }
        for (name, q) in [("q_g", self.q_g), ("q_f", self.q_f), ("q_h", self.q_h)] {
            if !(q >= 0.0) || !q.is_finite() {
                return bad(format!("{name}={q} must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// How channel matrices are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelEnsemble {
    Iid,
    /// Exponential correlation: `G = Cgl Ḡ Cgr`, `F = Cf F̄`, `H = Ch H̄`.
    Correlated {
        c_gl: C64,
        c_gr: C64,
        c_f: C64,
        c_h: C64,
    },
}

impl ChannelEnsemble {
    /// Coefficients used for the correlated-channel experiments.
    pub fn reference_correlated() -> Self {
        ChannelEnsemble::Correlated {
            c_gl: C64::new(0.2, 0.5),
            c_gr: C64::new(0.1, 0.2),
            c_f: C64::new(0.4, 0.3),
            c_h: C64::new(0.3, 0.1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ChannelEnsemble::Correlated { c_gl, c_gr, c_f, c_h } = self {
            for c in [c_gl, c_gr, c_f, c_h] {
                if !(c.norm() < 1.0) {
                    return Err(Error::Correlation(c.norm()));
                }
            }
        }
        Ok(())
    }
}

/// One draw of all matrices of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRealization {
    /// RIS-to-BS channel, `M × N`.
    pub g: CMat,
    /// User-to-RIS channel, `N × K`.
    pub f: CMat,
    /// Direct user-to-BS channel, `M × K`.
    pub h: CMat,
    /// Reflection on/off pattern, `N × T`.
    pub s: Array2<bool>,
    /// Transmitted symbols, `K × T`; the first `t_p` columns are pilots.
    pub x: CMat,
    pub t_p: usize,
    /// Noise, `M × T`.
    pub w: CMat,
    /// Received signal, `M × T`.
    pub y: CMat,
}

impl FrameRealization {
    /// Draw a frame from the configured streams.
    pub fn generate(cfg: &SystemConfig, ensemble: &ChannelEnsemble) -> Result<Self> {
        cfg.validate()?;
        ensemble.validate()?;
        let seeds = &cfg.seeds;
        let (g, f, h) = gen_channels(cfg, ensemble, seeds.channels)?;
        let s = gen_bernoulli_mask(cfg.n, cfg.t, cfg.rho, seeds.mask);
        let data = gen_data_frame(cfg, seeds.data);
        let (y, w) = forward_model(&g, &f, &h, &data.x, &s, cfg.sigma2, seeds.noise)?;
        Ok(Self {
            g,
            f,
            h,
            s,
            x: data.x,
            t_p: data.t_p,
            w,
            y,
        })
    }

    pub fn x_pilot(&self) -> ArrayView2<'_, C64> {
        self.x.slice(s![.., ..self.t_p])
    }

    pub fn x_data(&self) -> ArrayView2<'_, C64> {
        self.x.slice(s![.., self.t_p..])
    }

    /// Cascaded input `C = S ⊙ (F X)`.
    pub fn cascade(&self) -> CMat {
        let mut c = self.f.dot(&self.x);
        ndarray::Zip::from(&mut c).and(&self.s).for_each(|c, &on| {
            if !on {
                *c = C64::new(0.0, 0.0);
            }
        });
        c
    }

    /// Noiseless output `Z = G C + H X`.
    pub fn noiseless(&self) -> CMat {
        self.g.dot(&self.cascade()) + self.h.dot(&self.x)
    }
}
