//! Trilinear approximate message passing (Tri-AMP) for
//! `Y = G (S ⊙ (F X)) + H X + W`, and the two-stage BiG-AMP + LMMSE baseline.
//!
//! One Tri-AMP iteration runs an outer bilinear AMP pass on
//! `Y = [G H] [C; X] + W` followed by an inner bilinear AMP pass on
//! `C = S ⊙ (F X)`, whose output channel is the Gaussian aggregate the outer
//! pass sends toward `C`. The data symbols fuse one Gaussian message from each
//! pass with their prior.

mod baseline;
mod denoise;
mod inner;
pub mod oracle;
mod outer;
mod run;
mod state;

pub use baseline::{bigamp_lmmse_baseline, lmmse_rows, BaselineOutput, LmmseRows};
pub use denoise::{
    clamp_var, denoise_c, denoise_gaussian, denoise_qpsk, denoise_x, fuse, var_from_precision,
    DataPrior, VAR_CAP, VAR_FLOOR,
};
pub use inner::inner_step;
pub use outer::{outer_step, StepControl};
pub use run::{apply_damping, fit_ratio, tri_amp_run, AmpOutput, IterationRecord, Status};
pub use state::AmpState;

use crate::model::{Constellation, Estimates, SystemConfig};
use crate::{CMat, Error, Result, C64};
use ndarray::{s, Array2, ArrayView2};

/// Priors of the unknowns; pilots are passed separately with the observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    pub q_g: f64,
    pub q_f: f64,
    pub q_h: f64,
    pub data: DataPrior,
}

impl PriorSpec {
    pub fn from_config(cfg: &SystemConfig) -> Self {
        Self {
            q_g: cfg.q_g,
            q_f: cfg.q_f,
            q_h: cfg.q_h,
            data: match cfg.constellation {
                Constellation::Qpsk => DataPrior::Qpsk,
                Constellation::Gaussian => DataPrior::Gaussian(1.0),
            },
        }
    }

    pub fn data_var(&self) -> f64 {
        match self.data {
            DataPrior::Qpsk => 1.0,
            DataPrior::Gaussian(q) => q,
        }
    }
}

/// Starting point of the iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum InitMode {
    /// Channel means drawn from the prior; data means zero.
    RandomPrior { seed: u64 },
    /// All means zero, variances at the prior.
    ZeroMean,
    /// Means at the supplied truth, variances zero. Test use only.
    OracleTruth(Box<Estimates>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectLink {
    Present,
    Absent,
}

/// Which quantities are smoothed by damping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DampSet {
    /// Outer residuals `û`, `v^u`.
    pub outer_residuals: bool,
    /// Inner residuals `η̂`, `v^η`.
    pub inner_residuals: bool,
    /// Posterior means and variances of `G`, `F`, `H`, `X`.
    pub factors: bool,
}

impl Default for DampSet {
    fn default() -> Self {
        Self {
            outer_residuals: true,
            inner_residuals: true,
            factors: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmpOptions {
    /// Damping factor in `[0, 1]`; 1 is undamped.
    pub beta: f64,
    pub max_iters: usize,
    /// Stop when `‖Ẑ(i) − Ẑ(i−1)‖² / ‖Ẑ(i)‖² < tol`.
    pub tol: f64,
    pub init: InitMode,
    pub direct_link: DirectLink,
    pub damp: DampSet,
    /// Retry once with `beta / 2` when the state turns non-finite.
    pub restart_on_divergence: bool,
    /// Fresh random starts tried after a run that diverged or fits `Y` poorly.
    pub fit_restarts: usize,
    /// A run fits poorly when `‖Y − Ẑ‖²_F > fit_threshold · M T σ²` (σ² > 0 only).
    pub fit_threshold: f64,
}

impl Default for AmpOptions {
    fn default() -> Self {
        Self {
            beta: 0.15,
            max_iters: 200,
            tol: 1e-8,
            init: InitMode::RandomPrior { seed: 0 },
            direct_link: DirectLink::Present,
            damp: DampSet::default(),
            restart_on_divergence: true,
            fit_restarts: 2,
            fit_threshold: 2.0,
        }
    }
}

impl AmpOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidConfig(format!("beta={} outside [0, 1]", self.beta)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tol={} must be > 0", self.tol)));
        }
        if !(self.fit_threshold > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "fit_threshold={} must be > 0",
                self.fit_threshold
            )));
        }
        Ok(())
    }
}

/// Everything the receiver knows about one frame.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub y: ArrayView2<'a, C64>,
    pub s: ArrayView2<'a, bool>,
    /// Known pilot block, `K × T_p`.
    pub x_pilot: ArrayView2<'a, C64>,
    pub sigma2: f64,
}

impl<'a> Observation<'a> {
    pub fn new(
        y: &'a CMat,
        s: &'a Array2<bool>,
        x_pilot: ArrayView2<'a, C64>,
        sigma2: f64,
    ) -> Result<Self> {
        let (m, t) = y.dim();
        let (_, t_s) = s.dim();
        let (_, t_p) = x_pilot.dim();
        if t_s != t || t_p > t || m == 0 || t == 0 {
            return Err(Error::Dimension(format!(
                "Y {:?}, S {:?}, X_p {:?}",
                y.dim(),
                s.dim(),
                x_pilot.dim()
            )));
        }
        if !(sigma2 >= 0.0) {
            return Err(Error::InvalidConfig(format!("sigma2={sigma2} must be >= 0")));
        }
        Ok(Self {
            y: y.view(),
            s: s.view(),
            x_pilot,
            sigma2,
        })
    }

    pub fn from_realization(r: &'a crate::model::FrameRealization, sigma2: f64) -> Result<Self> {
        Self::new(&r.y, &r.s, r.x_pilot(), sigma2)
    }

    pub fn m(&self) -> usize {
        self.y.nrows()
    }
    pub fn n(&self) -> usize {
        self.s.nrows()
    }
    pub fn k(&self) -> usize {
        self.x_pilot.nrows()
    }
    pub fn t(&self) -> usize {
        self.y.ncols()
    }
    pub fn t_p(&self) -> usize {
        self.x_pilot.ncols()
    }

    pub fn pilot(&self, k: usize, t: usize) -> Option<C64> {
        (t < self.t_p()).then(|| self.x_pilot[[k, t]])
    }
}

/// Data block of a `K × T` symbol matrix.
pub(crate) fn data_block(x: &CMat, t_p: usize) -> CMat {
    x.slice(s![.., t_p..]).to_owned()
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::RMat;
    use crate::model::{ChannelEnsemble, FrameRealization};
    use crate::rng::StreamSeeds;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn frame(m: usize, n: usize, k: usize, t: usize, t_p: usize, sigma2: f64, seed: u64) -> FrameRealization {
        let cfg = SystemConfig {
            m,
            n,
            k,
            t,
            t_p,
            rho: 0.5,
            sigma2,
            seeds: StreamSeeds::uniform(seed),
            ..SystemConfig::desk()
        };
        FrameRealization::generate(&cfg, &ChannelEnsemble::Iid).unwrap()
    }

    pub fn priors() -> PriorSpec {
        PriorSpec {
            q_g: 1.0,
            q_f: 1.0,
            q_h: 1.0,
            data: DataPrior::Qpsk,
        }
    }

    /// A state with random means, positive variances and random residuals.
    pub fn random_state(obs: &Observation<'_>, seed: u64) -> AmpState {
        let mut st = AmpState::init(obs, &priors(), &InitMode::RandomPrior { seed }, DirectLink::Present);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        let mut cplx = |a: &mut CMat| a.mapv_inplace(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        cplx(&mut st.u_hat);
        cplx(&mut st.eta_hat);
        cplx(&mut st.xi);
        cplx(&mut st.r_x);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1234);
        let mut pos = |a: &mut RMat| a.mapv_inplace(|_| rng.random_range(0.2..1.5));
        pos(&mut st.v_g);
        pos(&mut st.v_f);
        pos(&mut st.v_h);
        pos(&mut st.v_xi);
        pos(&mut st.v_rx);
        let t_p = obs.t_p();
        st.v_x.slice_mut(s![.., t_p..]).mapv_inplace(|_| 0.5);
        let mask = obs.s.to_owned();
        ndarray::Zip::from(&mut st.eta_hat).and(&mask).for_each(|e, &on| {
            if !on {
                *e = C64::new(0.0, 0.0);
            }
        });
        st.residuals_ready = true;
        st
    }

    pub fn undamped() -> outer::StepControl {
        outer::StepControl {
            beta_residual: 1.0,
            beta_factor: 1.0,
            direct_link: DirectLink::Present,
        }
    }

    pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff_r(a: &RMat, b: &RMat) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }
}
