use super::{DirectLink, InitMode, Observation, PriorSpec};
use crate::rng::{stream_rng, Stream};
use crate::{CMat, RMat, C64};
use rand::Rng;
use rand_distr::StandardNormal;

pub(crate) const INIT_SCALE: f64 = 1.0;

/// Full message state of a Tri-AMP run.
///
/// Shapes: `G`, `q^g` are `M × N`; `F`, `q^f` are `N × K`; `H`, `q^h` are
/// `M × K`; `X`, `γ`, `r^x` are `K × T`; `C`, `η`, `r^c`, `ξ` are `N × T`;
/// `Z`, `p`, `u` are `M × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpState {
    pub g_hat: CMat,
    pub v_g: RMat,
    pub f_hat: CMat,
    pub v_f: RMat,
    pub h_hat: CMat,
    pub v_h: RMat,
    pub x_hat: CMat,
    pub v_x: RMat,
    pub c_hat: CMat,
    pub v_c: RMat,

    pub p_hat: CMat,
    pub v_p: RMat,
    pub z_hat: CMat,
    pub v_z: RMat,
    pub u_hat: CMat,
    pub v_u: RMat,

    pub q_g: CMat,
    pub v_qg: RMat,
    pub q_h: CMat,
    pub v_qh: RMat,
    pub xi: CMat,
    pub v_xi: RMat,
    pub r_x: CMat,
    pub v_rx: RMat,

    pub r_c: CMat,
    pub v_rc: RMat,
    pub eta_hat: CMat,
    pub v_eta: RMat,
    pub q_f: CMat,
    pub v_qf: RMat,
    pub gamma: CMat,
    pub v_gamma: RMat,

    /// Whether `û`/`η̂` hold values from a completed pass (for damping and
    /// Onsager terms); both start at zero.
    pub residuals_ready: bool,
}

impl AmpState {
    /// Initial state: channel/data estimates per `init`, pilots clamped,
    /// `ĉ = s Σ_k f̂ x̂`, `v^c` the full product variance of that sum,
    /// residuals zero.
    pub fn init(
        obs: &Observation<'_>,
        priors: &PriorSpec,
        init: &InitMode,
        direct_link: DirectLink,
    ) -> Self {
        let (m, n, k, t) = (obs.m(), obs.n(), obs.k(), obs.t());
        let t_p = obs.t_p();
        let q_h = match direct_link {
            DirectLink::Present => priors.q_h,
            DirectLink::Absent => 0.0,
        };
        let data_var = priors.data_var();

        let (g_hat, v_g, f_hat, v_f, h_hat, v_h, mut x_hat, mut v_x) = match init {
            InitMode::RandomPrior { seed } => {
                let mut rng = stream_rng(*seed, Stream::Init);
                let mut draw = |rows: usize, cols: usize, q: f64| {
                    let scale = INIT_SCALE * (0.5 * q).sqrt();
                    CMat::from_shape_simple_fn((rows, cols), || {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        C64::new(scale * re, scale * im)
                    })
                };
                let g = draw(m, n, priors.q_g);
                let f = draw(n, k, priors.q_f);
                let h = draw(m, k, q_h);
                (
                    g,
                    RMat::from_elem((m, n), priors.q_g),
                    f,
                    RMat::from_elem((n, k), priors.q_f),
                    h,
                    RMat::from_elem((m, k), q_h),
                    CMat::zeros((k, t)),
                    RMat::from_elem((k, t), data_var),
                )
            }
            InitMode::ZeroMean => (
                CMat::zeros((m, n)),
                RMat::from_elem((m, n), priors.q_g),
                CMat::zeros((n, k)),
                RMat::from_elem((n, k), priors.q_f),
                CMat::zeros((m, k)),
                RMat::from_elem((m, k), q_h),
                CMat::zeros((k, t)),
                RMat::from_elem((k, t), data_var),
            ),
            InitMode::OracleTruth(truth) => {
                let mut x = CMat::zeros((k, t));
                x.slice_mut(ndarray::s![.., t_p..]).assign(&truth.x_d);
                let h = match direct_link {
                    DirectLink::Present => truth.h.clone(),
                    DirectLink::Absent => CMat::zeros((m, k)),
                };
                (
                    truth.g.clone(),
                    RMat::zeros((m, n)),
                    truth.f.clone(),
                    RMat::zeros((n, k)),
                    h,
                    RMat::zeros((m, k)),
                    x,
                    RMat::zeros((k, t)),
                )
            }
        };
        for kk in 0..k {
            for tt in 0..t_p {
                x_hat[[kk, tt]] = obs.x_pilot[[kk, tt]];
                v_x[[kk, tt]] = 0.0;
            }
        }

        let mut c_hat = f_hat.dot(&x_hat);
        let mut v_c = v_f.dot(&v_x)
            + v_f.dot(&x_hat.mapv(|v| v.norm_sqr()))
            + f_hat.mapv(|v| v.norm_sqr()).dot(&v_x);
        if matches!(init, InitMode::OracleTruth(_)) {
            v_c.fill(0.0);
        }
        ndarray::Zip::from(&mut c_hat)
            .and(&mut v_c)
            .and(&obs.s)
            .for_each(|c, v, &on| {
                if !on {
                    *c = C64::new(0.0, 0.0);
                    *v = 0.0;
                }
            });

        let cz = |r, c| CMat::zeros((r, c));
        let rz = |r, c| RMat::zeros((r, c));
        Self {
            g_hat,
            v_g,
            f_hat,
            v_f,
            h_hat,
            v_h,
            x_hat,
            v_x,
            c_hat,
            v_c,
            p_hat: cz(m, t),
            v_p: rz(m, t),
            z_hat: cz(m, t),
            v_z: rz(m, t),
            u_hat: cz(m, t),
            v_u: rz(m, t),
            q_g: cz(m, n),
            v_qg: rz(m, n),
            q_h: cz(m, k),
            v_qh: rz(m, k),
            xi: cz(n, t),
            v_xi: rz(n, t),
            r_x: cz(k, t),
            v_rx: rz(k, t),
            r_c: cz(n, t),
            v_rc: rz(n, t),
            eta_hat: cz(n, t),
            v_eta: rz(n, t),
            q_f: cz(n, k),
            v_qf: rz(n, k),
            gamma: cz(k, t),
            v_gamma: rz(k, t),
            residuals_ready: false,
        }
    }

    /// `Ẑ = Ĝ Ĉ + Ĥ X̂`.
    pub fn z_estimate(&self) -> CMat {
        self.g_hat.dot(&self.c_hat) + self.h_hat.dot(&self.x_hat)
    }

    /// Whether every estimate and variance is finite.
    pub fn is_finite(&self) -> bool {
        let c = |a: &CMat| a.iter().all(|v| v.re.is_finite() && v.im.is_finite());
        let r = |a: &RMat| a.iter().all(|v| v.is_finite());
        c(&self.g_hat)
            && c(&self.f_hat)
            && c(&self.h_hat)
            && c(&self.x_hat)
            && c(&self.c_hat)
            && r(&self.v_g)
            && r(&self.v_f)
            && r(&self.v_h)
            && r(&self.v_x)
            && r(&self.v_c)
    }
}
