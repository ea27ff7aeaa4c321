use super::scalar::{scalar_mmse_gaussian, scalar_mmse_qpsk, ser_asymptotic};
use crate::model::{Constellation, SystemConfig};
use crate::{Error, Result};

/// Which link structure the equations describe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplicaMode {
    /// Cascaded and direct links.
    Full,
    /// Cascaded link only (`H = 0`).
    NoDirectLink,
    /// Direct link only (`G = 0` and/or `F = 0`).
    NoRis,
}

impl ReplicaMode {
    pub fn tag(&self) -> &'static str {
        match self {
            ReplicaMode::Full => "full",
            ReplicaMode::NoDirectLink => "no-direct-link",
            ReplicaMode::NoRis => "no-ris",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "full" => Some(ReplicaMode::Full),
            "no-direct-link" => Some(ReplicaMode::NoDirectLink),
            "no-ris" => Some(ReplicaMode::NoRis),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicaParams {
    pub m: f64,
    pub n: f64,
    pub k: f64,
    pub t_p: f64,
    pub t_d: f64,
    pub rho: f64,
    pub sigma2: f64,
    pub q_g: f64,
    pub q_f: f64,
    pub q_h: f64,
    pub q_xp: f64,
    pub q_xd: f64,
    pub data: Constellation,
    pub mode: ReplicaMode,
}

impl ReplicaParams {
    /// Unit-power symbols; dimensions and priors taken from `cfg`.
    pub fn from_config(cfg: &SystemConfig, mode: ReplicaMode) -> Self {
        Self {
            m: cfg.m as f64,
            n: cfg.n as f64,
            k: cfg.k as f64,
            t_p: cfg.t_p as f64,
            t_d: cfg.t_d() as f64,
            rho: cfg.rho,
            sigma2: cfg.sigma2,
            q_g: cfg.q_g,
            q_f: cfg.q_f,
            q_h: cfg.q_h,
            q_xp: 1.0,
            q_xd: 1.0,
            data: cfg.constellation,
            mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            ("m", self.m),
            ("n", self.n),
            ("k", self.k),
            ("t_p", self.t_p),
            ("t_d", self.t_d),
            ("sigma2", self.sigma2),
            ("q_g", self.q_g),
            ("q_f", self.q_f),
            ("q_h", self.q_h),
            ("q_xp", self.q_xp),
            ("q_xd", self.q_xd),
        ];
        for (name, v) in vals {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name}={v} must be finite and >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidConfig(format!("rho={} outside [0, 1]", self.rho)));
        }
        Ok(())
    }

    /// `(q_cp, q_cd) = (ρ K q_f q_xp, ρ K q_f q_xd)`.
    pub fn second_moments(&self) -> (f64, f64) {
        let base = self.rho * self.k * self.q_f;
        (base * self.q_xp, base * self.q_xd)
    }

    /// Powers after zeroing those of absent links.
    fn effective(&self) -> (f64, f64, f64) {
        match self.mode {
            ReplicaMode::Full => (self.q_g, self.q_f, self.q_h),
            ReplicaMode::NoDirectLink => (self.q_g, self.q_f, 0.0),
            ReplicaMode::NoRis => (0.0, 0.0, self.q_h),
        }
    }
}

/// Overlaps, effective SNRs, auxiliaries and outputs of one fixed point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicaState {
    pub m_g: f64,
    pub m_f: f64,
    pub m_h: f64,
    pub m_xd: f64,
    pub m_cp: f64,
    pub m_cd: f64,
    pub mt_g: f64,
    pub mt_f: f64,
    pub mt_h: f64,
    pub mt_xd: f64,
    pub a_p: f64,
    pub a_d: f64,
    pub b_p: f64,
    pub b_d: f64,
    pub mse_g: f64,
    pub mse_f: f64,
    pub mse_h: f64,
    pub mse_xd: f64,
    /// QPSK data only.
    pub ser: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReplicaInit {
    /// Overlaps at `1e-6` of the powers (MSEs just below the prior powers).
    Uninformative,
    /// Overlaps at `1 − 1e-9` of the powers (MSEs near zero).
    Informative,
    /// Explicit starting MSEs `(g, f, h, x_d)`.
    Custom { mse_g: f64, mse_f: f64, mse_h: f64, mse_xd: f64 },
}

impl ReplicaInit {
    pub fn tag(&self) -> &'static str {
        match self {
            ReplicaInit::Uninformative => "uninformative",
            ReplicaInit::Informative => "informative",
            ReplicaInit::Custom { .. } => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicaOptions {
    /// Weight of the new value in each relaxed update.
    pub relaxation: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ReplicaOptions {
    fn default() -> Self {
        Self {
            relaxation: 0.5,
            tol: 1e-12,
            max_iters: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicaOutcome {
    pub state: ReplicaState,
    pub init: ReplicaInit,
    pub converged: bool,
    pub iterations: usize,
    /// A denominator was clamped at [`DENOM_FLOOR`].
    pub invalid_regime: bool,
}

pub const DENOM_FLOOR: f64 = 1e-300;

/// Both initializations; `distinct` when any MSE differs by more than 1e-6.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualOutcome {
    pub uninformative: ReplicaOutcome,
    pub informative: ReplicaOutcome,
    pub distinct: bool,
}

/// The variables iterated by the solver.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Overlaps {
    m_g: f64,
    m_f: f64,
    m_h: f64,
    m_xd: f64,
    m_cp: f64,
    m_cd: f64,
}

impl Overlaps {
    fn max_diff(&self, o: &Overlaps) -> f64 {
        [
            self.m_g - o.m_g,
            self.m_f - o.m_f,
            self.m_h - o.m_h,
            self.m_xd - o.m_xd,
            self.m_cp - o.m_cp,
            self.m_cd - o.m_cd,
        ]
        .iter()
        .fold(0.0, |a, d| a.max(d.abs()))
    }
}

struct Guard(bool);

impl Guard {
    fn div(&mut self, num: f64, den: f64) -> f64 {
        if !(den >= DENOM_FLOOR) {
            self.0 = true;
            return num / DENOM_FLOOR;
        }
        num / den
    }
}

/// One application of the full update map to `o`.
fn update(p: &ReplicaParams, o: &Overlaps, guard: &mut Guard) -> (Overlaps, ReplicaState) {
    let (q_g, q_f, q_h) = p.effective();
    let (m, n, k) = (p.m, p.n, p.k);
    let rho = p.rho;
    let (q_xp, q_xd) = (p.q_xp, p.q_xd);
    let (q_cp, q_cd) = {
        let base = rho * k * q_f;
        (base * q_xp, base * q_xd)
    };
    let m_xp = q_xp;
    // Per-active-entry overlap of c from its unconditional value.
    let cond = |v: f64| if rho > 0.0 { v / rho } else { 0.0 };

    let (a_p, a_d, b_p, b_d, m_cp, m_cd);
    match p.mode {
        ReplicaMode::NoRis => {
            a_p = guard.div(1.0, p.sigma2 + k * q_xp * (q_h - o.m_h));
            a_d = guard.div(1.0, p.sigma2 + k * (q_h * q_xd - o.m_h * o.m_xd));
            b_p = 0.0;
            b_d = 0.0;
            m_cp = 0.0;
            m_cd = 0.0;
        }
        ReplicaMode::NoDirectLink => {
            // Per-active-entry moments of c.
            let (qc_p, qc_d) = (k * q_f * q_xp, k * q_f * q_xd);
            let (mc_p, mc_d) = (cond(o.m_cp), cond(o.m_cd));
            a_p = guard.div(1.0, p.sigma2 + rho * n * (q_g * qc_p - o.m_g * mc_p));
            a_d = guard.div(1.0, p.sigma2 + rho * n * (q_g * qc_d - o.m_g * mc_d));
            let dp = q_xp * q_f - m_xp * o.m_f;
            let dd = q_xd * q_f - o.m_xd * o.m_f;
            b_p = b_aux(m, k, rho, o.m_g, a_p, dp, guard);
            b_d = b_aux(m, k, rho, o.m_g, a_d, dd, guard);
            m_cp = rho * (qc_p - guard.div(k * dp, 1.0 + m * k * o.m_g * a_p * dp));
            m_cd = rho * (qc_d - guard.div(k * dd, 1.0 + m * k * o.m_g * a_d * dd));
        }
        ReplicaMode::Full => {
            a_p = guard.div(
                1.0,
                p.sigma2 + n * (q_g * q_cp - o.m_g * o.m_cp) + k * q_xp * (q_h - o.m_h),
            );
            a_d = guard.div(
                1.0,
                p.sigma2 + n * (q_g * q_cd - o.m_g * o.m_cd) + k * (q_h * q_xd - o.m_h * o.m_xd),
            );
            let dp = q_xp * q_f - m_xp * o.m_f;
            let dd = q_xd * q_f - o.m_xd * o.m_f;
            b_p = b_aux(m, k, rho, o.m_g, a_p, dp, guard);
            b_d = b_aux(m, k, rho, o.m_g, a_d, dd, guard);
            m_cp = q_cp - rho * guard.div(k * dp, 1.0 + m * k * o.m_g * a_p * dp);
            m_cd = q_cd - rho * guard.div(k * dd, 1.0 + m * k * o.m_g * a_d * dd);
        }
    }

    let (mt_g, mt_f, mt_h, mt_xd) = match p.mode {
        ReplicaMode::NoRis => (
            0.0,
            0.0,
            p.t_p * q_xp * a_p + p.t_d * o.m_xd * a_d,
            m * o.m_h * a_d,
        ),
        ReplicaMode::NoDirectLink => (
            rho * (p.t_p * cond(o.m_cp) * a_p + p.t_d * cond(o.m_cd) * a_d),
            p.t_p * q_xp * b_p + p.t_d * o.m_xd * b_d,
            0.0,
            n * o.m_f * b_d,
        ),
        ReplicaMode::Full => (
            p.t_p * o.m_cp * a_p + p.t_d * o.m_cd * a_d,
            p.t_p * q_xp * b_p + p.t_d * o.m_xd * b_d,
            p.t_p * q_xp * a_p + p.t_d * o.m_xd * a_d,
            n * o.m_f * b_d + m * o.m_h * a_d,
        ),
    };

    let mse_g = scalar_mmse_gaussian(mt_g, q_g);
    let mse_f = scalar_mmse_gaussian(mt_f, q_f);
    let mse_h = scalar_mmse_gaussian(mt_h, q_h);
    let (mse_xd, ser) = match p.data {
        // A QPSK symbol of power q at SNR m̃ behaves as a unit symbol at m̃ q.
        Constellation::Qpsk => (
            q_xd * scalar_mmse_qpsk(mt_xd * q_xd),
            Some(ser_asymptotic(mt_xd * q_xd)),
        ),
        Constellation::Gaussian => (scalar_mmse_gaussian(mt_xd, q_xd), None),
    };
    let next = Overlaps {
        m_g: q_g - mse_g,
        m_f: q_f - mse_f,
        m_h: q_h - mse_h,
        m_xd: q_xd - mse_xd,
        m_cp,
        m_cd,
    };
    let state = ReplicaState {
        m_g: next.m_g,
        m_f: next.m_f,
        m_h: next.m_h,
        m_xd: next.m_xd,
        m_cp,
        m_cd,
        mt_g,
        mt_f,
        mt_h,
        mt_xd,
        a_p,
        a_d,
        b_p,
        b_d,
        mse_g,
        mse_f,
        mse_h,
        mse_xd,
        ser,
    };
    (next, state)
}

/// `b = ρ / (1/(M m_g a) + K Δ)`, zero when the cascaded link carries no
/// information (`m_g a = 0`).
fn b_aux(m: f64, k: f64, rho: f64, m_g: f64, a: f64, delta: f64, guard: &mut Guard) -> f64 {
    let info = m * m_g * a;
    if !(info > 0.0) {
        return 0.0;
    }
    guard.div(rho, 1.0 / info + k * delta)
}

fn initial(p: &ReplicaParams, init: &ReplicaInit) -> Overlaps {
    let (q_g, q_f, q_h) = p.effective();
    let frac = |q: f64, mse: f64| (q - mse).clamp(0.0, q);
    let (m_g, m_f, m_h, m_xd) = match *init {
        ReplicaInit::Uninformative => (1e-6 * q_g, 1e-6 * q_f, 1e-6 * q_h, 1e-6 * p.q_xd),
        ReplicaInit::Informative => {
            let s = 1.0 - 1e-9;
            (s * q_g, s * q_f, s * q_h, s * p.q_xd)
        }
        ReplicaInit::Custom { mse_g, mse_f, mse_h, mse_xd } => (
            frac(q_g, mse_g),
            frac(q_f, mse_f),
            frac(q_h, mse_h),
            frac(p.q_xd, mse_xd),
        ),
    };
    // Cascade overlaps consistent with the channel and data overlaps alone.
    let (m_cp, m_cd) = match p.mode {
        ReplicaMode::NoRis => (0.0, 0.0),
        _ => (p.rho * p.k * m_f * p.q_xp, p.rho * p.k * m_f * m_xd),
    };
    Overlaps { m_g, m_f, m_h, m_xd, m_cp, m_cd }
}

/// Bound on [`fixed_point_residual`] checked once the overlap change is below `tol`.
const RESIDUAL_TARGET: f64 = 1e-10;

/// Iterate the relaxed update map from `init` until the largest overlap
/// change drops below `opts.tol` and [`fixed_point_residual`] is below `1e-10`.
pub fn replica_fixed_point(
    params: &ReplicaParams,
    init: ReplicaInit,
    opts: &ReplicaOptions,
) -> Result<ReplicaOutcome> {
    params.validate()?;
    if !(opts.relaxation > 0.0 && opts.relaxation <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "relaxation={} outside (0, 1]",
            opts.relaxation
        )));
    }
    let beta = opts.relaxation;
    let mut o = initial(params, &init);
    let mut guard = Guard(false);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iters {
        iterations = it;
        let mut step_guard = Guard(false);
        let (new, _) = update(params, &o, &mut step_guard);
        let relaxed = Overlaps {
            m_g: (1.0 - beta) * o.m_g + beta * new.m_g,
            m_f: (1.0 - beta) * o.m_f + beta * new.m_f,
            m_h: (1.0 - beta) * o.m_h + beta * new.m_h,
            m_xd: (1.0 - beta) * o.m_xd + beta * new.m_xd,
            m_cp: (1.0 - beta) * o.m_cp + beta * new.m_cp,
            m_cd: (1.0 - beta) * o.m_cd + beta * new.m_cd,
        };
        let diff = relaxed.max_diff(&o);
        o = relaxed;
        guard.0 = step_guard.0;
        if !diff.is_finite() {
            return Err(Error::Numerical("replica iteration produced non-finite overlaps".into()));
        }
        if diff < opts.tol {
            let (_, state) = update(params, &o, &mut Guard(false));
            if diff == 0.0 || fixed_point_residual(params, &with_overlaps(state, &o)) <= RESIDUAL_TARGET {
                converged = true;
                break;
            }
        }
    }
    let (_, state) = update(params, &o, &mut guard);
    Ok(ReplicaOutcome {
        state: with_overlaps(state, &o),
        init,
        converged,
        iterations,
        invalid_regime: guard.0,
    })
}

/// Report the iterated overlaps together with the auxiliaries they imply.
fn with_overlaps(mut s: ReplicaState, o: &Overlaps) -> ReplicaState {
    s.m_g = o.m_g;
    s.m_f = o.m_f;
    s.m_h = o.m_h;
    s.m_xd = o.m_xd;
    s.m_cp = o.m_cp;
    s.m_cd = o.m_cd;
    s
}

/// Largest componentwise change, relative to `max(1, |value|)`, when the
/// state's overlaps are pushed once more through the update map.
pub fn fixed_point_residual(params: &ReplicaParams, state: &ReplicaState) -> f64 {
    let o = Overlaps {
        m_g: state.m_g,
        m_f: state.m_f,
        m_h: state.m_h,
        m_xd: state.m_xd,
        m_cp: state.m_cp,
        m_cd: state.m_cd,
    };
    let (o1, _) = update(params, &o, &mut Guard(false));
    let (_, next) = update(params, &o1, &mut Guard(false));
    let pairs = [
        (o.m_g, o1.m_g),
        (o.m_f, o1.m_f),
        (o.m_h, o1.m_h),
        (o.m_xd, o1.m_xd),
        (o.m_cp, o1.m_cp),
        (o.m_cd, o1.m_cd),
        (state.mt_g, next.mt_g),
        (state.mt_f, next.mt_f),
        (state.mt_h, next.mt_h),
        (state.mt_xd, next.mt_xd),
        (state.a_p, next.a_p),
        (state.a_d, next.a_d),
        (state.b_p, next.b_p),
        (state.b_d, next.b_d),
    ];
    pairs
        .iter()
        .fold(0.0, |a, &(x, y)| a.max((x - y).abs() / x.abs().max(1.0)))
}

/// Run both initializations.
pub fn replica_dual(params: &ReplicaParams, opts: &ReplicaOptions) -> Result<DualOutcome> {
    let uninformative = replica_fixed_point(params, ReplicaInit::Uninformative, opts)?;
    let informative = replica_fixed_point(params, ReplicaInit::Informative, opts)?;
    let (a, b) = (&uninformative.state, &informative.state);
    let distinct = [
        (a.mse_g, b.mse_g),
        (a.mse_f, b.mse_f),
        (a.mse_h, b.mse_h),
        (a.mse_xd, b.mse_xd),
    ]
    .iter()
    .any(|(x, y)| (x - y).abs() > 1e-6);
    Ok(DualOutcome {
        uninformative,
        informative,
        distinct,
    })
}
