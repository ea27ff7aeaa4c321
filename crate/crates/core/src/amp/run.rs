use super::inner::inner_step;
use super::outer::{outer_step, StepControl};
use super::{data_block, AmpOptions, AmpState, DataPrior, InitMode, Observation, PriorSpec};
use crate::model::{hard_decide_qpsk, score, Estimates, FrameRealization};
use crate::{CMat, Error, RMat, Result};
use ndarray::{Array2, Zip};
use std::ops::{Add, Mul};
use std::time::Instant;

/// Elementwise `(1 − β)·previous + β·current`.
pub fn apply_damping<T>(current: &Array2<T>, previous: &Array2<T>, beta: f64) -> Array2<T>
where
    T: Copy + Mul<f64, Output = T> + Add<Output = T>,
{
    let mut out = previous.clone();
    damp_assign(&mut out, current.clone(), beta);
    out
}

/// In-place form of [`apply_damping`]: `prev ← (1 − β)·prev + β·new`.
pub(crate) fn damp_assign<T>(prev: &mut Array2<T>, new: Array2<T>, beta: f64)
where
    T: Copy + Mul<f64, Output = T> + Add<Output = T>,
{
    if beta >= 1.0 || prev.dim() != new.dim() {
        *prev = new;
        return;
    }
    Zip::from(prev)
        .and(&new)
        .for_each(|p, &n| *p = *p * (1.0 - beta) + n * beta);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIters,
    Diverged,
}

impl Status {
    pub fn tag(&self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::MaxIters => "max-iters",
            Status::Diverged => "diverged",
        }
    }
}

/// One trajectory entry; MSEs are filled only when the truth is supplied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mse_g_db: Option<f64>,
    pub mse_f_db: Option<f64>,
    pub mse_h_db: Option<f64>,
    pub mse_xd_db: Option<f64>,
    pub ser: Option<f64>,
    /// `‖Ẑ(i) − Ẑ(i−1)‖² / ‖Ẑ(i)‖²`.
    pub residual: f64,
}

impl IterationRecord {
    pub const CSV_HEADER: [&'static str; 7] = [
        "iteration",
        "mse_g_db",
        "mse_f_db",
        "mse_h_db",
        "mse_xd_db",
        "ser",
        "residual",
    ];

    pub fn csv_fields(&self) -> [String; 7] {
        let o = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        [
            self.iteration.to_string(),
            o(self.mse_g_db),
            o(self.mse_f_db),
            o(self.mse_h_db),
            o(self.mse_xd_db),
            o(self.ser),
            format!("{:.6e}", self.residual),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct AmpOutput {
    /// Posterior means; `x_d` is the data block only.
    pub estimates: Estimates,
    pub v_g: RMat,
    pub v_f: RMat,
    pub v_h: RMat,
    pub v_xd: RMat,
    /// Nearest-symbol decisions on `x_d` (QPSK prior only).
    pub x_hard: Option<CMat>,
    /// Iterations of the returned attempt.
    pub iterations: usize,
    pub status: Status,
    /// Runs made, including restarts.
    pub attempts: usize,
    /// Damping factor of the returned attempt.
    pub beta: f64,
    pub trajectory: Vec<IterationRecord>,
    /// Wall time of the returned attempt's iterations, seconds.
    pub seconds: f64,
    pub state: AmpState,
}

/// Run Tri-AMP. Per iteration: outer pass, inner pass (with `X` fusion),
/// then the relative-change stopping check on `Ẑ`.
///
/// A non-finite state triggers one restart with `β/2` when enabled. A run
/// that still diverges or whose fit ratio `‖Y − Ẑ‖²_F / (M T σ²)` exceeds
/// `fit_threshold` is retried from a fresh random start, at most
/// `fit_restarts` times. The attempt with the smallest fit ratio is returned.
pub fn tri_amp_run(
    obs: &Observation<'_>,
    priors: &PriorSpec,
    opts: &AmpOptions,
    truth: Option<&FrameRealization>,
) -> Result<AmpOutput> {
    opts.validate()?;
    if let Some(tr) = truth {
        if tr.y.dim() != obs.y.dim() || tr.f.dim() != (obs.n(), obs.k()) {
            return Err(Error::Dimension("truth does not match observation".into()));
        }
    }
    let mut beta = opts.beta;
    let mut init = opts.init.clone();
    let mut halved = false;
    let mut fresh = 0;
    let mut attempts = 0;
    let mut best: Option<(f64, Attempt, f64)> = None;
    loop {
        let attempt = run_once(obs, priors, opts, &init, beta, truth);
        attempts += 1;
        let diverged = attempt.status == Status::Diverged;
        let fit = if diverged { f64::INFINITY } else { fit_ratio(obs, &attempt.state) };
        if best.as_ref().is_none_or(|(f, _, _)| fit < *f) {
            best = Some((fit, attempt, beta));
        }
        if diverged && opts.restart_on_divergence && !halved {
            halved = true;
            beta *= 0.5;
            continue;
        }
        let poor = diverged || fit > opts.fit_threshold;
        match init {
            InitMode::RandomPrior { seed } if poor && fresh < opts.fit_restarts => {
                fresh += 1;
                init = InitMode::RandomPrior {
                    seed: seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
                };
            }
            _ => break,
        }
    }
    let (_, attempt, beta) = best.expect("at least one attempt");
    Ok(finish(attempt, obs, priors, beta, attempts))
}

/// `‖Y − Ẑ‖²_F / (M T σ²)`; zero when `σ² = 0`.
pub fn fit_ratio(obs: &Observation<'_>, state: &AmpState) -> f64 {
    if obs.sigma2 <= 0.0 {
        return 0.0;
    }
    let z = state.z_estimate();
    let r: f64 = Zip::from(&obs.y).and(&z).fold(0.0, |a, &y, &z| a + (y - z).norm_sqr());
    r / (obs.sigma2 * (obs.m() * obs.t()) as f64)
}

struct Attempt {
    state: AmpState,
    status: Status,
    iterations: usize,
    trajectory: Vec<IterationRecord>,
    seconds: f64,
}

fn run_once(
    obs: &Observation<'_>,
    priors: &PriorSpec,
    opts: &AmpOptions,
    init: &InitMode,
    beta: f64,
    truth: Option<&FrameRealization>,
) -> Attempt {
    let qpsk = priors.data == DataPrior::Qpsk;
    let mut state = AmpState::init(obs, priors, init, opts.direct_link);
    let mut last_finite = state.clone();
    let mut z_prev = state.z_estimate();
    let mut trajectory = Vec::new();
    let mut status = Status::MaxIters;
    let mut iterations = 0;
    let pick = |on: bool| if on { beta } else { 1.0 };
    let start = Instant::now();

    for it in 1..=opts.max_iters {
        let damped = |on: bool| if state.residuals_ready { pick(on) } else { 1.0 };
        let outer = StepControl {
            beta_residual: damped(opts.damp.outer_residuals),
            beta_factor: damped(opts.damp.factors),
            direct_link: opts.direct_link,
        };
        let inner = StepControl {
            beta_residual: damped(opts.damp.inner_residuals),
            ..outer
        };
        outer_step(&mut state, obs, priors, &outer);
        inner_step(&mut state, obs, priors, &inner);
        state.residuals_ready = true;
        iterations = it;

        if !state.is_finite() {
            status = Status::Diverged;
            state = last_finite;
            break;
        }
        let z = state.z_estimate();
        let diff: f64 = Zip::from(&z).and(&z_prev).fold(0.0, |a, &x, &y| a + (x - y).norm_sqr());
        let norm: f64 = z.iter().map(|v| v.norm_sqr()).sum();
        let residual = if norm > 0.0 { diff / norm } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
        z_prev = z;

        if let Some(tr) = truth {
            let m = score(&estimates_of(&state, obs.t_p()), tr, qpsk, it);
            trajectory.push(IterationRecord {
                iteration: it,
                mse_g_db: Some(m.mse_g_db()),
                mse_f_db: Some(m.mse_f_db()),
                mse_h_db: Some(m.mse_h_db()),
                mse_xd_db: m.mse_xd_db(),
                ser: m.ser,
                residual,
            });
        } else {
            trajectory.push(IterationRecord {
                iteration: it,
                mse_g_db: None,
                mse_f_db: None,
                mse_h_db: None,
                mse_xd_db: None,
                ser: None,
                residual,
            });
        }
        last_finite.clone_from(&state);
        if residual < opts.tol {
            status = Status::Converged;
            break;
        }
    }
    Attempt {
        state,
        status,
        iterations,
        trajectory,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub(crate) fn estimates_of(state: &AmpState, t_p: usize) -> Estimates {
    Estimates {
        g: state.g_hat.clone(),
        f: state.f_hat.clone(),
        h: state.h_hat.clone(),
        x_d: data_block(&state.x_hat, t_p),
    }
}

fn finish(
    a: Attempt,
    obs: &Observation<'_>,
    priors: &PriorSpec,
    beta: f64,
    attempts: usize,
) -> AmpOutput {
    let t_p = obs.t_p();
    let estimates = estimates_of(&a.state, t_p);
    let x_hard = (priors.data == DataPrior::Qpsk).then(|| hard_decide_qpsk(estimates.x_d.view()));
    AmpOutput {
        v_g: a.state.v_g.clone(),
        v_f: a.state.v_f.clone(),
        v_h: a.state.v_h.clone(),
        v_xd: a.state.v_x.slice(ndarray::s![.., t_p..]).to_owned(),
        estimates,
        x_hard,
        iterations: a.iterations,
        status: a.status,
        attempts,
        beta,
        trajectory: a.trajectory,
        seconds: a.seconds,
        state: a.state,
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::super::{DampSet, DirectLink, InitMode};
    use super::*;
    use crate::C64;
    use ndarray::{array, Axis};
    use proptest::prelude::*;

    fn opts(beta: f64, max_iters: usize) -> AmpOptions {
        AmpOptions {
            beta,
            max_iters,
            tol: 1e-300,
            restart_on_divergence: false,
            fit_restarts: 0,
            ..AmpOptions::default()
        }
    }

    #[test]
    fn damping_examples() {
        let cur = array![[1.0, 2.0]];
        let prev = array![[3.0, 5.0]];
        assert_eq!(apply_damping(&cur, &prev, 0.25), array![[2.5, 4.25]]);
        assert_eq!(apply_damping(&cur, &prev, 1.0), cur);
        assert_eq!(apply_damping(&cur, &prev, 0.0), prev);
        let c = array![[C64::new(2.0, -2.0)]];
        let p = array![[C64::new(0.0, 4.0)]];
        assert_eq!(apply_damping(&c, &p, 0.5), array![[C64::new(1.0, 1.0)]]);
    }

    #[test]
    fn unit_beta_equals_disabled_damping() {
        let fr = frame(8, 4, 2, 12, 4, 0.05, 31);
        let obs = Observation::from_realization(&fr, 0.05).unwrap();
        let a = tri_amp_run(&obs, &priors(), &opts(1.0, 15), None).unwrap();
        let off = AmpOptions {
            damp: DampSet {
                outer_residuals: false,
                inner_residuals: false,
                factors: false,
            },
            ..opts(0.15, 15)
        };
        let b = tri_amp_run(&obs, &priors(), &off, None).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn noiseless_truth_start_reconstructs_y() {
        let mut fr = frame(8, 4, 2, 12, 4, 0.0, 32);
        fr.y = fr.noiseless();
        let obs = Observation::from_realization(&fr, 0.0).unwrap();
        let truth = Estimates {
            g: fr.g.clone(),
            f: fr.f.clone(),
            h: fr.h.clone(),
            x_d: fr.x_data().to_owned(),
        };
        let o = AmpOptions {
            init: InitMode::OracleTruth(Box::new(truth)),
            ..opts(0.15, 5)
        };
        let out = tri_amp_run(&obs, &priors(), &o, Some(&fr)).unwrap();
        let st = &out.state;
        let mut c = st.f_hat.dot(&st.x_hat);
        ndarray::Zip::from(&mut c).and(&fr.s).for_each(|c, &on| {
            if !on {
                *c = C64::new(0.0, 0.0);
            }
        });
        let z = st.g_hat.dot(&c) + st.h_hat.dot(&st.x_hat);
        let err: f64 = (&z - &fr.y).iter().map(|v| v.norm_sqr()).sum();
        let norm: f64 = fr.y.iter().map(|v| v.norm_sqr()).sum();
        assert!((err / norm).sqrt() < 1e-8, "relative residual {}", (err / norm).sqrt());
        assert_eq!(out.trajectory.len(), out.iterations);
    }

    #[test]
    fn all_pilot_frame_keeps_pilots() {
        let fr = frame(8, 4, 2, 10, 10, 0.01, 33);
        let obs = Observation::from_realization(&fr, 0.01).unwrap();
        let out = tri_amp_run(&obs, &priors(), &opts(0.3, 30), Some(&fr)).unwrap();
        assert_eq!(out.estimates.x_d.dim(), (2, 0));
        assert_eq!(out.state.x_hat, fr.x);
        assert!(out.state.is_finite());
        assert!(out.trajectory.iter().all(|r| r.ser.is_none()));
    }

    #[test]
    fn high_snr_run_learns_the_channels() {
        let mut cfg = crate::model::SystemConfig {
            m: 32,
            n: 16,
            k: 4,
            t: 60,
            t_p: 12,
            ..crate::model::SystemConfig::desk()
        };
        cfg.sigma2 = crate::model::sigma_from_snr(&cfg, 30.0);
        let fr = FrameRealization::generate(&cfg, &crate::model::ChannelEnsemble::Iid).unwrap();
        let obs = Observation::from_realization(&fr, cfg.sigma2).unwrap();
        let out = tri_amp_run(&obs, &priors(), &AmpOptions { max_iters: 400, ..AmpOptions::default() }, Some(&fr)).unwrap();
        let m = score(&out.estimates, &fr, true, out.iterations);
        assert!(m.mse_g_db() < -15.0, "G {}", m.mse_g_db());
        assert!(m.mse_h_db() < -15.0, "H {}", m.mse_h_db());
        assert_eq!(m.ser, Some(0.0));
    }

    fn permute_ris(st: &AmpState, perm: &[usize]) -> AmpState {
        let cols = |a: &CMat| a.select(Axis(1), perm);
        let cols_r = |a: &RMat| a.select(Axis(1), perm);
        let rows = |a: &CMat| a.select(Axis(0), perm);
        let rows_r = |a: &RMat| a.select(Axis(0), perm);
        let mut p = st.clone();
        p.g_hat = cols(&st.g_hat);
        p.v_g = cols_r(&st.v_g);
        p.q_g = cols(&st.q_g);
        p.v_qg = cols_r(&st.v_qg);
        p.f_hat = rows(&st.f_hat);
        p.v_f = rows_r(&st.v_f);
        p.q_f = rows(&st.q_f);
        p.v_qf = rows_r(&st.v_qf);
        p.c_hat = rows(&st.c_hat);
        p.v_c = rows_r(&st.v_c);
        p.xi = rows(&st.xi);
        p.v_xi = rows_r(&st.v_xi);
        p.r_c = rows(&st.r_c);
        p.v_rc = rows_r(&st.v_rc);
        p.eta_hat = rows(&st.eta_hat);
        p.v_eta = rows_r(&st.v_eta);
        p
    }

    #[test]
    fn ris_permutation_equivariance() {
        let fr = frame(6, 5, 2, 8, 3, 0.1, 34);
        let perm = [3usize, 0, 4, 1, 2];
        let mut pf = fr.clone();
        pf.g = fr.g.select(Axis(1), &perm);
        pf.f = fr.f.select(Axis(0), &perm);
        pf.s = fr.s.select(Axis(0), &perm);
        let obs = Observation::from_realization(&fr, 0.1).unwrap();
        let pobs = Observation::from_realization(&pf, 0.1).unwrap();
        let mut a = random_state(&obs, 34);
        let mut b = permute_ris(&a, &perm);
        let ctl = StepControl {
            beta_residual: 0.4,
            beta_factor: 0.4,
            direct_link: DirectLink::Present,
        };
        for _ in 0..3 {
            outer_step(&mut a, &obs, &priors(), &ctl);
            inner_step(&mut a, &obs, &priors(), &ctl);
            outer_step(&mut b, &pobs, &priors(), &ctl);
            inner_step(&mut b, &pobs, &priors(), &ctl);
        }
        let pa = permute_ris(&a, &perm);
        assert!(max_abs_diff(&pa.g_hat, &b.g_hat) < 1e-10);
        assert!(max_abs_diff(&pa.f_hat, &b.f_hat) < 1e-10);
        assert!(max_abs_diff(&pa.c_hat, &b.c_hat) < 1e-10);
        assert!(max_abs_diff(&pa.h_hat, &b.h_hat) < 1e-10);
        assert!(max_abs_diff(&pa.x_hat, &b.x_hat) < 1e-10);
        assert!(max_abs_diff_r(&pa.v_f, &b.v_f) < 1e-10);
    }

    #[test]
    fn fit_ratio_of_the_truth_is_the_noise_energy() {
        let fr = frame(6, 4, 2, 10, 3, 0.2, 35);
        let obs = Observation::from_realization(&fr, 0.2).unwrap();
        let truth = Estimates {
            g: fr.g.clone(),
            f: fr.f.clone(),
            h: fr.h.clone(),
            x_d: fr.x_data().to_owned(),
        };
        let st = AmpState::init(&obs, &priors(), &InitMode::OracleTruth(Box::new(truth)), DirectLink::Present);
        let w: f64 = fr.w.iter().map(|v| v.norm_sqr()).sum();
        assert!((fit_ratio(&obs, &st) - w / (0.2 * 60.0)).abs() < 1e-12);
        let noiseless = Observation::from_realization(&fr, 0.0).unwrap();
        assert_eq!(fit_ratio(&noiseless, &st), 0.0);
    }

    #[test]
    fn poor_fits_trigger_fresh_starts_and_the_best_is_kept() {
        let fr = frame(8, 4, 2, 12, 4, 0.05, 36);
        let obs = Observation::from_realization(&fr, 0.05).unwrap();
        let strict = AmpOptions {
            fit_restarts: 3,
            fit_threshold: 1e-9,
            ..opts(0.3, 30)
        };
        let out = tri_amp_run(&obs, &priors(), &strict, None).unwrap();
        assert_eq!(out.attempts, 4);
        let best = fit_ratio(&obs, &out.state);
        let mut seed = 0u64;
        for _ in 0..4 {
            let single = AmpOptions {
                init: InitMode::RandomPrior { seed },
                fit_restarts: 0,
                ..strict.clone()
            };
            let one = tri_amp_run(&obs, &priors(), &single, None).unwrap();
            assert!(best <= fit_ratio(&obs, &one.state));
            seed = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
        }
        let lax = AmpOptions { fit_restarts: 3, fit_threshold: 1e9, ..opts(0.3, 30) };
        assert_eq!(tri_amp_run(&obs, &priors(), &lax, None).unwrap().attempts, 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn run_outputs_are_well_formed(seed in 0u64..1000, t_p in 0usize..6, beta in 0.05f64..1.0) {
            let fr = frame(6, 4, 2, 8, t_p, 0.1, seed);
            let obs = Observation::from_realization(&fr, 0.1).unwrap();
            let o = AmpOptions { beta, max_iters: 20, init: InitMode::RandomPrior { seed }, ..AmpOptions::default() };
            let out = tri_amp_run(&obs, &priors(), &o, None).unwrap();
            prop_assert!(out.iterations >= 1 && out.iterations <= 20);
            prop_assert_eq!(out.estimates.x_d.dim(), (2, 8 - t_p));
            prop_assert_eq!(out.state.x_hat.slice(ndarray::s![.., ..t_p]), fr.x_pilot());
            for v in out.v_xd.iter().chain(out.v_f.iter()) {
                prop_assert!(*v >= 0.0 && *v <= 1.0 + 1e-12);
            }
            for v in out.v_g.iter().chain(out.v_h.iter()) {
                prop_assert!(*v >= 0.0 && *v <= 1.0 + 1e-12);
            }
            let alphabet = crate::model::qpsk_alphabet();
            for x in out.x_hard.unwrap().iter() {
                prop_assert!(alphabet.contains(x));
            }
            for ((a, j), &on) in fr.s.indexed_iter() {
                if !on {
                    prop_assert_eq!(out.state.c_hat[[a, j]], C64::new(0.0, 0.0));
                }
            }
        }
    }
}
