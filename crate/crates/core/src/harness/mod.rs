//! Experiment driver: configuration files, Monte Carlo trials on a worker
//! pool, sweep and search protocols, and CSV output.

mod config;
mod output;
mod runner;
mod sweeps;

pub use config::{emit_config, load_config, parse_config, KEYS};
pub use output::{
    emit_csv, emit_timing, min_pilot_csv, replica_table_csv, rows_csv, timing_csv, timing_path,
    MIN_PILOT_HEADER,
    REPLICA_HEADER, ROW_HEADER, TIMING_HEADER,
};
pub use runner::{aggregate, run_points, run_trial, Point, ResultRow, Summary, TrialRecord};
pub use sweeps::{
    min_pilot_search, replica_table, run_phase_diagram, run_pilot_sweep, run_single,
    run_snr_sweep, MinPilotResult, ReplicaRow,
};

use crate::amp::{AmpOptions, DampSet, DirectLink, InitMode};
use crate::model::{sigma_from_snr, ChannelEnsemble, SystemConfig};
use crate::replica::ReplicaInit;
use crate::{Error, Result};
use std::path::PathBuf;

/// Estimators a sweep can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    TriAmp,
    BigampLmmse,
    Replica,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::TriAmp, Algorithm::BigampLmmse, Algorithm::Replica];

    pub fn tag(&self) -> &'static str {
        match self {
            Algorithm::TriAmp => "tri-amp",
            Algorithm::BigampLmmse => "bigamp-lmmse",
            Algorithm::Replica => "replica",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.tag() == tag.trim())
    }

    /// Parse a comma-separated list such as `tri-amp,replica`.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| {
                Self::from_tag(t).ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "unknown algorithm '{}' (expected tri-amp, bigamp-lmmse or replica)",
                        t.trim()
                    ))
                })
            })
            .collect()
    }

    pub fn is_monte_carlo(&self) -> bool {
        !matches!(self, Algorithm::Replica)
    }
}

/// Noise level of a point, either absolute or through the SNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    Sigma2(f64),
    SnrDb(f64),
}

/// Which grid a run walks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Single,
    Snr,
    Pilots,
    Phase,
    MinPilots,
}

impl SweepKind {
    pub fn tag(&self) -> &'static str {
        match self {
            SweepKind::Single => "single",
            SweepKind::Snr => "snr",
            SweepKind::Pilots => "pilots",
            SweepKind::Phase => "phase",
            SweepKind::MinPilots => "min-pilots",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        [
            SweepKind::Single,
            SweepKind::Snr,
            SweepKind::Pilots,
            SweepKind::Phase,
            SweepKind::MinPilots,
        ]
        .into_iter()
        .find(|k| k.tag() == tag)
    }
}

/// Estimator settings shared by Tri-AMP and the baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmpSettings {
    pub beta: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub direct_link: bool,
    pub damp: DampSet,
    pub restart_on_divergence: bool,
    pub fit_restarts: usize,
    pub fit_threshold: f64,
}

impl Default for AmpSettings {
    fn default() -> Self {
        let d = AmpOptions::default();
        Self {
            beta: d.beta,
            max_iters: d.max_iters,
            tol: d.tol,
            direct_link: true,
            damp: d.damp,
            restart_on_divergence: d.restart_on_divergence,
            fit_restarts: d.fit_restarts,
            fit_threshold: d.fit_threshold,
        }
    }
}

impl AmpSettings {
    /// Options for one trial; the random start is keyed by the trial's init seed.
    pub fn options(&self, init_seed: u64) -> AmpOptions {
        AmpOptions {
            beta: self.beta,
            max_iters: self.max_iters,
            tol: self.tol,
            init: InitMode::RandomPrior { seed: init_seed },
            direct_link: if self.direct_link {
                DirectLink::Present
            } else {
                DirectLink::Absent
            },
            damp: self.damp,
            restart_on_divergence: self.restart_on_divergence,
            fit_restarts: self.fit_restarts,
            fit_threshold: self.fit_threshold,
        }
    }
}

/// Success thresholds and search settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// Channel MSE below which a phase-diagram cell counts as a success, dB.
    pub phase_mse_db: f64,
    /// SER below which a phase-diagram cell counts as a success.
    pub phase_ser: f64,
    /// Channel MSE a noiseless probe must reach, dB.
    pub noiseless_mse_db: f64,
    pub probe_trials: usize,
    pub probe_successes: usize,
    pub t_p_min: usize,
    pub t_p_max: usize,
    /// Iteration budget and stopping tolerance of noiseless probes.
    pub probe_max_iters: usize,
    pub probe_tol: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            phase_mse_db: -20.0,
            phase_ser: 1e-4,
            noiseless_mse_db: -60.0,
            probe_trials: 10,
            probe_successes: 8,
            t_p_min: 1,
            t_p_max: 32,
            probe_max_iters: 1000,
            probe_tol: 1e-8,
        }
    }
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    /// Base system; `sigma2` is overwritten per point from [`ExperimentSpec::noise`].
    pub system: SystemConfig,
    pub noise: Noise,
    pub ensemble: ChannelEnsemble,
    pub sweep: SweepKind,
    pub snr_db_list: Vec<f64>,
    pub t_p_list: Vec<usize>,
    pub rho_list: Vec<f64>,
    pub t_list: Vec<usize>,
    pub trials: usize,
    pub algorithms: Vec<Algorithm>,
    pub out: Option<PathBuf>,
    pub workers: usize,
    pub seed: u64,
    pub amp: AmpSettings,
    pub thresholds: Thresholds,
    /// Replica branch reported in sweep rows.
    pub replica_init: ReplicaInit,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            system: SystemConfig::desk(),
            noise: Noise::SnrDb(30.0),
            ensemble: ChannelEnsemble::Iid,
            sweep: SweepKind::Single,
            snr_db_list: (0..=8).map(|i| 5.0 * i as f64).collect(),
            t_p_list: vec![8, 12, 16, 20, 24, 32, 40, 48],
            rho_list: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            t_list: vec![50, 75, 100, 150, 200],
            trials: 100,
            algorithms: Algorithm::ALL.to_vec(),
            out: None,
            workers: 1,
            seed: 0,
            amp: AmpSettings::default(),
            thresholds: Thresholds::default(),
            replica_init: ReplicaInit::Informative,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let mut base = self.system.clone();
        base.sigma2 = 0.0;
        base.validate()?;
        self.ensemble.validate()?;
        match self.noise {
            Noise::Sigma2(s) if !(s >= 0.0 && s.is_finite()) => {
                return bad(format!("sigma2={s} must be finite and >= 0"))
            }
            Noise::SnrDb(s) if s.is_nan() => return bad("snr_db is NaN".into()),
            _ => {}
        }
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        if self.algorithms.is_empty() {
            return bad("algorithms must not be empty".into());
        }
        if !(0.0..=1.0).contains(&self.amp.beta) {
            return bad(format!("beta={} outside [0, 1]", self.amp.beta));
        }
        if !(self.amp.fit_threshold > 0.0) {
            return bad(format!("fit_threshold={} must be > 0", self.amp.fit_threshold));
        }
        if !(self.amp.tol > 0.0) || !(self.thresholds.probe_tol > 0.0) {
            return bad("tolerances must be > 0".into());
        }
        let th = &self.thresholds;
        if th.probe_trials == 0 || th.probe_successes > th.probe_trials {
            return bad(format!(
                "need 1 <= probe_trials and probe_successes <= probe_trials (got {} of {})",
                th.probe_successes, th.probe_trials
            ));
        }
        if th.t_p_min > th.t_p_max {
            return bad(format!("t_p_min={} exceeds t_p_max={}", th.t_p_min, th.t_p_max));
        }
        let empty = |name: &str| Err(Error::InvalidConfig(format!("{name} must not be empty")));
        match self.sweep {
            SweepKind::Single => {}
            SweepKind::Snr => {
                if self.snr_db_list.is_empty() {
                    return empty("snr_db_list");
                }
                if self.snr_db_list.iter().any(|s| !s.is_finite()) {
                    return bad("snr_db_list entries must be finite".into());
                }
            }
            SweepKind::Pilots => {
                if self.t_p_list.is_empty() {
                    return empty("t_p_list");
                }
            }
            SweepKind::Phase => {
                if self.rho_list.is_empty() {
                    return empty("rho_list");
                }
                if self.t_list.is_empty() {
                    return empty("t_list");
                }
                if let Some(r) = self.rho_list.iter().find(|r| !(0.0..=1.0).contains(*r)) {
                    return bad(format!("rho_list entry {r} outside [0, 1]"));
                }
                if let Some(t) = self.t_list.iter().find(|&&t| t < self.system.t_p || t == 0) {
                    return bad(format!("t_list entry {t} is shorter than t_p={}", self.system.t_p));
                }
            }
            SweepKind::MinPilots => {
                if self.t_list.is_empty() {
                    return empty("t_list");
                }
                if self.t_list.contains(&0) {
                    return bad("t_list entries must be >= 1".into());
                }
            }
        }
        Ok(())
    }

    /// System of one grid point with the noise resolved.
    pub fn point_config(&self, snr_db: Option<f64>, t_p: usize, rho: f64, t: usize) -> SystemConfig {
        let mut cfg = self.system.clone();
        cfg.t_p = t_p;
        cfg.rho = rho;
        cfg.t = t;
        if !self.amp.direct_link {
            cfg.q_h = 0.0;
        }
        cfg.sigma2 = match (snr_db, self.noise) {
            (Some(s), _) | (None, Noise::SnrDb(s)) => sigma_from_snr(&cfg, s),
            (None, Noise::Sigma2(s)) => s,
        };
        cfg
    }

    pub fn wants(&self, algo: Algorithm) -> bool {
        self.algorithms.contains(&algo)
    }
}
