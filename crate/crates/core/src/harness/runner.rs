//! Trial execution on a worker pool and aggregation of per-trial outcomes.

use super::{Algorithm, AmpSettings, ExperimentSpec, Thresholds};
use crate::amp::{bigamp_lmmse_baseline, tri_amp_run, Observation, PriorSpec, Status};
use crate::model::{
    score, snr_from_sigma, to_db, ChannelEnsemble, Constellation, FrameRealization, Metrics,
    SystemConfig,
};
use crate::replica::{replica_dual, ReplicaInit, ReplicaMode, ReplicaOptions, ReplicaParams};
use crate::rng::StreamSeeds;
use crate::{Error, Result};
use rayon::prelude::*;
use std::time::Instant;

/// One grid point; `index` keys the per-trial random streams.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub index: usize,
    pub cfg: SystemConfig,
}

/// Outcome of one algorithm on one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub point: usize,
    pub trial: usize,
    pub algorithm: Algorithm,
    /// `None` when the estimator returned an error.
    pub metrics: Option<Metrics>,
    pub status: Option<Status>,
    pub diverged: bool,
    pub iterations: usize,
    pub seconds: f64,
}

/// A trial diverged when the estimator failed, produced non-finite output, or
/// left some channel MSE at or above its prior power.
fn diverged(m: &Metrics, cfg: &SystemConfig) -> bool {
    [(m.mse_g, cfg.q_g), (m.mse_f, cfg.q_f), (m.mse_h, cfg.q_h)]
        .iter()
        .any(|&(mse, q)| !mse.is_finite() || (q > 0.0 && mse >= q))
}

/// Generate the frame of `(point, trial)` and run every Monte Carlo algorithm of
/// `algos` on it.
pub fn run_trial(
    point: &Point,
    trial: usize,
    master_seed: u64,
    ensemble: &ChannelEnsemble,
    amp: &AmpSettings,
    algos: &[Algorithm],
) -> Result<Vec<TrialRecord>> {
    let mut cfg = point.cfg.clone();
    cfg.seeds = StreamSeeds::for_trial(master_seed, point.index as u64, trial as u64);
    let frame = FrameRealization::generate(&cfg, ensemble)?;
    let obs = Observation::from_realization(&frame, cfg.sigma2)?;
    let priors = PriorSpec::from_config(&cfg);
    let opts = amp.options(cfg.seeds.init);
    let qpsk = cfg.constellation == Constellation::Qpsk;

    let mut out = Vec::new();
    for &algo in algos.iter().filter(|a| a.is_monte_carlo()) {
        let start = Instant::now();
        let outcome = match algo {
            Algorithm::TriAmp => tri_amp_run(&obs, &priors, &opts, None).map(|o| {
                let m = score(&o.estimates, &frame, qpsk, o.iterations);
                (m, Some(o.status), o.iterations)
            }),
            Algorithm::BigampLmmse => bigamp_lmmse_baseline(&obs, &priors, &opts).map(|o| {
                let m = score(&o.estimates, &frame, qpsk, o.iterations);
                let status = if !o.finite {
                    Status::Diverged
                } else if o.converged {
                    Status::Converged
                } else {
                    Status::MaxIters
                };
                (m, Some(status), o.iterations)
            }),
            Algorithm::Replica => unreachable!(),
        };
        let seconds = start.elapsed().as_secs_f64();
        out.push(match outcome {
            Ok((m, status, iterations)) => TrialRecord {
                point: point.index,
                trial,
                algorithm: algo,
                diverged: status == Some(Status::Diverged) || diverged(&m, &cfg),
                metrics: Some(m),
                status,
                iterations,
                seconds,
            },
            Err(Error::Numerical(_)) => TrialRecord {
                point: point.index,
                trial,
                algorithm: algo,
                metrics: None,
                status: None,
                diverged: true,
                iterations: 0,
                seconds,
            },
            Err(e) => return Err(e),
        });
    }
    Ok(out)
}

/// Run `trials` trials at every point on a pool of `workers` threads. Records
/// come back ordered by `(point, trial, algorithm)` whatever the scheduling.
pub fn run_points(
    points: &[Point],
    trials: usize,
    master_seed: u64,
    ensemble: &ChannelEnsemble,
    amp: &AmpSettings,
    algos: &[Algorithm],
    workers: usize,
) -> Result<Vec<TrialRecord>> {
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..trials).map(move |t| (p, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let nested: Vec<Vec<TrialRecord>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, t)| run_trial(&points[p], t, master_seed, ensemble, amp, algos))
            .collect::<Result<_>>()
    })?;
    Ok(nested.into_iter().flatten().collect())
}

/// Mean and standard error of a linear quantity, reported in dB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Standard error of the mean (linear units); `None` with fewer than two values.
    pub se: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let se = (values.len() > 1).then(|| {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1.0) / n).sqrt()
        });
        Some(Self { mean, se })
    }

    pub fn mean_db(&self) -> f64 {
        to_db(self.mean)
    }

    /// First-order propagation of the linear standard error into dB.
    pub fn se_db(&self) -> Option<f64> {
        self.se.map(|se| {
            if self.mean > 0.0 {
                10.0 / std::f64::consts::LN_10 * se / self.mean
            } else {
                0.0
            }
        })
    }
}

/// Aggregated outcome of one algorithm at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub point: usize,
    pub cfg: SystemConfig,
    pub algorithm: Algorithm,
    /// Trials run (Monte Carlo) or 0 (replica).
    pub trials: usize,
    /// Trials whose channel MSEs were finite and entered the means.
    pub finite_trials: usize,
    pub mse_g: Option<Summary>,
    pub mse_f: Option<Summary>,
    pub mse_h: Option<Summary>,
    pub mse_xd: Option<Summary>,
    pub ser: Option<Summary>,
    pub iterations: f64,
    pub divergences: usize,
    /// Success indicators for G, F, H, X_d under the phase-diagram thresholds.
    pub success: [Option<bool>; 4],
    pub replica_init: Option<ReplicaInit>,
    /// Whether the two replica branches disagree at this point.
    pub replica_distinct: Option<bool>,
    pub seconds_per_trial: f64,
    pub seconds_per_iteration: f64,
}

impl ResultRow {
    pub fn snr_db(&self) -> f64 {
        snr_from_sigma(&self.cfg, self.cfg.sigma2)
    }
}

fn success_flags(
    g: Option<f64>,
    f: Option<f64>,
    h: Option<f64>,
    ser: Option<f64>,
    th: &Thresholds,
) -> [Option<bool>; 4] {
    let ok = |v: Option<f64>| v.map(|v| to_db(v) < th.phase_mse_db);
    [ok(g), ok(f), ok(h), ser.map(|s| s < th.phase_ser)]
}

/// Aggregate the records of one `(point, algorithm)`; records of other points
/// or algorithms are ignored.
pub fn aggregate(
    point: &Point,
    algo: Algorithm,
    records: &[TrialRecord],
    th: &Thresholds,
) -> ResultRow {
    let mine: Vec<&TrialRecord> = records
        .iter()
        .filter(|r| r.point == point.index && r.algorithm == algo)
        .collect();
    let finite: Vec<&Metrics> = mine
        .iter()
        .filter_map(|r| r.metrics.as_ref())
        .filter(|m| m.mse_g.is_finite() && m.mse_f.is_finite() && m.mse_h.is_finite())
        .collect();
    let collect = |f: &dyn Fn(&Metrics) -> Option<f64>| {
        let v: Vec<f64> = finite.iter().filter_map(|m| f(m)).filter(|v| v.is_finite()).collect();
        Summary::of(&v)
    };
    let mse_g = collect(&|m| Some(m.mse_g));
    let mse_f = collect(&|m| Some(m.mse_f));
    let mse_h = collect(&|m| Some(m.mse_h));
    let mse_xd = collect(&|m| m.mse_xd);
    let ser = collect(&|m| m.ser);
    let n = mine.len().max(1) as f64;
    let iters: usize = mine.iter().map(|r| r.iterations).sum();
    let secs: f64 = mine.iter().map(|r| r.seconds).sum();
    ResultRow {
        point: point.index,
        cfg: point.cfg.clone(),
        algorithm: algo,
        trials: mine.len(),
        finite_trials: finite.len(),
        success: success_flags(
            mse_g.map(|s| s.mean),
            mse_f.map(|s| s.mean),
            mse_h.map(|s| s.mean),
            ser.map(|s| s.mean),
            th,
        ),
        mse_g,
        mse_f,
        mse_h,
        mse_xd,
        ser,
        iterations: iters as f64 / n,
        divergences: mine.iter().filter(|r| r.diverged).count(),
        replica_init: None,
        replica_distinct: None,
        seconds_per_trial: secs / n,
        seconds_per_iteration: if iters > 0 { secs / iters as f64 } else { 0.0 },
    }
}

/// Replica prediction at a point as a result row.
pub(crate) fn replica_row(point: &Point, spec: &ExperimentSpec) -> Result<ResultRow> {
    let mode = if spec.amp.direct_link {
        ReplicaMode::Full
    } else {
        ReplicaMode::NoDirectLink
    };
    let params = ReplicaParams::from_config(&point.cfg, mode);
    let start = Instant::now();
    let dual = replica_dual(&params, &ReplicaOptions::default())?;
    let seconds = start.elapsed().as_secs_f64();
    let chosen = match spec.replica_init {
        ReplicaInit::Uninformative => &dual.uninformative,
        _ => &dual.informative,
    };
    let s = &chosen.state;
    let exact = |v: f64| Some(Summary { mean: v, se: None });
    let has_data = point.cfg.t_d() > 0;
    let ser = if has_data { s.ser } else { None };
    Ok(ResultRow {
        point: point.index,
        cfg: point.cfg.clone(),
        algorithm: Algorithm::Replica,
        trials: 0,
        finite_trials: 0,
        mse_g: exact(s.mse_g),
        mse_f: exact(s.mse_f),
        mse_h: exact(s.mse_h),
        mse_xd: if has_data { exact(s.mse_xd) } else { None },
        ser: ser.and_then(exact),
        iterations: chosen.iterations as f64,
        divergences: usize::from(!chosen.converged || chosen.invalid_regime),
        success: success_flags(Some(s.mse_g), Some(s.mse_f), Some(s.mse_h), ser, &spec.thresholds),
        replica_init: Some(chosen.init),
        replica_distinct: Some(dual.distinct),
        seconds_per_trial: seconds,
        seconds_per_iteration: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny_point(index: usize) -> Point {
        let mut cfg = SystemConfig::desk();
        cfg.m = 8;
        cfg.n = 4;
        cfg.k = 2;
        cfg.t = 12;
        cfg.t_p = 4;
        cfg.sigma2 = 0.05;
        Point { index, cfg }
    }

    fn record(point: usize, trial: usize, g: f64, ser: f64) -> TrialRecord {
        TrialRecord {
            point,
            trial,
            algorithm: Algorithm::TriAmp,
            metrics: Some(Metrics {
                mse_g: g,
                mse_f: g / 2.0,
                mse_h: g / 4.0,
                mse_xd: Some(g / 8.0),
                ser: Some(ser),
                iterations: 10,
            }),
            status: Some(Status::Converged),
            diverged: false,
            iterations: 10,
            seconds: 0.5,
        }
    }

    #[test]
    fn summary_matches_hand_values() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 6.0]).unwrap();
        assert_eq!(s.mean, 3.0);
        // sample variance 14/3, se = sqrt(14/3/4)
        assert!((s.se.unwrap() - (14.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert!((s.mean_db() - 10.0 * 3f64.log10()).abs() < 1e-12);
        assert!(Summary::of(&[]).is_none());
        assert!(Summary::of(&[2.0]).unwrap().se.is_none());
    }

    #[test]
    fn trial_outcomes_ignore_worker_count() {
        let pts = vec![tiny_point(0), tiny_point(1)];
        let amp = AmpSettings { max_iters: 30, ..AmpSettings::default() };
        let algos = [Algorithm::TriAmp, Algorithm::BigampLmmse];
        let run = |w| {
            run_points(&pts, 3, 9, &ChannelEnsemble::Iid, &amp, &algos, w)
                .unwrap()
                .into_iter()
                .map(|mut r| {
                    r.seconds = 0.0;
                    r
                })
                .collect::<Vec<_>>()
        };
        let a = run(1);
        assert_eq!(a.len(), 2 * 3 * 2);
        assert_eq!(a, run(3));
        assert_ne!(a[0].metrics, a[2].metrics);
    }

    #[test]
    fn divergence_rule() {
        let cfg = SystemConfig::desk();
        let mut m = record(0, 0, 0.1, 0.0).metrics.unwrap();
        assert!(!diverged(&m, &cfg));
        m.mse_h = 1.0;
        assert!(diverged(&m, &cfg));
        m.mse_h = f64::NAN;
        assert!(diverged(&m, &cfg));
    }

    proptest! {
        #[test]
        fn aggregation_matches_scalar_recomputation(
            vals in proptest::collection::vec((1e-6f64..10.0, 0.0f64..1.0), 1..40)
        ) {
            let pt = tiny_point(3);
            let mut recs: Vec<TrialRecord> = vals
                .iter()
                .enumerate()
                .map(|(i, &(g, s))| record(3, i, g, s))
                .collect();
            recs.push(record(4, 0, 1e3, 1.0));
            let row = aggregate(&pt, Algorithm::TriAmp, &recs, &Thresholds::default());
            let n = vals.len() as f64;
            let mean_g = vals.iter().map(|v| v.0).sum::<f64>() / n;
            let mean_s = vals.iter().map(|v| v.1).sum::<f64>() / n;
            prop_assert_eq!(row.trials, vals.len());
            prop_assert!((row.mse_g.unwrap().mean - mean_g).abs() <= 1e-12 * mean_g.max(1.0));
            prop_assert!((row.mse_f.unwrap().mean - mean_g / 2.0).abs() <= 1e-12 * mean_g.max(1.0));
            prop_assert!((row.ser.unwrap().mean - mean_s).abs() <= 1e-12);
            if vals.len() > 1 {
                let var = vals.iter().map(|v| (v.0 - mean_g).powi(2)).sum::<f64>() / (n - 1.0);
                prop_assert!((row.mse_g.unwrap().se.unwrap() - (var / n).sqrt()).abs() <= 1e-9 * mean_g.max(1.0));
            }
            prop_assert_eq!(row.iterations, 10.0);
            prop_assert_eq!(row.success[0], Some(10.0 * mean_g.log10() < -20.0));
        }
    }
}
