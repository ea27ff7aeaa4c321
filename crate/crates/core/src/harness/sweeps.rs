//! Sweep and search protocols built on the trial runner.

use super::runner::{aggregate, replica_row, run_points, Point, ResultRow, TrialRecord};
use super::{Algorithm, AmpSettings, ExperimentSpec, SweepKind};
use crate::model::{sigma_from_snr, SystemConfig};
use crate::replica::{
    fixed_point_residual, replica_dual, ReplicaInit, ReplicaMode, ReplicaOptions, ReplicaOutcome,
    ReplicaParams,
};
use crate::Result;
use std::collections::BTreeMap;

fn base_point(spec: &ExperimentSpec, snr_db: Option<f64>, t_p: usize, rho: f64, t: usize) -> SystemConfig {
    spec.point_config(snr_db, t_p, rho, t)
}

/// Grid points of the spec's sweep kind; `MinPilots` has no fixed grid.
pub(crate) fn points(spec: &ExperimentSpec, kind: SweepKind) -> Vec<Point> {
    let s = &spec.system;
    let cfgs: Vec<SystemConfig> = match kind {
        SweepKind::Single | SweepKind::MinPilots => vec![base_point(spec, None, s.t_p, s.rho, s.t)],
        SweepKind::Snr => spec
            .snr_db_list
            .iter()
            .map(|&snr| base_point(spec, Some(snr), s.t_p, s.rho, s.t))
            .collect(),
        SweepKind::Pilots => {
            let t_d = s.t_d();
            spec.t_p_list
                .iter()
                .map(|&tp| base_point(spec, None, tp, s.rho, tp + t_d))
                .collect()
        }
        SweepKind::Phase => spec
            .rho_list
            .iter()
            .flat_map(|&rho| spec.t_list.iter().map(move |&t| (rho, t)))
            .map(|(rho, t)| base_point(spec, None, s.t_p, rho, t))
            .collect(),
    };
    cfgs.into_iter()
        .enumerate()
        .map(|(index, cfg)| Point { index, cfg })
        .collect()
}

fn run_grid(spec: &ExperimentSpec, kind: SweepKind) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let pts = points(spec, kind);
    let records = run_points(
        &pts,
        spec.trials,
        spec.seed,
        &spec.ensemble,
        &spec.amp,
        &spec.algorithms,
        spec.workers,
    )?;
    let mut rows = Vec::with_capacity(pts.len() * spec.algorithms.len());
    for p in &pts {
        for &algo in &spec.algorithms {
            rows.push(match algo {
                Algorithm::Replica => replica_row(p, spec)?,
                _ => aggregate(p, algo, &records, &spec.thresholds),
            });
        }
    }
    Ok(rows)
}

/// One point at the base configuration.
pub fn run_single(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    run_grid(spec, SweepKind::Single)
}

/// One row per `(snr_db, algorithm)`.
pub fn run_snr_sweep(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    run_grid(spec, SweepKind::Snr)
}

/// One row per `(t_p, algorithm)` with the data length held at `t − t_p` of the base.
pub fn run_pilot_sweep(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    run_grid(spec, SweepKind::Pilots)
}

/// One row per `(rho, t, algorithm)` with success indicators.
pub fn run_phase_diagram(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    run_grid(spec, SweepKind::Phase)
}

/// Minimum pilot length of one algorithm at one frame length.
#[derive(Debug, Clone, PartialEq)]
pub struct MinPilotResult {
    pub t: usize,
    pub algorithm: Algorithm,
    /// `None` when even the largest probed length fails.
    pub min_t_p: Option<usize>,
    /// `(t_p, successes)` of every probe, in probe order.
    pub probes: Vec<(usize, usize)>,
    pub probe_trials: usize,
}

fn noiseless_success(rec: &TrialRecord, limit: f64) -> bool {
    rec.metrics.as_ref().is_some_and(|m| {
        [m.mse_g, m.mse_f, m.mse_h].iter().all(|&v| v < limit) && m.ser.is_none_or(|s| s == 0.0)
    })
}

/// Noiseless search for the shortest pilot block that succeeds: channel MSEs
/// below the threshold and no symbol errors in at least `probe_successes` of
/// `probe_trials` trials. Success is assumed monotone in `t_p`, so the search
/// bisects `[t_p_min, min(t_p_max, t)]`.
pub fn min_pilot_search(spec: &ExperimentSpec) -> Result<Vec<MinPilotResult>> {
    spec.validate()?;
    let th = spec.thresholds;
    let limit = 10f64.powf(th.noiseless_mse_db / 10.0);
    let amp = AmpSettings {
        max_iters: th.probe_max_iters,
        tol: th.probe_tol,
        ..spec.amp
    };
    let mut out = Vec::new();
    for (ti, &t) in spec.t_list.iter().enumerate() {
        for &algo in &spec.algorithms {
            let mut log: BTreeMap<usize, usize> = BTreeMap::new();
            let mut order = Vec::new();
            let mut probe = |t_p: usize| -> Result<bool> {
                if let Some(&s) = log.get(&t_p) {
                    return Ok(s >= th.probe_successes);
                }
                let mut cfg = spec.point_config(None, t_p, spec.system.rho, t);
                cfg.sigma2 = 0.0;
                let successes = match algo {
                    Algorithm::Replica => {
                        let mode = if spec.amp.direct_link {
                            ReplicaMode::Full
                        } else {
                            ReplicaMode::NoDirectLink
                        };
                        let params = ReplicaParams::from_config(&cfg, mode);
                        let out = crate::replica::replica_fixed_point(
                            &params,
                            ReplicaInit::Informative,
                            &ReplicaOptions::default(),
                        )?;
                        let s = out.state;
                        let ok = [s.mse_g, s.mse_f, s.mse_h].iter().all(|&v| v < limit)
                            && (cfg.t_d() == 0 || s.ser.is_none_or(|e| e == 0.0));
                        if ok {
                            th.probe_trials
                        } else {
                            0
                        }
                    }
                    _ => {
                        let pt = Point {
                            index: (ti << 32) | t_p,
                            cfg,
                        };
                        let recs = run_points(
                            &[pt],
                            th.probe_trials,
                            spec.seed,
                            &spec.ensemble,
                            &amp,
                            &[algo],
                            spec.workers,
                        )?;
                        recs.iter().filter(|r| noiseless_success(r, limit)).count()
                    }
                };
                log.insert(t_p, successes);
                order.push((t_p, successes));
                Ok(successes >= th.probe_successes)
            };
            let hi = th.t_p_max.min(t);
            let lo = th.t_p_min.min(hi);
            let min_t_p = if probe(hi)? {
                let (mut lo, mut hi) = (lo, hi);
                while lo < hi {
                    let mid = lo + (hi - lo) / 2;
                    if probe(mid)? {
                        hi = mid;
                    } else {
                        lo = mid + 1;
                    }
                }
                Some(hi)
            } else {
                None
            };
            out.push(MinPilotResult {
                t,
                algorithm: algo,
                min_t_p,
                probes: order,
                probe_trials: th.probe_trials,
            });
        }
    }
    Ok(out)
}

/// One replica fixed point of the table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaRow {
    pub snr_db: f64,
    pub cfg: SystemConfig,
    pub mode: ReplicaMode,
    /// `"uninformative"`, `"informative"`, or `"both"` when they coincide.
    pub label: &'static str,
    pub outcome: ReplicaOutcome,
    pub residual: f64,
}

/// Replica fixed points over the spec's SNR grid. Both branches are listed
/// where they differ by more than `1e-6`, otherwise one row labelled `both`.
pub fn replica_table(spec: &ExperimentSpec) -> Result<Vec<ReplicaRow>> {
    spec.validate()?;
    let mode = if spec.amp.direct_link {
        ReplicaMode::Full
    } else {
        ReplicaMode::NoDirectLink
    };
    let s = &spec.system;
    let mut rows = Vec::new();
    for &snr in &spec.snr_db_list {
        let mut cfg = spec.point_config(None, s.t_p, s.rho, s.t);
        cfg.sigma2 = sigma_from_snr(&cfg, snr);
        let params = ReplicaParams::from_config(&cfg, mode);
        let dual = replica_dual(&params, &ReplicaOptions::default())?;
        let mut push = |label, outcome: ReplicaOutcome| {
            rows.push(ReplicaRow {
                snr_db: snr,
                cfg: cfg.clone(),
                mode,
                label,
                residual: fixed_point_residual(&params, &outcome.state),
                outcome,
            })
        };
        if dual.distinct {
            push("uninformative", dual.uninformative);
            push("informative", dual.informative);
        } else {
            push("both", dual.informative);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ExperimentSpec {
        let mut spec = ExperimentSpec::default();
        spec.system.m = 8;
        spec.system.n = 4;
        spec.system.k = 2;
        spec.system.t = 20;
        spec.system.t_p = 6;
        spec.trials = 2;
        spec.amp.max_iters = 20;
        spec
    }

    #[test]
    fn row_count_is_points_times_algorithms() {
        let mut spec = small_spec();
        spec.sweep = SweepKind::Snr;
        spec.snr_db_list = vec![0.0, 20.0, 40.0];
        let rows = run_snr_sweep(&spec).unwrap();
        assert_eq!(rows.len(), 3 * 3);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.point, i / 3);
            assert_eq!(r.algorithm, spec.algorithms[i % 3]);
        }
        assert!((rows[3].snr_db() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn pilot_sweep_keeps_data_length() {
        let mut spec = small_spec();
        spec.t_p_list = vec![2, 6, 10];
        spec.algorithms = vec![Algorithm::Replica];
        let rows = run_pilot_sweep(&spec).unwrap();
        for r in &rows {
            assert_eq!(r.cfg.t_d(), 14);
        }
    }

    #[test]
    fn all_pilot_frame_has_no_ser() {
        let mut spec = small_spec();
        spec.system.t_p = 20;
        let rows = run_single(&spec).unwrap();
        for r in rows {
            assert!(r.ser.is_none(), "{:?}", r.algorithm);
            assert!(r.mse_xd.is_none());
        }
    }

    #[test]
    fn phase_grid_is_rho_major() {
        let mut spec = small_spec();
        spec.rho_list = vec![0.0, 0.3];
        spec.t_list = vec![10, 20];
        spec.algorithms = vec![Algorithm::Replica];
        let rows = run_phase_diagram(&spec).unwrap();
        let coords: Vec<(f64, usize)> = rows.iter().map(|r| (r.cfg.rho, r.cfg.t)).collect();
        assert_eq!(coords, vec![(0.0, 10), (0.0, 20), (0.3, 10), (0.3, 20)]);
        assert_eq!(rows[0].success[0], Some(false));
        assert_eq!(rows[0].success[1], Some(false));
    }

    #[test]
    fn replica_table_labels() {
        let mut spec = small_spec();
        spec.snr_db_list = vec![10.0, 30.0];
        let rows = replica_table(&spec).unwrap();
        assert!(rows.len() >= 2);
        for r in &rows {
            assert!(r.residual <= 1e-9);
            assert!(["both", "uninformative", "informative"].contains(&r.label));
        }
    }

    #[test]
    fn replica_min_pilots_reports_infeasible() {
        let mut spec = small_spec();
        spec.algorithms = vec![Algorithm::Replica];
        spec.t_list = vec![20];
        spec.system.rho = 0.0;
        spec.thresholds.t_p_max = 4;
        let res = min_pilot_search(&spec).unwrap();
        assert_eq!(res.len(), 1);
        assert_eq!(res[0].min_t_p, None);
        assert_eq!(res[0].probes, vec![(4, 0)]);
    }
}
