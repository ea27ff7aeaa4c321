//! CSV artifacts. Result files carry no timing so reruns are byte-identical;
//! wall-clock figures go to a separate timing file.

use super::runner::{ResultRow, Summary};
use super::sweeps::{MinPilotResult, ReplicaRow};
use super::ExperimentSpec;
use crate::model::{to_db, ChannelEnsemble};
use crate::Result;
use std::path::{Path, PathBuf};

pub const ROW_HEADER: &[&str] = &[
    "point",
    "algorithm",
    "m",
    "n",
    "k",
    "t",
    "t_p",
    "t_d",
    "rho",
    "sigma2",
    "snr_db",
    "q_g",
    "q_f",
    "q_h",
    "constellation",
    "ensemble",
    "beta",
    "max_iters",
    "seed",
    "trials",
    "finite_trials",
    "mse_g_db",
    "mse_g_se_db",
    "mse_f_db",
    "mse_f_se_db",
    "mse_h_db",
    "mse_h_se_db",
    "mse_xd_db",
    "mse_xd_se_db",
    "ser",
    "ser_se",
    "iterations",
    "divergences",
    "success_g",
    "success_f",
    "success_h",
    "success_xd",
    "replica_init",
    "replica_distinct",
];

pub const TIMING_HEADER: &[&str] = &[
    "point",
    "algorithm",
    "trials",
    "seconds_per_trial",
    "seconds_per_iteration",
];

pub const MIN_PILOT_HEADER: &[&str] = &[
    "t",
    "algorithm",
    "min_t_p",
    "probe_trials",
    "probes",
];

pub const REPLICA_HEADER: &[&str] = &[
    "snr_db",
    "sigma2",
    "m",
    "n",
    "k",
    "t",
    "t_p",
    "rho",
    "mode",
    "init",
    "converged",
    "iterations",
    "mse_g_db",
    "mse_f_db",
    "mse_h_db",
    "mse_xd_db",
    "ser",
    "m_g",
    "m_f",
    "m_h",
    "m_xd",
    "residual",
];

fn db(v: f64) -> String {
    format!("{:.6}", to_db(v))
}

fn sci(v: f64) -> String {
    format!("{v:.6e}")
}

fn opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map(f).unwrap_or_default()
}

fn flag(v: Option<bool>) -> String {
    opt(v, |b| u8::from(b).to_string())
}

fn mean_se(s: Option<Summary>) -> [String; 2] {
    [
        opt(s, |s| db(s.mean)),
        opt(s.and_then(|s| s.se_db()), |v| format!("{v:.6}")),
    ]
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| crate::Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Result rows as CSV text with [`ROW_HEADER`].
pub fn rows_csv(spec: &ExperimentSpec, rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ROW_HEADER)?;
    let ensemble = match spec.ensemble {
        ChannelEnsemble::Iid => "iid",
        ChannelEnsemble::Correlated { .. } => "correlated",
    };
    for r in rows {
        let c = &r.cfg;
        let mut rec: Vec<String> = vec![
            r.point.to_string(),
            r.algorithm.tag().into(),
            c.m.to_string(),
            c.n.to_string(),
            c.k.to_string(),
            c.t.to_string(),
            c.t_p.to_string(),
            c.t_d().to_string(),
            c.rho.to_string(),
            sci(c.sigma2),
            format!("{:.6}", r.snr_db()),
            c.q_g.to_string(),
            c.q_f.to_string(),
            c.q_h.to_string(),
            c.constellation.tag().into(),
            ensemble.into(),
            spec.amp.beta.to_string(),
            spec.amp.max_iters.to_string(),
            spec.seed.to_string(),
            r.trials.to_string(),
            r.finite_trials.to_string(),
        ];
        for s in [r.mse_g, r.mse_f, r.mse_h, r.mse_xd] {
            rec.extend(mean_se(s));
        }
        rec.push(opt(r.ser, |s| sci(s.mean)));
        rec.push(opt(r.ser.and_then(|s| s.se), sci));
        rec.push(format!("{:.2}", r.iterations));
        rec.push(r.divergences.to_string());
        rec.extend(r.success.iter().map(|&s| flag(s)));
        rec.push(opt(r.replica_init, |i| i.tag().to_string()));
        rec.push(flag(r.replica_distinct));
        w.write_record(&rec)?;
    }
    finish(w)
}

/// Wall-clock figures of the rows, [`TIMING_HEADER`].
pub fn timing_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TIMING_HEADER)?;
    for r in rows {
        w.write_record([
            r.point.to_string(),
            r.algorithm.tag().into(),
            r.trials.to_string(),
            sci(r.seconds_per_trial),
            sci(r.seconds_per_iteration),
        ])?;
    }
    finish(w)
}

/// `results.csv` → `results.timing.csv`.
pub fn timing_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "results".into());
    path.with_file_name(format!("{stem}.timing.csv"))
}

/// Write the result rows to `path`.
pub fn emit_csv(spec: &ExperimentSpec, rows: &[ResultRow], path: &Path) -> Result<()> {
    std::fs::write(path, rows_csv(spec, rows)?)?;
    Ok(())
}

/// Write the timing file next to `path`; returns its location.
pub fn emit_timing(rows: &[ResultRow], path: &Path) -> Result<PathBuf> {
    let tp = timing_path(path);
    std::fs::write(&tp, timing_csv(rows)?)?;
    Ok(tp)
}

/// Minimum-pilot results, [`MIN_PILOT_HEADER`]; `min_t_p` is `infeasible`
/// when no probed length succeeded and `probes` lists `t_p:successes`.
pub fn min_pilot_csv(results: &[MinPilotResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(MIN_PILOT_HEADER)?;
    for r in results {
        let probes: Vec<String> = r.probes.iter().map(|(tp, s)| format!("{tp}:{s}")).collect();
        w.write_record([
            r.t.to_string(),
            r.algorithm.tag().into(),
            r.min_t_p.map(|v| v.to_string()).unwrap_or_else(|| "infeasible".into()),
            r.probe_trials.to_string(),
            probes.join(" "),
        ])?;
    }
    finish(w)
}

/// Replica fixed points, [`REPLICA_HEADER`].
pub fn replica_table_csv(rows: &[ReplicaRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPLICA_HEADER)?;
    for r in rows {
        let s = &r.outcome.state;
        let c = &r.cfg;
        let has_data = c.t_d() > 0;
        w.write_record([
            format!("{:.6}", r.snr_db),
            sci(c.sigma2),
            c.m.to_string(),
            c.n.to_string(),
            c.k.to_string(),
            c.t.to_string(),
            c.t_p.to_string(),
            c.rho.to_string(),
            r.mode.tag().into(),
            r.label.into(),
            u8::from(r.outcome.converged).to_string(),
            r.outcome.iterations.to_string(),
            db(s.mse_g),
            db(s.mse_f),
            db(s.mse_h),
            if has_data { db(s.mse_xd) } else { String::new() },
            opt(s.ser.filter(|_| has_data), sci),
            sci(s.m_g),
            sci(s.m_f),
            sci(s.m_h),
            sci(s.m_xd),
            sci(r.residual),
        ])?;
    }
    finish(w)
}
