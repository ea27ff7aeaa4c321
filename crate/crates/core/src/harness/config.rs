//! Flat `key = value` experiment files (TOML syntax, no tables).

use super::{Algorithm, ExperimentSpec, Noise, SweepKind};
use crate::model::{ChannelEnsemble, Constellation};
use crate::replica::ReplicaInit;
use crate::{Error, Result, C64};
use std::path::{Path, PathBuf};
use toml::Value;

/// Accepted keys with a one-line description each.
pub const KEYS: &[(&str, &str)] = &[
    ("m", "BS antennas"),
    ("n", "RIS elements"),
    ("k", "users"),
    ("t", "frame length"),
    ("t_p", "pilot length"),
    ("rho", "probability that a RIS element is on"),
    ("sigma2", "noise variance (exclusive with snr_db)"),
    ("snr_db", "SNR in dB (exclusive with sigma2)"),
    ("q_g", "prior variance of G entries"),
    ("q_f", "prior variance of F entries"),
    ("q_h", "prior variance of H entries"),
    ("constellation", "\"qpsk\" or \"gaussian\""),
    ("ensemble", "\"iid\" or \"correlated\""),
    ("c_gl", "[re, im] left correlation coefficient of G"),
    ("c_gr", "[re, im] right correlation coefficient of G"),
    ("c_f", "[re, im] correlation coefficient of F"),
    ("c_h", "[re, im] correlation coefficient of H"),
    ("sweep", "\"single\", \"snr\", \"pilots\", \"phase\" or \"min-pilots\""),
    ("snr_db_list", "SNR grid in dB"),
    ("t_p_list", "pilot-length grid (data length held at t - t_p)"),
    ("rho_list", "sampling-rate grid"),
    ("t_list", "frame-length grid"),
    ("trials", "Monte Carlo trials per point"),
    ("algorithms", "list of \"tri-amp\", \"bigamp-lmmse\", \"replica\""),
    ("out", "output CSV path"),
    ("workers", "worker threads"),
    ("seed", "master seed"),
    ("beta", "damping factor in [0, 1]"),
    ("max_iters", "iteration budget"),
    ("tol", "relative-change stopping tolerance"),
    ("direct_link", "whether the direct user-to-BS link exists"),
    ("damp_outer_residuals", "damp the outer residuals"),
    ("damp_inner_residuals", "damp the inner residuals"),
    ("damp_factors", "damp the posterior means and variances"),
    ("restart_on_divergence", "retry once with half the damping factor"),
    ("fit_restarts", "fresh random starts after a divergent or poorly fitting run"),
    ("fit_threshold", "poor fit: residual energy above this multiple of the noise energy"),
    ("replica_init", "\"informative\" or \"uninformative\" branch in sweep rows"),
    ("phase_mse_db", "phase-diagram MSE success threshold, dB"),
    ("phase_ser", "phase-diagram SER success threshold"),
    ("noiseless_mse_db", "minimum-pilot MSE success threshold, dB"),
    ("probe_trials", "trials per minimum-pilot probe"),
    ("probe_successes", "successes a probe needs"),
    ("t_p_min", "lower end of the minimum-pilot search"),
    ("t_p_max", "upper end of the minimum-pilot search"),
    ("probe_max_iters", "iteration budget of noiseless probes"),
    ("probe_tol", "stopping tolerance of noiseless probes"),
];

pub fn load_config(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, &path.display().to_string())
}

/// Parse a config document; `origin` names it in diagnostics.
pub fn parse_config(text: &str, origin: &str) -> Result<ExperimentSpec> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse {
        path: origin.to_string(),
        line: e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0),
        message: e.message().to_string(),
    })?;
    let err = |key: &str, message: String| Error::Parse {
        path: origin.to_string(),
        line: line_of(text, key),
        message,
    };

    let mut spec = ExperimentSpec::default();
    let mut ensemble_kind: Option<String> = None;
    let mut coeffs: [Option<C64>; 4] = [None; 4];
    let mut sigma2 = None;
    let mut snr = None;

    for (key, value) in &table {
        let v = Field { key, value, err: &err };
        match key.as_str() {
            "m" => spec.system.m = v.count()?,
            "n" => spec.system.n = v.count()?,
            "k" => spec.system.k = v.count()?,
            "t" => spec.system.t = v.count()?,
            "t_p" => spec.system.t_p = v.count()?,
            "rho" => spec.system.rho = v.real()?,
            "sigma2" => sigma2 = Some(v.real()?),
            "snr_db" => snr = Some(v.real()?),
            "q_g" => spec.system.q_g = v.real()?,
            "q_f" => spec.system.q_f = v.real()?,
            "q_h" => spec.system.q_h = v.real()?,
            "constellation" => {
                let s = v.string()?;
                spec.system.constellation = Constellation::from_tag(&s)
                    .ok_or_else(|| err(key, format!("unknown constellation '{s}'")))?;
            }
            "ensemble" => ensemble_kind = Some(v.string()?),
            "c_gl" => coeffs[0] = Some(v.complex()?),
            "c_gr" => coeffs[1] = Some(v.complex()?),
            "c_f" => coeffs[2] = Some(v.complex()?),
            "c_h" => coeffs[3] = Some(v.complex()?),
            "sweep" => {
                let s = v.string()?;
                spec.sweep = SweepKind::from_tag(&s)
                    .ok_or_else(|| err(key, format!("unknown sweep '{s}'")))?;
            }
            "snr_db_list" => spec.snr_db_list = v.list(Field::real)?,
            "t_p_list" => spec.t_p_list = v.list(Field::count)?,
            "rho_list" => spec.rho_list = v.list(Field::real)?,
            "t_list" => spec.t_list = v.list(Field::count)?,
            "trials" => spec.trials = v.count()?,
            "algorithms" => {
                spec.algorithms = v.list(|f| {
                    let s = f.string()?;
                    Algorithm::from_tag(&s)
                        .ok_or_else(|| (f.err)(f.key, format!("unknown algorithm '{s}'")))
                })?
            }
            "out" => spec.out = Some(PathBuf::from(v.string()?)),
            "workers" => spec.workers = v.count()?,
            "seed" => spec.seed = v.seed()?,
            "beta" => spec.amp.beta = v.real()?,
            "max_iters" => spec.amp.max_iters = v.count()?,
            "tol" => spec.amp.tol = v.real()?,
            "direct_link" => spec.amp.direct_link = v.boolean()?,
            "damp_outer_residuals" => spec.amp.damp.outer_residuals = v.boolean()?,
            "damp_inner_residuals" => spec.amp.damp.inner_residuals = v.boolean()?,
            "damp_factors" => spec.amp.damp.factors = v.boolean()?,
            "restart_on_divergence" => spec.amp.restart_on_divergence = v.boolean()?,
            "fit_restarts" => spec.amp.fit_restarts = v.count()?,
            "fit_threshold" => spec.amp.fit_threshold = v.real()?,
            "replica_init" => {
                spec.replica_init = match v.string()?.as_str() {
                    "informative" => ReplicaInit::Informative,
                    "uninformative" => ReplicaInit::Uninformative,
                    s => return Err(err(key, format!("unknown replica_init '{s}'"))),
                }
            }
            "phase_mse_db" => spec.thresholds.phase_mse_db = v.real()?,
            "phase_ser" => spec.thresholds.phase_ser = v.real()?,
            "noiseless_mse_db" => spec.thresholds.noiseless_mse_db = v.real()?,
            "probe_trials" => spec.thresholds.probe_trials = v.count()?,
            "probe_successes" => spec.thresholds.probe_successes = v.count()?,
            "t_p_min" => spec.thresholds.t_p_min = v.count()?,
            "t_p_max" => spec.thresholds.t_p_max = v.count()?,
            "probe_max_iters" => spec.thresholds.probe_max_iters = v.count()?,
            "probe_tol" => spec.thresholds.probe_tol = v.real()?,
            other => {
                let hint = suggest(other)
                    .map(|s| format!("; did you mean '{s}'?"))
                    .unwrap_or_default();
                return Err(err(other, format!("unknown key '{other}'{hint}")));
            }
        }
    }

    spec.noise = match (sigma2, snr) {
        (Some(_), Some(_)) => {
            return Err(err("snr_db", "set either sigma2 or snr_db, not both".into()))
        }
        (Some(s), None) => Noise::Sigma2(s),
        (None, Some(s)) => Noise::SnrDb(s),
        (None, None) => spec.noise,
    };
    spec.ensemble = match ensemble_kind.as_deref() {
        None | Some("iid") => {
            if let Some(i) = coeffs.iter().position(Option::is_some) {
                let key = ["c_gl", "c_gr", "c_f", "c_h"][i];
                return Err(err(key, format!("'{key}' requires ensemble = \"correlated\"")));
            }
            ChannelEnsemble::Iid
        }
        Some("correlated") => {
            let ChannelEnsemble::Correlated { c_gl, c_gr, c_f, c_h } =
                ChannelEnsemble::reference_correlated()
            else {
                unreachable!()
            };
            ChannelEnsemble::Correlated {
                c_gl: coeffs[0].unwrap_or(c_gl),
                c_gr: coeffs[1].unwrap_or(c_gr),
                c_f: coeffs[2].unwrap_or(c_f),
                c_h: coeffs[3].unwrap_or(c_h),
            }
        }
        Some(s) => return Err(err("ensemble", format!("unknown ensemble '{s}'"))),
    };
    spec.validate()?;
    Ok(spec)
}

/// Serialize a spec so that [`parse_config`] returns it unchanged.
pub fn emit_config(spec: &ExperimentSpec) -> String {
    let mut out = String::new();
    let mut put = |k: &str, v: Value| out.push_str(&format!("{k} = {v}\n"));
    let int = |v: usize| Value::Integer(v as i64);
    let flt = Value::Float;
    let st = |s: &str| Value::String(s.to_string());
    let cx = |c: C64| Value::Array(vec![Value::Float(c.re), Value::Float(c.im)]);
    let s = &spec.system;
    put("m", int(s.m));
    put("n", int(s.n));
    put("k", int(s.k));
    put("t", int(s.t));
    put("t_p", int(s.t_p));
    put("rho", flt(s.rho));
    match spec.noise {
        Noise::Sigma2(v) => put("sigma2", flt(v)),
        Noise::SnrDb(v) => put("snr_db", flt(v)),
    }
    put("q_g", flt(s.q_g));
    put("q_f", flt(s.q_f));
    put("q_h", flt(s.q_h));
    put("constellation", st(s.constellation.tag()));
    match spec.ensemble {
        ChannelEnsemble::Iid => put("ensemble", st("iid")),
        ChannelEnsemble::Correlated { c_gl, c_gr, c_f, c_h } => {
            put("ensemble", st("correlated"));
            put("c_gl", cx(c_gl));
            put("c_gr", cx(c_gr));
            put("c_f", cx(c_f));
            put("c_h", cx(c_h));
        }
    }
    put("sweep", st(spec.sweep.tag()));
    put("snr_db_list", Value::Array(spec.snr_db_list.iter().map(|&v| flt(v)).collect()));
    put("t_p_list", Value::Array(spec.t_p_list.iter().map(|&v| int(v)).collect()));
    put("rho_list", Value::Array(spec.rho_list.iter().map(|&v| flt(v)).collect()));
    put("t_list", Value::Array(spec.t_list.iter().map(|&v| int(v)).collect()));
    put("trials", int(spec.trials));
    put(
        "algorithms",
        Value::Array(spec.algorithms.iter().map(|a| st(a.tag())).collect()),
    );
    if let Some(p) = &spec.out {
        put("out", st(&p.display().to_string()));
    }
    put("workers", int(spec.workers));
    put("seed", Value::Integer(spec.seed as i64));
    let a = &spec.amp;
    put("beta", flt(a.beta));
    put("max_iters", int(a.max_iters));
    put("tol", flt(a.tol));
    put("direct_link", Value::Boolean(a.direct_link));
    put("damp_outer_residuals", Value::Boolean(a.damp.outer_residuals));
    put("damp_inner_residuals", Value::Boolean(a.damp.inner_residuals));
    put("damp_factors", Value::Boolean(a.damp.factors));
    put("restart_on_divergence", Value::Boolean(a.restart_on_divergence));
    put("fit_restarts", int(a.fit_restarts));
    put("fit_threshold", flt(a.fit_threshold));
    put("replica_init", st(spec.replica_init.tag()));
    let th = &spec.thresholds;
    put("phase_mse_db", flt(th.phase_mse_db));
    put("phase_ser", flt(th.phase_ser));
    put("noiseless_mse_db", flt(th.noiseless_mse_db));
    put("probe_trials", int(th.probe_trials));
    put("probe_successes", int(th.probe_successes));
    put("t_p_min", int(th.t_p_min));
    put("t_p_max", int(th.t_p_max));
    put("probe_max_iters", int(th.probe_max_iters));
    put("probe_tol", flt(th.probe_tol));
    out
}

/// 1-based line of the first assignment to `key`, 0 when not found.
fn line_of(text: &str, key: &str) -> usize {
    text.lines()
        .position(|l| {
            let l = l.trim_start();
            let l = l.trim_start_matches('"');
            l.strip_prefix(key)
                .map(|rest| rest.trim_start_matches('"').trim_start().starts_with('='))
                .unwrap_or(false)
        })
        .map(|i| i + 1)
        .unwrap_or(0)
}

fn suggest(key: &str) -> Option<&'static str> {
    KEYS.iter()
        .map(|(k, _)| (strsim::levenshtein(key, k), *k))
        .filter(|(d, k)| *d <= 2.max(k.len() / 3))
        .min()
        .map(|(_, k)| k)
}

struct Field<'a, E: Fn(&str, String) -> Error> {
    key: &'a str,
    value: &'a Value,
    err: &'a E,
}

impl<E: Fn(&str, String) -> Error> Field<'_, E> {
    fn fail<T>(&self, want: &str) -> Result<T> {
        Err((self.err)(
            self.key,
            format!("'{}' expects {want}, found {}", self.key, self.value),
        ))
    }

    fn real(&self) -> Result<f64> {
        match self.value {
            Value::Float(v) => Ok(*v),
            Value::Integer(v) => Ok(*v as f64),
            _ => self.fail("a number"),
        }
    }

    fn count(&self) -> Result<usize> {
        match self.value {
            Value::Integer(v) if *v >= 0 => Ok(*v as usize),
            _ => self.fail("a non-negative integer"),
        }
    }

    fn seed(&self) -> Result<u64> {
        match self.value {
            Value::Integer(v) => Ok(*v as u64),
            _ => self.fail("an integer"),
        }
    }

    fn boolean(&self) -> Result<bool> {
        match self.value {
            Value::Boolean(v) => Ok(*v),
            _ => self.fail("true or false"),
        }
    }

    fn string(&self) -> Result<String> {
        match self.value {
            Value::String(s) => Ok(s.clone()),
            _ => self.fail("a string"),
        }
    }

    fn complex(&self) -> Result<C64> {
        match self.value {
            Value::Array(a) if a.len() == 2 => {
                let part = |v: &Value| match v {
                    Value::Float(x) => Some(*x),
                    Value::Integer(x) => Some(*x as f64),
                    _ => None,
                };
                match (part(&a[0]), part(&a[1])) {
                    (Some(re), Some(im)) => Ok(C64::new(re, im)),
                    _ => self.fail("[re, im]"),
                }
            }
            _ => self.fail("[re, im]"),
        }
    }

    fn list<T>(&self, each: impl Fn(&Self) -> Result<T>) -> Result<Vec<T>> {
        match self.value {
            Value::Array(items) => items
                .iter()
                .map(|value| {
                    each(&Field {
                        key: self.key,
                        value,
                        err: self.err,
                    })
                })
                .collect(),
            _ => self.fail("a list"),
        }
    }
}
