use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use trilinear_amp::harness::{
    self, emit_csv, emit_timing, min_pilot_csv, replica_table_csv, Algorithm, ExperimentSpec,
    ResultRow, SweepKind,
};
use trilinear_amp::Error;

#[derive(Parser)]
#[command(name = "triamp", version, about = "Semi-blind RIS cascaded channel estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one point and print the averaged metrics.
    Simulate(Shared),
    /// Sweep the SNR grid (`snr_db_list`).
    SweepSnr(Shared),
    /// Sweep the pilot length (`t_p_list`) at fixed data length.
    SweepPilots(Shared),
    /// Success map over `rho_list` x `t_list`.
    PhaseDiagram(Shared),
    /// Noiseless search for the shortest pilot block per frame length (`t_list`).
    MinPilots(Shared),
    /// Replica fixed points over `snr_db_list`.
    Replica(Shared),
    /// Print the effective configuration as a config file.
    EmitConfig(Shared),
}

#[derive(Args)]
struct Shared {
    /// Experiment file with flat `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Comma-separated subset of tri-amp, bigamp-lmmse, replica.
    #[arg(long)]
    algo: Option<String>,
}

impl Shared {
    fn spec(&self, sweep: SweepKind) -> Result<ExperimentSpec, Error> {
        let mut spec = match &self.config {
            Some(p) => harness::load_config(p)?,
            None => ExperimentSpec::default(),
        };
        spec.sweep = sweep;
        if let Some(p) = &self.out {
            spec.out = Some(p.clone());
        }
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        if let Some(t) = self.trials {
            spec.trials = t;
        }
        if let Some(w) = self.workers {
            spec.workers = w;
        }
        if let Some(a) = &self.algo {
            spec.algorithms = Algorithm::parse_list(a)?;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn write(spec: &ExperimentSpec, text: &str) -> Result<(), Error> {
    match &spec.out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn all_failed(rows: &[ResultRow]) -> bool {
    let mc: Vec<&ResultRow> = rows.iter().filter(|r| r.algorithm.is_monte_carlo()).collect();
    !mc.is_empty() && mc.iter().all(|r| r.finite_trials == 0)
}

fn emit_rows(spec: &ExperimentSpec, rows: &[ResultRow]) -> Result<(), Error> {
    match &spec.out {
        Some(p) => {
            emit_csv(spec, rows, p)?;
            emit_timing(rows, p)?;
        }
        None => print!("{}", harness::rows_csv(spec, rows)?),
    }
    Ok(())
}

fn print_metrics(rows: &[ResultRow]) {
    let db = |s: Option<harness::Summary>| {
        s.map(|s| format!("{:8.2}", s.mean_db()))
            .unwrap_or_else(|| format!("{:>8}", "-"))
    };
    println!(
        "{:<13} {:>8} {:>8} {:>8} {:>8} {:>10} {:>8} {:>5}",
        "algorithm", "G dB", "F dB", "H dB", "Xd dB", "SER", "iters", "div"
    );
    for r in rows {
        println!(
            "{:<13} {} {} {} {} {:>10} {:8.1} {:>5}",
            r.algorithm.tag(),
            db(r.mse_g),
            db(r.mse_f),
            db(r.mse_h),
            db(r.mse_xd),
            r.ser.map(|s| format!("{:.3e}", s.mean)).unwrap_or_else(|| "-".into()),
            r.iterations,
            r.divergences
        );
    }
}

fn run(cmd: Command) -> Result<ExitCode, Error> {
    let rows = match cmd {
        Command::Simulate(a) => {
            let spec = a.spec(SweepKind::Single)?;
            let rows = harness::run_single(&spec)?;
            print_metrics(&rows);
            if spec.out.is_some() {
                emit_rows(&spec, &rows)?;
            }
            rows
        }
        Command::SweepSnr(a) => {
            let spec = a.spec(SweepKind::Snr)?;
            let rows = harness::run_snr_sweep(&spec)?;
            emit_rows(&spec, &rows)?;
            rows
        }
        Command::SweepPilots(a) => {
            let spec = a.spec(SweepKind::Pilots)?;
            let rows = harness::run_pilot_sweep(&spec)?;
            emit_rows(&spec, &rows)?;
            rows
        }
        Command::PhaseDiagram(a) => {
            let spec = a.spec(SweepKind::Phase)?;
            let rows = harness::run_phase_diagram(&spec)?;
            emit_rows(&spec, &rows)?;
            rows
        }
        Command::MinPilots(a) => {
            let spec = a.spec(SweepKind::MinPilots)?;
            let res = harness::min_pilot_search(&spec)?;
            write(&spec, &min_pilot_csv(&res)?)?;
            return Ok(ExitCode::SUCCESS);
        }
        Command::Replica(a) => {
            let spec = a.spec(SweepKind::Snr)?;
            let rows = harness::replica_table(&spec)?;
            write(&spec, &replica_table_csv(&rows)?)?;
            return Ok(ExitCode::SUCCESS);
        }
        Command::EmitConfig(a) => {
            let spec = a.spec(SweepKind::Single)?;
            print!("{}", harness::emit_config(&spec));
            return Ok(ExitCode::SUCCESS);
        }
    };
    if all_failed(&rows) {
        eprintln!("error: every trial failed numerically");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_) | Error::Parse { .. } | Error::Correlation(_) => {
                    ExitCode::from(2)
                }
                Error::Numerical(_) => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}
