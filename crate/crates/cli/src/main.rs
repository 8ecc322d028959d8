use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use dispbell_cli::{emit_curve, run, write_record, Experiment, RunConfig, RunRecord};

/// Detection-efficiency thresholds for displacement-based Bell tests.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// Named experiment to run.
    #[arg(long, value_enum, required_unless_present = "rerun")]
    experiment: Option<Experiment>,
    /// Repeat the run described by the config echo of a JSON record; other
    /// flags are ignored except `--out`, `--csv` and `--parallel`.
    #[arg(long, value_name = "RECORD", conflicts_with_all = ["experiment", "set"])]
    rerun: Option<PathBuf>,
    /// Parameter override `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, default_value_t = 2011)]
    seed: u64,
    /// JSON record path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV path for experiments that produce a table.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Bisection tolerance in efficiency.
    #[arg(long, default_value_t = 5e-4)]
    tol: f64,
    /// Fock levels per optical mode for squeezed states.
    #[arg(long, default_value_t = 20)]
    nmax: usize,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    parallel: Option<usize>,
}

fn configure(args: &Args) -> Result<RunConfig, String> {
    let mut config = match (&args.rerun, args.experiment) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            let record: RunRecord = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
            record.config
        }
        (None, Some(experiment)) => {
            let mut config = RunConfig::new(experiment);
            config.seed = args.seed;
            config.tol = args.tol;
            config.n_max = args.nmax;
            for s in &args.set {
                config.set(s).map_err(|e| e.to_string())?;
            }
            config
        }
        (None, None) => return Err("either --experiment or --rerun is required".into()),
    };
    config.output_path = args.out.clone();
    config.csv_path = args.csv.clone();
    Ok(config)
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(workers) = args.parallel {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build_global() {
            eprintln!("error: worker pool: {e}");
            return ExitCode::from(1);
        }
    }

    let config = match configure(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };

    let record = match run(&config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = write_record(&record, args.out.as_deref()) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    if let (Some(path), Some(table)) = (&args.csv, record.result.table()) {
        if let Err(e) = emit_curve(table, path) {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    if record.converged {
        ExitCode::SUCCESS
    } else {
        eprintln!("run did not converge; record written");
        ExitCode::from(3)
    }
}
