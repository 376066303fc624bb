use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use decoherence::experiments::{
    fit_power_law, pool_distance_bins, prepare_model, realization_df, run_dynamics, run_sweep, ScalingMetric,
    SweepOptions,
};
use decoherence::{output, Error, Result, RunConfig};

#[derive(Parser)]
#[command(name = "decoherence", version, about = "Multi-time decoherence in a random-matrix model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Macrostate weights over time (dynamics.csv).
    Dynamics {
        #[arg(long)]
        config: PathBuf,
    },
    /// All realizations over the dimension grid (results.csv).
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; 0 uses every core.
        #[arg(long, env = "DECOHERENCE_WORKERS", default_value_t = 0)]
        workers: usize,
    },
    /// Power-law fit of a metric against D (fit.csv, fit_points.csv).
    Fit {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_parser = parse_metric)]
        metric: ScalingMetric,
        #[arg(long)]
        l: usize,
        /// Output directory; defaults to the directory of the results file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Branch probabilities of one realization (histogram.csv).
    Histogram {
        #[arg(long)]
        config: PathBuf,
    },
    /// Mean normalized DF against Hamming distance (distance.csv).
    Distance {
        #[arg(long)]
        config: PathBuf,
    },
    /// Full decoherence functional of one realization (df.json).
    DumpDf {
        #[arg(long)]
        config: PathBuf,
    },
}

fn parse_metric(s: &str) -> std::result::Result<ScalingMetric, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load(config: &Path) -> Result<(RunConfig, PathBuf)> {
    let cfg = RunConfig::from_file(config)?;
    let dir = cfg.output.directory.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    Ok((cfg, dir))
}

fn wrote(path: &Path) {
    println!("wrote {}", path.display());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Dynamics { config } => {
            let (cfg, dir) = load(&config)?;
            let spec = cfg.sweep_spec()?;
            let series = run_dynamics(
                &spec,
                cfg.single_dimension()?,
                &cfg.dynamics_weights(),
                cfg.dynamics.t_max_in_tau,
                cfg.dynamics.dt_in_tau,
            )?;
            for p in output::write_dynamics(&dir, &series)? {
                wrote(&p);
            }
        }
        Command::Sweep { config, workers } => {
            let (cfg, dir) = load(&config)?;
            let opts = SweepOptions {
                workers,
                output_dir: Some(dir.clone()),
            };
            let results = run_sweep(&cfg.sweep_spec()?, &opts)?;
            let path = dir.join("results.csv");
            output::write_results(&path, &results)?;
            wrote(&path);
            let failed = results.iter().filter(|r| !r.is_ok()).count();
            if failed > 0 {
                let path = dir.join("failures.csv");
                output::write_failures(&path, &results)?;
                wrote(&path);
                log::warn!("{failed} of {} realizations failed", results.len());
            }
        }
        Command::Fit { results, metric, l, out } => {
            let rows = output::read_results(&results)?;
            let samples: Vec<(usize, f64)> = rows.iter().filter(|r| r.l == l).map(|r| (r.d, r.metric(metric))).collect();
            if samples.is_empty() {
                return Err(Error::InvalidArgument(format!("no rows with l = {l} in {}", results.display())));
            }
            let fit = fit_power_law(&samples)?;
            let dir = out.unwrap_or_else(|| results.parent().map(Path::to_path_buf).unwrap_or_default());
            fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
            let (path, points) = (dir.join("fit.csv"), dir.join("fit_points.csv"));
            output::write_fit(&path, &points, l, metric, &fit)?;
            wrote(&path);
            wrote(&points);
            println!("alpha = {} (r^2 = {})", output::format_float(fit.alpha), output::format_float(fit.r_squared));
        }
        Command::Histogram { config } => {
            let (cfg, dir) = load(&config)?;
            let spec = cfg.sweep_spec()?;
            let model = prepare_model(&spec, cfg.single_dimension()?, 0)?;
            let rdf = realization_df(&spec, &model, 0, 0)?;
            let path = dir.join("histogram.csv");
            output::write_histogram(&path, &rdf.df)?;
            wrote(&path);
            if cfg.output.dump_df {
                let path = dir.join("df.json");
                output::write_df_json(&path, &rdf.df)?;
                wrote(&path);
            }
        }
        Command::Distance { config } => {
            let (cfg, dir) = load(&config)?;
            let results = run_sweep(&cfg.sweep_spec()?, &SweepOptions::default())?;
            if let Some(r) = results.iter().find(|r| !r.is_ok()) {
                return Err(Error::InvalidArgument(format!(
                    "realization d = {}, h_seed = {} failed: {}",
                    r.d,
                    r.hamiltonian_seed,
                    r.error.as_deref().unwrap_or_default()
                )));
            }
            let path = dir.join("distance.csv");
            output::write_distance(&path, &pool_distance_bins(&results))?;
            wrote(&path);
        }
        Command::DumpDf { config } => {
            let (cfg, dir) = load(&config)?;
            let spec = cfg.sweep_spec()?;
            let model = prepare_model(&spec, cfg.single_dimension()?, 0)?;
            let rdf = realization_df(&spec, &model, 0, 0)?;
            let path = dir.join("df.json");
            output::write_df_json(&path, &rdf.df)?;
            wrote(&path);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
