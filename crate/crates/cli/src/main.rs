use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use oprpf::Resampler;
use oprpf_cli::{params_path, run_experiment, write_outputs, CliError, Experiment, ExperimentConfig};

/// Trains state-space model or proposal parameters by gradient ascent on a
/// particle filter ELBO.
#[derive(Debug, Parser)]
#[command(name = "oprpf", version)]
struct Args {
    /// lgssm-mle, proposal-learn or stochvol.
    #[arg(long)]
    experiment: Experiment,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    batches: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// multinomial or opr.
    #[arg(long, default_value = "opr")]
    resampler: Resampler,
    /// `date,price` CSV for stochvol; synthetic data when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Metrics CSV; parameters go to `<out>.params.txt`.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated starting parameters.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta0: Option<Vec<f64>>,
    /// Length of the synthetic series.
    #[arg(long)]
    length: Option<usize>,
    /// Record measured epoch times in the wall_ms column.
    #[arg(long)]
    wall_clock: bool,
}

impl Args {
    fn into_config(self) -> ExperimentConfig {
        let mut c = ExperimentConfig::defaults(self.experiment, self.out);
        c.n_particles = self.particles.unwrap_or(c.n_particles);
        c.batches = self.batches.unwrap_or(c.batches);
        c.epochs = self.epochs.unwrap_or(c.epochs);
        c.lr = self.lr.unwrap_or(c.lr);
        c.length = self.length.unwrap_or(c.length);
        c.seed = self.seed;
        c.resampler = self.resampler;
        c.data_path = self.data;
        c.theta0 = self.theta0;
        c.wall_clock = self.wall_clock;
        c
    }
}

fn run(config: &ExperimentConfig) -> Result<(), CliError> {
    let outcome = run_experiment(config)?;
    write_outputs(config, &outcome)?;
    println!("final_elbo = {}", outcome.final_elbo());
    println!("metrics: {}", config.out_path.display());
    println!("parameters: {}", params_path(&config.out_path).display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let config = args.into_config();
    match run(&config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
