//! Experiment configuration, synthetic data, training runs and output files.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use oprpf::models::{simulate, Lgssm, StochVol};
use oprpf::objectives::{LgssmMle, ProposalLearning, StochVolMle};
use oprpf::oracle::{kalman_loglik, LgssmTruth};
use oprpf::training::{train_with, Objective, TrainConfig, TrainReport};
use oprpf::{FilterConfig, Resampler, RngStream};

use crate::data::{load_prices, log_returns};
use crate::error::CliError;

/// Stream id for synthetic data, kept apart from the training streams.
const DATA_STREAM: u64 = 1;

/// Ground truth of the parameter learning experiment.
pub const LGSSM_TRUTH: LgssmTruth = LgssmTruth {
    alpha: 0.5,
    gamma: 1.0,
    sigma_x2: 0.3,
    sigma_y2: 0.1,
};

/// Fixed model of the proposal learning experiment.
pub const PROPOSAL_MODEL: LgssmTruth = LgssmTruth {
    alpha: 0.42,
    gamma: 1.0,
    sigma_x2: 1.0,
    sigma_y2: 0.1,
};

/// Synthetic stochastic volatility series: `[μ, φ, σₓ, σᵧ]`.
pub const STOCHVOL_SYNTHETIC: [f64; 4] = [-1.0, 0.95, 0.25, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    LgssmMle,
    ProposalLearn,
    StochVol,
}

impl FromStr for Experiment {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "lgssm-mle" => Ok(Experiment::LgssmMle),
            "proposal-learn" => Ok(Experiment::ProposalLearn),
            "stochvol" => Ok(Experiment::StochVol),
            other => Err(CliError::Config(format!(
                "unknown experiment `{other}` (expected lgssm-mle, proposal-learn or stochvol)"
            ))),
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Experiment::LgssmMle => "lgssm-mle",
            Experiment::ProposalLearn => "proposal-learn",
            Experiment::StochVol => "stochvol",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub n_particles: usize,
    pub batches: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub resampler: Resampler,
    /// Price CSV for `stochvol`; synthetic data when absent.
    pub data_path: Option<PathBuf>,
    /// Metrics CSV. The parameter file goes next to it, see [`params_path`].
    pub out_path: PathBuf,
    /// Starting point; the experiment default when absent.
    pub theta0: Option<Vec<f64>>,
    /// Length of the synthetic series.
    pub length: usize,
    /// Write measured epoch times into `wall_ms`. Off by default so that
    /// reruns produce identical files; times are always logged.
    pub wall_clock: bool,
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment, out_path: impl Into<PathBuf>) -> Self {
        let (n_particles, lr, epochs, length) = match experiment {
            Experiment::LgssmMle => (50, 0.01, 200, 100),
            Experiment::ProposalLearn => (100, 0.1, 100, 100),
            Experiment::StochVol => (50, 0.01, 100, 300),
        };
        ExperimentConfig {
            experiment,
            n_particles,
            batches: 50,
            epochs,
            lr,
            seed: 0,
            resampler: Resampler::Opr,
            data_path: None,
            out_path: out_path.into(),
            theta0: None,
            length,
            wall_clock: false,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let positive = [
            ("particles", self.n_particles),
            ("batches", self.batches),
            ("epochs", self.epochs),
            ("length", self.length),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(CliError::Config(format!("--{name} must be positive")));
            }
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(CliError::Config(format!("--lr must be positive, got {}", self.lr)));
        }
        if self.resampler == Resampler::None {
            return Err(CliError::Config("--resampler must be multinomial or opr".into()));
        }
        if self.resampler == Resampler::Opr && self.n_particles < 2 {
            return Err(CliError::Config("opr needs at least 2 particles".into()));
        }
        if self.data_path.is_some() && self.experiment != Experiment::StochVol {
            return Err(CliError::Config(format!("--data is only used by stochvol, not {}", self.experiment)));
        }
        if let Some(theta) = &self.theta0 {
            if theta.iter().any(|v| !v.is_finite()) {
                return Err(CliError::Config("--theta0 values must be finite".into()));
            }
        }
        Ok(())
    }

    fn filter(&self) -> Result<FilterConfig, CliError> {
        Ok(FilterConfig::new(self.n_particles, self.resampler)?)
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batches: self.batches,
            lr: self.lr,
            seed: self.seed,
            clip: None,
        }
    }
}

/// Where the parameter file for a metrics path goes: `<out>.params.txt`.
pub fn params_path(out_path: &Path) -> PathBuf {
    let mut name = out_path.as_os_str().to_owned();
    name.push(".params.txt");
    PathBuf::from(name)
}

/// Everything a run produces, before it is written out.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: TrainReport,
    pub series_len: usize,
    /// Experiment-specific key-value pairs for the parameter file.
    pub extras: Vec<(String, f64)>,
}

impl Outcome {
    pub fn final_elbo(&self) -> f64 {
        self.report.last().elbo
    }

    pub fn extra(&self, key: &str) -> Option<f64> {
        self.extras.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }
}

/// Synthetic observations of the linear Gaussian model.
pub fn lgssm_observations(truth: &LgssmTruth, length: usize, seed: u64) -> Result<Vec<f64>, CliError> {
    let model = Lgssm::new(truth.alpha, truth.gamma, truth.sigma_x2, truth.sigma_y2)?;
    Ok(simulate(&model, length, &mut RngStream::new(seed, DATA_STREAM))?.observations)
}

/// Synthetic log-returns from the default volatility model.
pub fn stochvol_observations(length: usize, seed: u64) -> Result<Vec<f64>, CliError> {
    let [mu, phi, sigma_x, sigma_y] = STOCHVOL_SYNTHETIC;
    let model = StochVol::from_natural(mu, phi, sigma_x, sigma_y)?;
    Ok(simulate(&model, length, &mut RngStream::new(seed, DATA_STREAM))?.observations)
}

/// Loads or simulates data, trains, and returns the report. Nothing is
/// written to disk.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    config.validate()?;
    let filter = config.filter()?;
    match config.experiment {
        Experiment::LgssmMle => {
            let observations = lgssm_observations(&LGSSM_TRUTH, config.length, config.seed)?;
            let objective = LgssmMle {
                observations,
                sigma_x2: LGSSM_TRUTH.sigma_x2,
                sigma_y2: LGSSM_TRUTH.sigma_y2,
                filter,
            };
            let theta0 = config.theta0.clone().unwrap_or_else(|| vec![1.0, 1.5]);
            let report = fit(&objective, &theta0, config)?;
            let fitted = LgssmTruth {
                alpha: report.final_params[0],
                gamma: report.final_params[1],
                ..LGSSM_TRUTH
            };
            let extras = vec![
                ("kalman_loglik_fitted".to_string(), kalman_loglik(&fitted, &objective.observations)?),
                ("kalman_loglik_true".to_string(), kalman_loglik(&LGSSM_TRUTH, &objective.observations)?),
            ];
            Ok(Outcome {
                report,
                series_len: objective.observations.len(),
                extras,
            })
        }
        Experiment::ProposalLearn => {
            let observations = lgssm_observations(&PROPOSAL_MODEL, config.length, config.seed)?;
            let objective = ProposalLearning {
                observations,
                model: PROPOSAL_MODEL,
                filter,
            };
            let theta0 = config.theta0.clone().unwrap_or_else(|| objective.initial_params());
            let report = fit(&objective, &theta0, config)?;
            let extras = vec![(
                "kalman_loglik".to_string(),
                kalman_loglik(&PROPOSAL_MODEL, &objective.observations)?,
            )];
            Ok(Outcome {
                report,
                series_len: objective.observations.len(),
                extras,
            })
        }
        Experiment::StochVol => {
            let observations = match &config.data_path {
                Some(path) => log_returns(&load_prices(path)?)?,
                None => stochvol_observations(config.length, config.seed)?,
            };
            let objective = StochVolMle { observations, filter };
            let theta0 = config.theta0.clone().unwrap_or_else(|| vec![0.0, 1.0, 0.0, 0.0]);
            let report = fit(&objective, &theta0, config)?;
            let &[mu, phi_raw, lsx, lsy] = report.final_params.as_slice() else {
                unreachable!("objective has four parameters")
            };
            let model = StochVol::new(mu, phi_raw, lsx, lsy);
            let extras = vec![
                ("phi".to_string(), model.phi()),
                ("sigma_x".to_string(), model.sigma_x()),
                ("sigma_y".to_string(), model.sigma_y()),
            ];
            Ok(Outcome {
                report,
                series_len: objective.observations.len(),
                extras,
            })
        }
    }
}

fn fit<O: Objective>(objective: &O, theta0: &[f64], config: &ExperimentConfig) -> Result<TrainReport, CliError> {
    let every = (config.epochs / 10).max(1);
    let report = train_with(objective, theta0, &config.train_config(), |r| {
        if (r.epoch + 1) % every == 0 || r.epoch + 1 == config.epochs {
            log::info!(
                "{} {} epoch {}/{}: elbo {:.4}, max |grad| {:.3e}, {:.1} ms",
                config.experiment,
                config.resampler,
                r.epoch + 1,
                config.epochs,
                r.elbo,
                r.max_abs_grad,
                r.wall_time.as_secs_f64() * 1e3
            );
        }
    })?;
    Ok(report)
}

/// Writes the metrics CSV to `out_path` and the parameter file next to it.
pub fn write_outputs(config: &ExperimentConfig, outcome: &Outcome) -> Result<(), CliError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |e: std::io::Error| CliError::Io { path, source: e }
    };
    let out = &config.out_path;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
    }

    let mut writer = csv::Writer::from_path(out).map_err(|e| csv_error(out, e))?;
    let mut header = vec!["epoch".to_string(), "elbo".into(), "max_abs_grad".into(), "wall_ms".into()];
    header.extend(outcome.report.param_names.iter().cloned());
    writer.write_record(&header).map_err(|e| csv_error(out, e))?;
    for r in &outcome.report.records {
        let wall_ms = if config.wall_clock {
            r.wall_time.as_secs_f64() * 1e3
        } else {
            0.0
        };
        let mut row = vec![(r.epoch + 1).to_string(), r.elbo.to_string(), r.max_abs_grad.to_string(), format!("{wall_ms:.3}")];
        row.extend(r.params.iter().map(f64::to_string));
        writer.write_record(&row).map_err(|e| csv_error(out, e))?;
    }
    writer.flush().map_err(io(out))?;

    let path = params_path(out);
    let mut file = std::io::BufWriter::new(std::fs::File::create(&path).map_err(io(&path))?);
    write_params(&mut file, config, outcome).map_err(io(&path))?;
    file.flush().map_err(io(&path))?;
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

fn write_params(w: &mut impl Write, config: &ExperimentConfig, outcome: &Outcome) -> std::io::Result<()> {
    writeln!(w, "experiment = {}", config.experiment)?;
    writeln!(w, "resampler = {}", config.resampler)?;
    writeln!(w, "particles = {}", config.n_particles)?;
    writeln!(w, "batches = {}", config.batches)?;
    writeln!(w, "epochs = {}", config.epochs)?;
    writeln!(w, "lr = {}", config.lr)?;
    writeln!(w, "seed = {}", config.seed)?;
    match &config.data_path {
        Some(p) => writeln!(w, "data = {}", p.display())?,
        None => writeln!(w, "data = synthetic")?,
    }
    writeln!(w, "series_length = {}", outcome.series_len)?;
    writeln!(w, "final_elbo = {}", outcome.final_elbo())?;
    for (name, value) in outcome.report.param_names.iter().zip(&outcome.report.final_params) {
        writeln!(w, "{name} = {value}")?;
    }
    for (name, value) in &outcome.extras {
        writeln!(w, "{name} = {value}")?;
    }
    Ok(())
}
