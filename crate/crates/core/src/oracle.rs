//! Exact marginal likelihood of the linear Gaussian model.

use std::f64::consts::PI;

use crate::error::{input, Error, Result};

/// Plain-float parameters of the linear Gaussian model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LgssmTruth {
    pub alpha: f64,
    pub gamma: f64,
    pub sigma_x2: f64,
    pub sigma_y2: f64,
}

impl LgssmTruth {
    fn validate(&self) -> Result<()> {
        if !(self.sigma_x2 > 0.0) {
            return Err(Error::Domain {
                op: "kalman: sigma_x2",
                value: self.sigma_x2,
            });
        }
        if !(self.sigma_y2 > 0.0) {
            return Err(Error::Domain {
                op: "kalman: sigma_y2",
                value: self.sigma_y2,
            });
        }
        Ok(())
    }
}

/// Mean and variance of a one-dimensional Gaussian belief.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    pub mean: f64,
    pub variance: f64,
}

/// One predict/update cycle. Returns the predictive belief, the filtered
/// belief and `ln p(y_t | y_{1:t−1})`.
#[derive(Debug, Clone, Copy)]
pub struct KalmanStep {
    pub predicted: KalmanState,
    pub filtered: KalmanState,
    pub log_incr: f64,
}

fn log_normal(y: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (y - mean) * (y - mean) / (2.0 * var)
}

/// Runs the scalar Kalman filter and returns every step.
pub fn kalman_filter(params: &LgssmTruth, observations: &[f64]) -> Result<Vec<KalmanStep>> {
    params.validate()?;
    if observations.is_empty() {
        return Err(input("need at least one observation"));
    }
    let LgssmTruth {
        alpha,
        gamma,
        sigma_x2,
        sigma_y2,
    } = *params;
    let mut steps = Vec::with_capacity(observations.len());
    let mut belief: Option<KalmanState> = None;
    for &y in observations {
        let predicted = match belief {
            None => KalmanState {
                mean: 0.0,
                variance: sigma_x2,
            },
            Some(b) => KalmanState {
                mean: alpha * b.mean,
                variance: alpha * alpha * b.variance + sigma_x2,
            },
        };
        let s = gamma * gamma * predicted.variance + sigma_y2;
        let log_incr = log_normal(y, gamma * predicted.mean, s);
        let k = gamma * predicted.variance / s;
        let filtered = KalmanState {
            mean: predicted.mean + k * (y - gamma * predicted.mean),
            variance: (1.0 - k * gamma) * predicted.variance,
        };
        belief = Some(filtered);
        steps.push(KalmanStep {
            predicted,
            filtered,
            log_incr,
        });
    }
    Ok(steps)
}

/// `ln p(y_{1:T})` under the linear Gaussian model.
pub fn kalman_loglik(params: &LgssmTruth, observations: &[f64]) -> Result<f64> {
    Ok(kalman_filter(params, observations)?
        .iter()
        .map(|s| s.log_incr)
        .sum())
}

/// Brute-force `ln p(y_{1:T})` from the explicit `T×T` covariance of the
/// observations. Independent check of [`kalman_loglik`] for short series.
pub fn joint_gaussian_loglik(params: &LgssmTruth, observations: &[f64]) -> Result<f64> {
    params.validate()?;
    let n = observations.len();
    if n == 0 {
        return Err(input("need at least one observation"));
    }
    let mut state_var = vec![0.0; n];
    state_var[0] = params.sigma_x2;
    for t in 1..n {
        state_var[t] = params.alpha * params.alpha * state_var[t - 1] + params.sigma_x2;
    }
    let g2 = params.gamma * params.gamma;
    let mut cov = vec![vec![0.0; n]; n];
    for s in 0..n {
        for t in s..n {
            let c = g2 * params.alpha.powi((t - s) as i32) * state_var[s];
            cov[s][t] = c;
            cov[t][s] = c;
        }
        cov[s][s] += params.sigma_y2;
    }

    // Cholesky: cov = L Lᵀ.
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let dot: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = cov[i][i] - dot;
                if !(d > 0.0) {
                    return Err(Error::Domain {
                        op: "cholesky",
                        value: d,
                    });
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (cov[i][j] - dot) / l[j][j];
            }
        }
    }
    // Solve L z = y.
    let mut z = vec![0.0; n];
    for i in 0..n {
        let dot: f64 = (0..i).map(|k| l[i][k] * z[k]).sum();
        z[i] = (observations[i] - dot) / l[i][i];
    }
    let log_det: f64 = (0..n).map(|i| 2.0 * l[i][i].ln()).sum();
    let quad: f64 = z.iter().map(|v| v * v).sum();
    Ok(-0.5 * (n as f64 * (2.0 * PI).ln() + log_det + quad))
}
