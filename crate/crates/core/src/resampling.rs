//! Multinomial resampling and optimal placement resampling (OPR).
//!
//! OPR replaces a weighted particle set by `N` equally weighted particles at
//! `F⁻¹((2k−1)/(2N))`, where `F` is a continuous, invertible approximation of
//! the weighted empirical CDF: linear ramps between neighbouring particles and
//! unit-rate exponential tails outside the particle range.
//!
//! For sorted particles `x₁ < … < x_N` with weights `w₁ … w_N`:
//!
//! * the ramp on `[xᵢ, xᵢ₊₁]` has slope `½(wᵢ + wᵢ₊₁)/(xᵢ₊₁ − xᵢ)`,
//! * `F(xᵢ) = Σ_{j<i} wⱼ + wᵢ/2`,
//! * `F(x) = (w₁/2)·exp(x − x₁)` left of `x₁` and
//!   `F(x) = 1 − (w_N/2)·exp(x_N − x)` right of `x_N`.
//!
//! Branch selection (sorting, interval lookup) happens on primal values and
//! records nothing on the tape, so OPR outputs are differentiable in the
//! input positions and weights almost everywhere.

use crate::autodiff::{logsumexp_f64, Real};
use crate::error::{input, Error, Result};
use crate::rng::RngStream;

/// Sorted neighbours closer than this are merged before building the CDF.
pub const MERGE_GAP: f64 = 1e-12;

/// Mixing weight towards uniform applied to fully degenerate weights when
/// jitter is enabled.
pub const JITTER: f64 = 1e-9;

const NORMALIZATION_TOL: f64 = 1e-9;

/// Dirac-sum representation of a distribution: positions with log-weights
/// normalized so the weights sum to one.
#[derive(Debug, Clone)]
pub struct WeightedParticles<S> {
    pub positions: Vec<S>,
    pub log_weights: Vec<S>,
}

impl<S: Real> WeightedParticles<S> {
    pub fn new(positions: Vec<S>, log_weights: Vec<S>) -> Result<Self> {
        if positions.len() != log_weights.len() {
            return Err(input(format!(
                "{} positions but {} log-weights",
                positions.len(),
                log_weights.len()
            )));
        }
        if positions.is_empty() {
            return Err(input("particle set is empty"));
        }
        Ok(WeightedParticles {
            positions,
            log_weights,
        })
    }

    /// Equal weights `1/N`.
    pub fn uniform(positions: Vec<S>) -> Result<Self> {
        let first = *positions
            .first()
            .ok_or_else(|| input("particle set is empty"))?;
        let lw = -(positions.len() as f64).ln();
        let log_weights = vec![first.lift(lw); positions.len()];
        Self::new(positions, log_weights)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Primal linear weights.
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.value().exp()).collect()
    }

    pub fn primal_positions(&self) -> Vec<f64> {
        self.positions.iter().map(Real::value).collect()
    }

    fn check_normalized(&self) -> Result<()> {
        let lw: Vec<f64> = self.log_weights.iter().map(Real::value).collect();
        if lw.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(input("log-weights must not be NaN or +inf"));
        }
        let total = logsumexp_f64(&lw);
        if !(total.abs() <= NORMALIZATION_TOL) {
            return Err(input(format!("weights are not normalized: log Σw = {total}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OprOptions {
    /// Mix fully degenerate weights slightly towards uniform instead of
    /// failing.
    pub jitter: bool,
}

/// The piecewise linear / exponential-tail CDF of a weighted particle set.
#[derive(Debug, Clone)]
pub struct EmpiricalCdf<S> {
    sorted_positions: Vec<S>,
    sorted_weights: Vec<S>,
    slopes: Vec<S>,
    cum_mid: Vec<S>,
    permutation: Vec<usize>,
}

impl<S: Real> EmpiricalCdf<S> {
    pub fn build(p: &WeightedParticles<S>) -> Result<Self> {
        Self::build_with(p, OprOptions::default())
    }

    pub fn build_with(p: &WeightedParticles<S>, opts: OprOptions) -> Result<Self> {
        let n = p.len();
        if n < 2 {
            return Err(input(format!("need at least 2 particles, got {n}")));
        }
        p.check_normalized()?;
        if p.positions.iter().any(|x| !x.value().is_finite()) {
            return Err(input("particle positions must be finite"));
        }

        // Stable sort keeps ties in original index order.
        let mut permutation: Vec<usize> = (0..n).collect();
        permutation.sort_by(|&a, &b| {
            p.positions[a]
                .value()
                .partial_cmp(&p.positions[b].value())
                .expect("finite positions")
        });

        let mut positions: Vec<S> = Vec::with_capacity(n);
        let mut weights: Vec<S> = Vec::with_capacity(n);
        for &i in &permutation {
            let x = p.positions[i];
            let w = p.log_weights[i].exp();
            match positions.last() {
                Some(prev) if x.value() - prev.value() < MERGE_GAP => {
                    let last = weights.last_mut().expect("parallel vectors");
                    *last = *last + w;
                }
                _ => {
                    positions.push(x);
                    weights.push(w);
                }
            }
        }

        let m = weights.len();
        let others: f64 = {
            let (imax, _) = weights
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, w)| {
                    if w.value() > best.1 {
                        (i, w.value())
                    } else {
                        best
                    }
                });
            weights
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != imax)
                .map(|(_, w)| w.value())
                .sum()
        };
        if m > 1 && others == 0.0 {
            if !opts.jitter {
                return Err(Error::DegenerateWeights);
            }
            for w in &mut weights {
                *w = *w * (1.0 - JITTER) + JITTER / m as f64;
            }
        }

        let slopes: Vec<S> = (0..m.saturating_sub(1))
            .map(|i| (weights[i] + weights[i + 1]) * 0.5 / (positions[i + 1] - positions[i]))
            .collect();

        let mut cum_mid = Vec::with_capacity(m);
        let mut below: Option<S> = None;
        for &w in &weights {
            let half = w * 0.5;
            cum_mid.push(match below {
                None => half,
                Some(b) => b + half,
            });
            below = Some(match below {
                None => w,
                Some(b) => b + w,
            });
        }

        Ok(EmpiricalCdf {
            sorted_positions: positions,
            sorted_weights: weights,
            slopes,
            cum_mid,
            permutation,
        })
    }

    pub fn sorted_positions(&self) -> &[S] {
        &self.sorted_positions
    }

    pub fn sorted_weights(&self) -> &[S] {
        &self.sorted_weights
    }

    /// Slope of the ramp on each interval between neighbouring particles.
    pub fn slopes(&self) -> &[S] {
        &self.slopes
    }

    /// `F` at each sorted particle.
    pub fn cum_mid(&self) -> &[S] {
        &self.cum_mid
    }

    /// Original index of each sorted particle (before merging).
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// Number of distinct support points after merging.
    pub fn support_len(&self) -> usize {
        self.sorted_positions.len()
    }

    fn first(&self) -> (S, S) {
        (self.sorted_positions[0], self.sorted_weights[0])
    }

    fn last(&self) -> (S, S) {
        let m = self.support_len();
        (self.sorted_positions[m - 1], self.sorted_weights[m - 1])
    }

    /// Index `i` with `xᵢ ≤ x < xᵢ₊₁`; `None` in the tails.
    fn interval_of(&self, x: f64) -> Option<usize> {
        let m = self.support_len();
        if x <= self.sorted_positions[0].value() || x >= self.sorted_positions[m - 1].value() {
            return None;
        }
        let count = self.sorted_positions.partition_point(|p| p.value() <= x);
        Some(count - 1)
    }

    pub fn eval(&self, x: S) -> S {
        let xv = x.value();
        let (x1, w1) = self.first();
        let (xn, wn) = self.last();
        if xv <= x1.value() {
            w1 * 0.5 * (x - x1).exp()
        } else if xv >= xn.value() {
            (wn * 0.5 * (xn - x).exp()) * -1.0 + 1.0
        } else {
            let i = self.interval_of(xv).expect("interior point");
            self.cum_mid[i] + self.slopes[i] * (x - self.sorted_positions[i])
        }
    }

    pub fn pdf(&self, x: S) -> S {
        let xv = x.value();
        let (x1, w1) = self.first();
        let (xn, wn) = self.last();
        if xv <= x1.value() {
            w1 * 0.5 * (x - x1).exp()
        } else if xv >= xn.value() {
            wn * 0.5 * (xn - x).exp()
        } else {
            self.slopes[self.interval_of(xv).expect("interior point")]
        }
    }

    /// `F⁻¹(u)` for `0 < u < 1`.
    pub fn invert(&self, u: S) -> Result<S> {
        Ok(self.invert_traced(u)?.0)
    }

    /// Inverse together with the selected branch (`None` for the tails) and
    /// the primal distance from `u` to the nearest branch boundary.
    fn invert_traced(&self, u: S) -> Result<(S, Option<usize>, f64)> {
        let uv = u.value();
        if !(uv > 0.0 && uv < 1.0) {
            return Err(Error::Domain {
                op: "cdf_invert",
                value: uv,
            });
        }
        let m = self.support_len();
        let count = self.cum_mid.partition_point(|c| c.value() <= uv);
        let margin = |i: usize| {
            let lo = (uv - self.cum_mid[i].value()).abs();
            let hi = self
                .cum_mid
                .get(i + 1)
                .map_or(f64::INFINITY, |c| (c.value() - uv).abs());
            lo.min(hi)
        };
        if count == 0 {
            let (x1, w1) = self.first();
            let x = x1 + (u * 2.0 / w1).ln();
            return Ok((x, None, margin(0)));
        }
        if count == m {
            let (xn, wn) = self.last();
            let x = xn + (wn / ((u * -2.0) + 2.0)).ln();
            return Ok((x, None, margin(m - 1)));
        }
        let i = count - 1;
        let x = self.sorted_positions[i] + (u - self.cum_mid[i]) / self.slopes[i];
        Ok((x, Some(i), margin(i)))
    }
}

/// Discrete decisions taken by one OPR call, for detecting when a
/// perturbation changes branches.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OprTrace {
    pub permutation: Vec<usize>,
    pub support_len: usize,
    pub intervals: Vec<Option<usize>>,
    /// Smallest gap between sorted positions or between a target level and a
    /// CDF breakpoint level.
    pub margin: f64,
}

impl OprTrace {
    /// Same sort order, merges and interval choices.
    pub fn same_branches(&self, other: &OprTrace) -> bool {
        self.permutation == other.permutation
            && self.support_len == other.support_len
            && self.intervals == other.intervals
    }
}

/// Deterministic resampling to `F⁻¹((2k−1)/(2N))`, `k = 1..N`, with equal
/// output weights. Outputs are ascending.
pub fn opr_resample<S: Real>(p: &WeightedParticles<S>, opts: OprOptions) -> Result<WeightedParticles<S>> {
    Ok(opr_resample_traced(p, opts)?.0)
}

pub fn opr_resample_traced<S: Real>(
    p: &WeightedParticles<S>,
    opts: OprOptions,
) -> Result<(WeightedParticles<S>, OprTrace)> {
    let cdf = EmpiricalCdf::build_with(p, opts)?;
    let n = p.len();
    let anchor = p.positions[0];
    let mut positions = Vec::with_capacity(n);
    let mut intervals = Vec::with_capacity(n);
    let mut margin = cdf
        .sorted_positions
        .windows(2)
        .map(|w| w[1].value() - w[0].value())
        .fold(f64::INFINITY, f64::min);
    for k in 0..n {
        let u = (2 * k + 1) as f64 / (2 * n) as f64;
        let (x, interval, gap) = cdf.invert_traced(anchor.lift(u))?;
        positions.push(x);
        intervals.push(interval);
        margin = margin.min(gap);
    }
    let trace = OprTrace {
        permutation: cdf.permutation,
        support_len: cdf.sorted_positions.len(),
        intervals,
        margin,
    };
    Ok((WeightedParticles::uniform(positions)?, trace))
}

/// Draws `N` indices i.i.d. from the categorical distribution of the weights
/// and copies the selected particles. Selection contributes no gradient; the
/// copied positions keep theirs.
pub fn multinomial_resample<S: Real>(p: &WeightedParticles<S>, rng: &mut RngStream) -> Result<WeightedParticles<S>> {
    p.check_normalized()?;
    let indices = multinomial_indices(&p.weights(), p.len(), rng);
    let positions = indices.into_iter().map(|i| p.positions[i]).collect();
    WeightedParticles::uniform(positions)
}

/// `draws` categorical samples from (not necessarily normalized) weights.
pub fn multinomial_indices(weights: &[f64], draws: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for &w in weights {
        acc += w;
        cumulative.push(acc);
    }
    let last = weights.len() - 1;
    (0..draws)
        .map(|_| {
            let u = rng.uniform() * acc;
            cumulative.partition_point(|&c| c <= u).min(last)
        })
        .collect()
}

/// Integral quadratic distance `∫ (F(x) − G(x))² dx` between `cdf` and the
/// equal-weight staircase CDF of `positions` (with `H(0) = ½`).
///
/// Between consecutive breakpoints `G` is constant and `F` is either linear
/// or a single exponential, so every piece is integrated in closed form.
/// Test oracle only; not differentiable.
pub fn iqd_distance(cdf: &EmpiricalCdf<f64>, positions: &[f64]) -> f64 {
    let n = positions.len() as f64;
    let mut breaks: Vec<f64> = cdf
        .sorted_positions
        .iter()
        .chain(positions.iter())
        .copied()
        .collect();
    breaks.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    breaks.dedup();

    let staircase = |x: f64| {
        positions
            .iter()
            .map(|&p| {
                if x > p {
                    1.0
                } else if x == p {
                    0.5
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            / n
    };
    let (x1, w1) = cdf.first();
    let (xn, wn) = cdf.last();
    let (c1, cn) = (0.5 * w1, 0.5 * wn);

    // Left of everything G = 0, right of everything G = 1.
    let first = breaks[0];
    let last = breaks[breaks.len() - 1];
    let left_end = 0.5 * c1 * c1 * (2.0 * (first - x1)).exp();
    let right_end = 0.5 * cn * cn * (2.0 * (xn - last)).exp();

    let interior: f64 = breaks
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let g = staircase(0.5 * (a + b));
            if b <= x1 {
                let (ea, eb) = ((a - x1).exp(), (b - x1).exp());
                0.5 * c1 * c1 * (eb * eb - ea * ea) - 2.0 * g * c1 * (eb - ea) + g * g * (b - a)
            } else if a >= xn {
                let h = 1.0 - g;
                let (ea, eb) = ((xn - a).exp(), (xn - b).exp());
                0.5 * cn * cn * (ea * ea - eb * eb) - 2.0 * h * cn * (ea - eb) + h * h * (b - a)
            } else {
                let (da, db) = (cdf.eval(a) - g, cdf.eval(b) - g);
                (b - a) * (da * da + da * db + db * db) / 3.0
            }
        })
        .sum();
    left_end + interior + right_end
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Var};

    fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let c = 0.5 * (a + b);
        let (fa, fb, fc) = (f(a), f(b), f(c));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
        simpson_step(f, a, b, fa, fb, fc, whole, tol, depth)
    }

    #[allow(clippy::too_many_arguments)]
    fn simpson_step(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fb: f64,
        fc: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let c = 0.5 * (a + b);
        let (d, e) = (0.5 * (a + c), 0.5 * (c + b));
        let (fd, fe) = (f(d), f(e));
        let left = (c - a) / 6.0 * (fa + 4.0 * fd + fc);
        let right = (b - c) / 6.0 * (fc + 4.0 * fe + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        simpson_step(f, a, c, fa, fc, fd, left, tol / 2.0, depth - 1)
            + simpson_step(f, c, b, fc, fb, fe, right, tol / 2.0, depth - 1)
    }

    fn particles(xs: &[f64], ws: &[f64]) -> WeightedParticles<f64> {
        WeightedParticles::new(xs.to_vec(), ws.iter().map(|w| w.ln()).collect()).unwrap()
    }

    #[test]
    fn two_point_cdf() {
        let cdf = EmpiricalCdf::build(&particles(&[0.0, 1.0], &[0.5, 0.5])).unwrap();
        assert_eq!(cdf.slopes(), &[0.5]);
        assert_eq!(cdf.cum_mid(), &[0.25, 0.75]);
        assert_eq!(cdf.eval(0.5), 0.5);
        assert_eq!(cdf.invert(0.5).unwrap(), 0.5);
    }

    #[test]
    fn sorting_co_permutes_weights() {
        let cdf = EmpiricalCdf::build(&particles(&[1.0, 0.0], &[0.3, 0.7])).unwrap();
        assert_eq!(cdf.sorted_positions(), &[0.0, 1.0]);
        let w = cdf.sorted_weights();
        assert!((w[0] - 0.7).abs() < 1e-15 && (w[1] - 0.3).abs() < 1e-15);
        assert_eq!(cdf.permutation(), &[1, 0]);
    }

    #[test]
    fn three_equal_weights() {
        let third = 1.0 / 3.0;
        let cdf = EmpiricalCdf::build(&particles(&[0.0, 1.0, 2.0], &[third; 3])).unwrap();
        for (c, e) in cdf.cum_mid().iter().zip([1.0 / 6.0, 0.5, 5.0 / 6.0]) {
            assert!((c - e).abs() < 1e-15);
        }
    }

    #[test]
    fn construction_errors() {
        assert!(EmpiricalCdf::build(&particles(&[0.0], &[1.0])).is_err());
        let unnormalized = particles(&[0.0, 1.0], &[0.5, 0.6]);
        assert!(matches!(EmpiricalCdf::build(&unnormalized), Err(Error::Input(_))));
        let degenerate = WeightedParticles::new(vec![0.0, 1.0, 2.0], vec![-1e4, 0.0, -1e4]).unwrap();
        assert_eq!(
            EmpiricalCdf::build(&degenerate).unwrap_err(),
            Error::DegenerateWeights
        );
        let jittered = EmpiricalCdf::build_with(&degenerate, OprOptions { jitter: true }).unwrap();
        assert!(jittered.cum_mid().windows(2).all(|c| c[1] > c[0]));
        assert!(WeightedParticles::new(vec![0.0], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn branch_continuity() {
        let p = particles(&[-1.0, 0.3, 0.4, 2.5], &[0.1, 0.4, 0.2, 0.3]);
        let cdf = EmpiricalCdf::build(&p).unwrap();
        assert!((cdf.eval(-1.0) - 0.05).abs() < 1e-15);
        assert!((cdf.eval(2.5) - 0.85).abs() < 1e-15);
        assert!((cdf.invert(0.05).unwrap() + 1.0).abs() < 1e-14);
        assert!((cdf.invert(0.85).unwrap() - 2.5).abs() < 1e-14);
        assert!(cdf.eval(-800.0) < 1e-300);
        assert_eq!(cdf.eval(800.0), 1.0);
        for (x, c) in cdf.sorted_positions().iter().zip(cdf.cum_mid()) {
            assert!((cdf.eval(*x) - c).abs() < 1e-15);
        }
        // Tails just outside the particle range.
        let eps = 1e-9;
        assert!((cdf.eval(-1.0 - eps) - cdf.eval(-1.0 + eps)).abs() < 1e-8);
        assert!((cdf.eval(2.5 - eps) - cdf.eval(2.5 + eps)).abs() < 1e-8);
    }

    #[test]
    fn pdf_values_and_mass() {
        let p = particles(&[0.0, 1.0, 3.0], &[0.2, 0.5, 0.3]);
        let cdf = EmpiricalCdf::build(&p).unwrap();
        assert_eq!(cdf.pdf(0.5), cdf.slopes()[0]);
        assert_eq!(cdf.pdf(2.0), cdf.slopes()[1]);
        assert!((cdf.pdf(-std::f64::consts::LN_2) - 0.05).abs() < 1e-15);
        let mass = adaptive_simpson(&|x| cdf.pdf(x), -40.0, 0.0, 1e-14, 50)
            + adaptive_simpson(&|x| cdf.pdf(x), 0.0, 1.0, 1e-14, 50)
            + adaptive_simpson(&|x| cdf.pdf(x), 1.0, 3.0, 1e-14, 50)
            + adaptive_simpson(&|x| cdf.pdf(x), 3.0, 43.0, 1e-14, 50);
        assert!((mass - 1.0).abs() < 1e-6, "{mass}");
        let interior: f64 = cdf.slopes()[0] * 1.0 + cdf.slopes()[1] * 2.0;
        assert!((interior + 0.1 + 0.15 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invert_domain() {
        let cdf = EmpiricalCdf::build(&particles(&[0.0, 1.0], &[0.5, 0.5])).unwrap();
        for u in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(cdf.invert(u), Err(Error::Domain { .. })));
        }
    }

    #[test]
    fn opr_on_uniform_like_cdf() {
        // Dense equal-weight particles on [0,1]: interior is the identity map
        // up to the half-weight offsets at the ends.
        let n = 11;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let ws = vec![1.0 / n as f64; n];
        let out = opr_resample(&particles(&xs, &ws), OprOptions::default()).unwrap();
        let cdf = EmpiricalCdf::build(&particles(&xs, &ws)).unwrap();
        for (k, x) in out.positions.iter().enumerate() {
            let target = (2 * k + 1) as f64 / (2 * n) as f64;
            assert!((cdf.eval(*x) - target).abs() < 1e-12);
        }
        assert!(out.positions.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn opr_symmetric_input() {
        let out = opr_resample(&particles(&[-0.7, 0.7], &[0.5, 0.5]), OprOptions::default()).unwrap();
        assert!((out.positions[0] + out.positions[1]).abs() < 1e-14);
        let out = opr_resample(
            &particles(&[-2.0, -0.5, 0.5, 2.0], &[0.1, 0.4, 0.4, 0.1]),
            OprOptions::default(),
        )
        .unwrap();
        for k in 0..2 {
            assert!((out.positions[k] + out.positions[3 - k]).abs() < 1e-13);
        }
    }

    #[test]
    fn merging_near_duplicates() {
        let p = particles(&[0.0, 1e-14, 1.0], &[0.25, 0.25, 0.5]);
        let cdf = EmpiricalCdf::build(&p).unwrap();
        assert_eq!(cdf.support_len(), 2);
        assert_eq!(cdf.sorted_positions()[0], 0.0);
        assert!((cdf.sorted_weights()[0] - 0.5).abs() < 1e-15);
        let out = opr_resample(&p, OprOptions::default()).unwrap();
        assert_eq!(out.len(), 3);

        let all_same = particles(&[2.0, 2.0], &[0.5, 0.5]);
        let out = opr_resample(&all_same, OprOptions::default()).unwrap();
        assert!((out.positions[0] - (2.0 + 0.5f64.ln())).abs() < 1e-14);
        assert!((out.positions[1] - (2.0 - 0.5f64.ln())).abs() < 1e-14);
    }

    #[test]
    fn opr_gradient_through_positions_and_weights() {
        let xs = [0.3, -0.4, 1.1, 0.8];
        let lw = [-1.1, -1.6, -1.3, -1.5];
        fn build<'t>(t: &'t Tape, xs: &[f64], lw: &[f64]) -> (Vec<Var<'t>>, Vec<Var<'t>>) {
            let x: Vec<_> = xs.iter().map(|&v| t.leaf(v).unwrap()).collect();
            let l: Vec<_> = lw.iter().map(|&v| t.leaf(v).unwrap()).collect();
            let lse = crate::autodiff::logsumexp(&l).unwrap();
            let l: Vec<_> = l.into_iter().map(|v| v - lse).collect();
            (x, l)
        }
        let plain = |xs: &[f64], lw: &[f64]| {
            let lse = logsumexp_f64(lw);
            let p = WeightedParticles::new(xs.to_vec(), lw.iter().map(|v| v - lse).collect()).unwrap();
            opr_resample(&p, OprOptions::default()).unwrap().positions
        };
        for k in 0..4 {
            let t = Tape::new();
            let (x, l) = build(&t, &xs, &lw);
            let p = WeightedParticles::new(x.clone(), l).unwrap();
            let out = opr_resample(&p, OprOptions::default()).unwrap();
            let g = t.backward(out.positions[k]).unwrap();
            let h = 1e-6;
            for i in 0..4 {
                let mut up = xs;
                let mut dn = xs;
                up[i] += h;
                dn[i] -= h;
                let fd = (plain(&up, &lw)[k] - plain(&dn, &lw)[k]) / (2.0 * h);
                assert!((fd - g.wrt(x[i])).abs() <= 1e-5 * fd.abs().max(1.0), "k={k} i={i}");
            }
        }
    }

    #[test]
    fn multinomial_degenerate_and_copies() {
        let p = WeightedParticles::new(vec![1.0, 2.0, 3.0], vec![-800.0, 0.0, -800.0]).unwrap();
        let out = multinomial_resample(&p, &mut RngStream::new(0, 0)).unwrap();
        assert!(out.positions.iter().all(|&x| x == 2.0));
        assert!(out.log_weights.iter().all(|&w| w == -(3f64).ln()));
    }

    #[test]
    fn iqd_matches_quadrature() {
        let p = particles(&[-0.5, 0.2, 1.9, 2.0], &[0.1, 0.4, 0.3, 0.2]);
        let cdf = EmpiricalCdf::build(&p).unwrap();
        for positions in [vec![-3.0, 0.0, 0.5, 4.0], vec![0.1, 0.3, 1.95, 2.5], vec![-1.0, -0.9, 5.0, 6.0]] {
            let n = positions.len() as f64;
            let g = |x: f64| positions.iter().filter(|&&q| x > q).count() as f64 / n;
            let mut breaks: Vec<f64> = [-0.5, 0.2, 1.9, 2.0].iter().chain(&positions).copied().collect();
            breaks.sort_by(f64::total_cmp);
            breaks.insert(0, breaks[0] - 40.0);
            breaks.push(breaks[breaks.len() - 1] + 40.0);
            let numeric: f64 = breaks
                .windows(2)
                .map(|w| adaptive_simpson(&|x| (cdf.eval(x) - g(x)).powi(2), w[0], w[1], 1e-14, 40))
                .sum();
            let exact = iqd_distance(&cdf, &positions);
            assert!((numeric - exact).abs() < 1e-11, "{numeric} vs {exact}");
        }
    }

    #[test]
    fn iqd_is_minimized_at_opr_outputs() {
        let p = particles(&[-0.5, 0.2, 1.4], &[0.5, 0.2, 0.3]);
        let cdf = EmpiricalCdf::build(&p).unwrap();
        let out = opr_resample(&p, OprOptions::default()).unwrap().positions;
        let d0 = iqd_distance(&cdf, &out);
        assert!(d0 >= 0.0);
        for k in 0..3 {
            for s in [-0.01, 0.01] {
                let mut moved = out.clone();
                moved[k] += s;
                assert!(iqd_distance(&cdf, &moved) >= d0 - 1e-12);
            }
        }
    }
}
