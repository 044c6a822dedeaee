//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::time::Instant;

use oprpf::autodiff::finite_diff_check;
use oprpf::filter::run_filter;
use oprpf::models::{Lgssm, StochVol, TimeVaryingProposal};
use oprpf::oracle::kalman_loglik;
use oprpf::resampling::{iqd_distance, multinomial_indices, opr_resample, opr_resample_traced, OprTrace};
use oprpf::{EmpiricalCdf, FilterConfig, FilterRun, OprOptions, Proposal, Real, Resampler, RngStream, Tape, WeightedParticles};
use oprpf_cli::experiment::{lgssm_observations, LGSSM_TRUTH, PROPOSAL_MODEL};
use oprpf_cli::{run_experiment, Experiment, ExperimentConfig};

/// Epoch budget shared by both resamplers in the ordering comparisons.
const ORDERING_EPOCHS: usize = 100;
const ORDERING_SEEDS: [u64; 3] = [0, 1, 2];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("lgssm maximum likelihood", lgssm_mle),
        ("likelihood estimator unbiased", unbiasedness),
        ("proposal learning ordering", proposal_ordering),
        ("stochastic volatility ordering", stochvol_ordering),
        ("gradients match finite differences", gradient_check),
        ("opr is a local iqd minimum", iqd_optimality),
        ("cdf round trip and monotonicity", cdf_round_trip),
        ("resampler invariants", resampler_invariants),
        ("opr scaling", scaling),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let v = check();
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!(
            "{status} [{}] {name}: {} ({:.1} s)",
            i + 1,
            v.detail,
            started.elapsed().as_secs_f64()
        );
        failed += usize::from(!v.pass);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn lgssm_mle() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for resampler in [Resampler::Multinomial, Resampler::Opr] {
        let config = ExperimentConfig {
            resampler,
            ..ExperimentConfig::defaults(Experiment::LgssmMle, "unused.csv")
        };
        match run_experiment(&config) {
            Ok(out) => {
                let exact = out.extra("kalman_loglik_fitted").expect("kalman value");
                let rel = (out.final_elbo() - exact).abs() / exact.abs();
                pass &= rel <= 0.03;
                let theta = &out.report.final_params;
                parts.push(format!(
                    "{resampler}: elbo {:.3} vs exact {:.3}, rel {:.4}, theta [{:.3}, {:.3}]",
                    out.final_elbo(),
                    exact,
                    rel,
                    theta[0],
                    theta[1]
                ));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{resampler}: {e}"));
            }
        }
    }
    verdict(pass, parts.join("; "))
}

fn unbiasedness() -> Verdict {
    let observations = lgssm_observations(&LGSSM_TRUTH, 20, 11).unwrap();
    let exact = kalman_loglik(&LGSSM_TRUTH, &observations).unwrap();
    let model = Lgssm::new(LGSSM_TRUTH.alpha, LGSSM_TRUTH.gamma, LGSSM_TRUTH.sigma_x2, LGSSM_TRUTH.sigma_y2).unwrap();
    let config = FilterConfig::new(50, Resampler::Multinomial).unwrap();
    let root = RngStream::new(11, 5);
    let ratios: Vec<f64> = (0..2000u64)
        .map(|r| {
            let run = run_filter(&config, &model, &Proposal::Bootstrap, &observations, 0.0, &mut root.child(r)).unwrap();
            (run.log_lik - exact).exp()
        })
        .collect();
    let n = ratios.len() as f64;
    let mean = ratios.iter().sum::<f64>() / n;
    let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    verdict(
        (mean - 1.0).abs() <= 3.0 * se,
        format!("mean ratio {mean:.4}, se {se:.4}"),
    )
}

fn ordering(experiment: Experiment, strict: bool) -> Verdict {
    let mut diffs = Vec::new();
    for seed in ORDERING_SEEDS {
        let mut finals = Vec::new();
        for resampler in [Resampler::Multinomial, Resampler::Opr] {
            let config = ExperimentConfig {
                resampler,
                seed,
                epochs: ORDERING_EPOCHS,
                ..ExperimentConfig::defaults(experiment, "unused.csv")
            };
            match run_experiment(&config) {
                Ok(out) => finals.push(out.final_elbo()),
                Err(e) => return verdict(false, format!("seed {seed} {resampler}: {e}")),
            }
        }
        diffs.push(finals[1] - finals[0]);
    }
    let m = median(diffs.clone());
    let pass = if strict { m > 0.0 } else { m >= 0.0 };
    let shown: Vec<String> = diffs.iter().map(|d| format!("{d:+.3}")).collect();
    verdict(
        pass,
        format!("opr − multinomial final elbo per seed [{}], median {m:+.3}", shown.join(", ")),
    )
}

fn proposal_ordering() -> Verdict {
    ordering(Experiment::ProposalLearn, true)
}

fn stochvol_ordering() -> Verdict {
    ordering(Experiment::StochVol, false)
}

/// A filter whose log-likelihood is checked against finite differences.
trait GradCase {
    fn name(&self) -> &'static str;
    fn draw(&self, rng: &mut RngStream) -> Vec<f64>;
    fn run<S: Real>(&self, theta: &[S], rng: &mut RngStream) -> oprpf::Result<FilterRun<S>>;
}

fn grad_filter() -> FilterConfig {
    FilterConfig {
        trace: true,
        ..FilterConfig::new(10, Resampler::Opr).unwrap()
    }
}

fn between(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.uniform()
}

struct LgssmCase(Vec<f64>);

impl GradCase for LgssmCase {
    fn name(&self) -> &'static str {
        "lgssm"
    }

    fn draw(&self, rng: &mut RngStream) -> Vec<f64> {
        vec![between(rng, 0.2, 0.9), between(rng, 0.5, 1.5)]
    }

    fn run<S: Real>(&self, theta: &[S], rng: &mut RngStream) -> oprpf::Result<FilterRun<S>> {
        let model = Lgssm::new(theta[0], theta[1], LGSSM_TRUTH.sigma_x2, LGSSM_TRUTH.sigma_y2)?;
        run_filter(&grad_filter(), &model, &Proposal::Bootstrap, &self.0, theta[0], rng)
    }
}

struct StochVolCase(Vec<f64>);

impl GradCase for StochVolCase {
    fn name(&self) -> &'static str {
        "stochvol"
    }

    fn draw(&self, rng: &mut RngStream) -> Vec<f64> {
        vec![
            between(rng, -1.5, 0.0),
            between(rng, 0.5, 2.0),
            between(rng, -1.5, -0.5),
            between(rng, -0.5, 0.5),
        ]
    }

    fn run<S: Real>(&self, theta: &[S], rng: &mut RngStream) -> oprpf::Result<FilterRun<S>> {
        let model = StochVol::new(theta[0], theta[1], theta[2], theta[3]);
        run_filter(&grad_filter(), &model, &Proposal::Bootstrap, &self.0, theta[0], rng)
    }
}

struct ProposalCase(Vec<f64>);

impl GradCase for ProposalCase {
    fn name(&self) -> &'static str {
        "proposal"
    }

    fn draw(&self, rng: &mut RngStream) -> Vec<f64> {
        let n = self.0.len();
        let mut theta: Vec<f64> = (0..n).map(|_| 0.3 * rng.normal()).collect();
        theta.extend((0..n).map(|_| between(rng, 0.5, 1.5)));
        theta.extend((0..n).map(|_| between(rng, -0.5, 0.3)));
        theta
    }

    fn run<S: Real>(&self, theta: &[S], rng: &mut RngStream) -> oprpf::Result<FilterRun<S>> {
        let n = self.0.len();
        let anchor = theta[0];
        let alpha = anchor.lift(PROPOSAL_MODEL.alpha);
        let model = Lgssm::new(alpha, anchor.lift(PROPOSAL_MODEL.gamma), PROPOSAL_MODEL.sigma_x2, PROPOSAL_MODEL.sigma_y2)?;
        let params = TimeVaryingProposal::new(theta[..n].to_vec(), theta[n..2 * n].to_vec(), theta[2 * n..].to_vec())?;
        let proposal = Proposal::Learned { params: &params, alpha };
        run_filter(&grad_filter(), &model, &proposal, &self.0, anchor, rng)
    }
}

/// Same branches everywhere the finite differences look, and no boundary
/// within `1e-6`.
fn generic_point<C: GradCase>(case: &C, theta: &[f64], h: f64, noise: &RngStream) -> bool {
    let traces = |p: &[f64]| -> Option<Vec<OprTrace>> { case.run(p, &mut noise.clone()).ok().map(|r| r.traces) };
    let Some(base) = traces(theta) else { return false };
    if base.iter().any(|t| t.margin < 1e-6) {
        return false;
    }
    let mut probe = theta.to_vec();
    for i in 0..theta.len() {
        for delta in [h, -h] {
            probe[i] = theta[i] + delta;
            let Some(other) = traces(&probe) else { return false };
            if other.len() != base.len() || !base.iter().zip(&other).all(|(a, b)| a.same_branches(b)) {
                return false;
            }
        }
        probe[i] = theta[i];
    }
    true
}

fn check_case<C: GradCase>(case: &C, seed: u64) -> (bool, String) {
    const H: f64 = 1e-5;
    let mut draws = RngStream::new(seed, 0);
    let mut worst = 0.0f64;
    let mut redrawn = 0;
    let mut accepted = 0;
    let mut attempt = 0u64;
    while accepted < 10 {
        if redrawn > 200 {
            return (false, format!("{}: too many boundary points", case.name()));
        }
        let theta = case.draw(&mut draws);
        let noise = RngStream::new(seed, 1).child(attempt);
        attempt += 1;
        if !generic_point(case, &theta, H, &noise) {
            redrawn += 1;
            continue;
        }
        let tape = Tape::new();
        let leaves: Vec<_> = theta.iter().map(|&v| tape.leaf(v).unwrap()).collect();
        let run = case.run(&leaves, &mut noise.clone()).unwrap();
        let grads = tape.backward(run.log_lik).unwrap();
        let grad: Vec<f64> = leaves.iter().map(|&l| grads.wrt(l)).collect();
        let fd = finite_diff_check(|p| case.run(p, &mut noise.clone()).unwrap().log_lik, &theta, &grad, H);
        for r in fd {
            worst = worst.max(r.rel_error);
        }
        accepted += 1;
    }
    (
        worst <= 1e-4,
        format!("{} worst rel {worst:.2e} ({redrawn} redrawn)", case.name()),
    )
}

fn gradient_check() -> Verdict {
    let observations = lgssm_observations(&LGSSM_TRUTH, 20, 3).unwrap();
    let returns: Vec<f64> = observations.iter().map(|y| 0.8 * y).collect();
    let short = lgssm_observations(&PROPOSAL_MODEL, 5, 4).unwrap();
    let results = [
        check_case(&LgssmCase(observations), 1),
        check_case(&StochVolCase(returns), 2),
        check_case(&ProposalCase(short), 3),
    ];
    let pass = results.iter().all(|r| r.0);
    let detail: Vec<String> = results.into_iter().map(|r| r.1).collect();
    verdict(pass, detail.join("; "))
}

fn random_set(rng: &mut RngStream, n: usize) -> WeightedParticles<f64> {
    let positions: Vec<f64> = (0..n).map(|_| 2.0 * rng.normal()).collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let lse = oprpf::autodiff::logsumexp_f64(&raw);
    WeightedParticles::new(positions, raw.iter().map(|w| w - lse).collect()).unwrap()
}

fn iqd_optimality() -> Verdict {
    let mut rng = RngStream::new(6, 0);
    let mut worst = f64::NEG_INFINITY;
    for set in 0..50 {
        let n = 2 + set % 4;
        let p = random_set(&mut rng, n);
        let cdf = EmpiricalCdf::build(&p).unwrap();
        let opt = opr_resample(&p, OprOptions::default()).unwrap().positions;
        let d0 = iqd_distance(&cdf, &opt);
        for _ in 0..100 {
            let dir: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
            let moved: Vec<f64> = opt.iter().zip(&dir).map(|(x, d)| x + 0.01 * d / norm).collect();
            worst = worst.max(d0 - iqd_distance(&cdf, &moved));
        }
    }
    verdict(worst <= 1e-12, format!("largest decrease {worst:.3e} over 5000 perturbations"))
}

fn cdf_round_trip() -> Verdict {
    let mut rng = RngStream::new(7, 0);
    let mut worst = 0.0f64;
    let mut monotone = true;
    for set in 0..20 {
        let n = 2 + (set * 7) % 40;
        let p = random_set(&mut rng, n);
        let cdf = EmpiricalCdf::build(&p).unwrap();
        for _ in 0..1000 {
            let u = rng.uniform();
            let x = cdf.invert(u).unwrap();
            worst = worst.max((cdf.eval(x) - u).abs());
        }
        let grid: Vec<f64> = (0..1000).map(|k| cdf.invert((k as f64 + 0.5) / 1000.0).unwrap()).collect();
        monotone &= grid.windows(2).all(|w| w[0] <= w[1]);
    }
    verdict(
        worst <= 1e-10 && monotone,
        format!("max |F(F⁻¹(u)) − u| {worst:.2e}, monotone {monotone}"),
    )
}

fn resampler_invariants() -> Verdict {
    let mut rng = RngStream::new(8, 0);
    let mut ok = true;
    for set in 0..50 {
        let p = random_set(&mut rng, 2 + set);
        let (a, _) = opr_resample_traced(&p, OprOptions::default()).unwrap();
        let b = opr_resample(&p, OprOptions::default()).unwrap();
        let n = p.len() as f64;
        ok &= a.positions.windows(2).all(|w| w[0] < w[1]);
        ok &= a.log_weights.iter().all(|&w| w == -n.ln());
        ok &= a.positions.iter().zip(&b.positions).all(|(x, y)| x.to_bits() == y.to_bits());
    }

    let weights = [0.05, 0.3, 0.1, 0.25, 0.02, 0.28];
    let draws = 10_000;
    let picks = multinomial_indices(&weights, draws, &mut RngStream::new(8, 1));
    let mut worst_z = 0.0f64;
    for (i, &w) in weights.iter().enumerate() {
        let freq = picks.iter().filter(|&&k| k == i).count() as f64 / draws as f64;
        let se = (w * (1.0 - w) / draws as f64).sqrt();
        worst_z = worst_z.max((freq - w).abs() / se);
    }
    verdict(
        ok && worst_z <= 4.0,
        format!("opr sorted, equal-weight, distinct, repeatable: {ok}; multinomial worst deviation {worst_z:.2} se"),
    )
}

fn scaling() -> Verdict {
    let mut rng = RngStream::new(9, 0);
    let mut lines = Vec::new();
    let mut largest = f64::INFINITY;
    for n in [1_000, 10_000, 100_000] {
        let p = random_set(&mut rng, n);
        let mut times: Vec<f64> = (0..5)
            .map(|_| {
                let started = Instant::now();
                let out = opr_resample(&p, OprOptions::default()).unwrap();
                let elapsed = started.elapsed().as_secs_f64() * 1e3;
                assert_eq!(out.len(), n);
                elapsed
            })
            .collect();
        times.sort_by(f64::total_cmp);
        let med = times[2];
        lines.push(format!("N={n}: {med:.2} ms ({:.1} ns/particle)", med * 1e6 / n as f64));
        largest = med;
    }
    verdict(largest < 100.0, format!("median of 5: {}", lines.join(", ")))
}
