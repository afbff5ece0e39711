//! Generative-model sampling, empirical kernels, rate sweeps and explicit
//! sample-size formulas.
//!
//! Draws for a kernel row `(t, s, a)` come from a ChaCha8 stream selected by
//! `(t, s, a)` under the model seed, so the `i`-th draw of a row is fixed by
//! `(seed, t, s, a, i)` regardless of the order rows are built in.

use std::time::Instant;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::horizon::truncation_horizon;
use crate::mdp::{eval_modulus, opt_modulus, optimal_risk, policy_risk, AugPolicy, FiniteHorizonMdp, XGrid};
use crate::risk::{RiskFamily, ThetaGrid};
use crate::soc::{soc_moduli, Scenario};

/// Ground-truth MDP queried through i.i.d. next-state draws.
#[derive(Debug, Clone)]
pub struct GenerativeModel {
    pub mdp: FiniteHorizonMdp,
    pub seed: u64,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replicate `rep` at sweep size `n` under a base seed.
pub fn replicate_seed(seed: u64, n: usize, rep: usize) -> u64 {
    mix(mix(seed ^ mix(n as u64)) ^ rep as u64)
}

fn row_stream(t: usize, s: usize, a: usize) -> u64 {
    ((t as u64) << 42) | ((s as u64) << 21) | a as u64
}

impl GenerativeModel {
    pub fn new(mdp: FiniteHorizonMdp, seed: u64) -> Self {
        Self { mdp, seed }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            mdp: self.mdp.clone(),
            seed,
        }
    }

    /// The first `n` next-state draws from row `(t, s, a)`.
    pub fn draws(&self, t: usize, s: usize, a: usize, n: usize) -> Vec<usize> {
        let row = self.mdp.kernel_row(t, s, a);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(row_stream(t, s, a));
        let dist = WeightedIndex::new(row).expect("kernel rows are probability vectors");
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    }
}

/// Empirical kernels `counts / n` from `n` draws per row; costs unchanged.
pub fn build_empirical_mdp(model: &GenerativeModel, n: usize) -> Result<FiniteHorizonMdp> {
    if n == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let mdp = &model.mdp;
    let kernels = (0..mdp.horizon())
        .map(|t| {
            (0..mdp.n_states(t))
                .map(|s| {
                    (0..mdp.n_actions(t))
                        .map(|a| {
                            let mut counts = vec![0usize; mdp.kernel_row(t, s, a).len()];
                            for j in model.draws(t, s, a, n) {
                                counts[j] += 1;
                            }
                            counts.into_iter().map(|c| c as f64 / n as f64).collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    mdp.with_kernels(kernels)
}

/// Empirical scenario sets: `n` draws per stage from `sampler`, equal weights,
/// identical draws merged (first occurrence order).
pub fn empirical_scenarios<F>(sampler: F, horizon: usize, n: usize, seed: u64) -> Result<Vec<Vec<Scenario>>>
where
    F: Fn(usize, &mut ChaCha8Rng) -> Vec<f64>,
{
    if n == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    Ok((0..horizon)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let mut out: Vec<Scenario> = Vec::new();
            for _ in 0..n {
                let xi = sampler(t, &mut rng);
                match out.iter_mut().find(|sc| sc.xi == xi) {
                    Some(sc) => sc.p += 1.0 / n as f64,
                    None => out.push(Scenario { xi, p: 1.0 / n as f64 }),
                }
            }
            out
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub rep: usize,
    pub error: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    /// Exact ground-truth value at the start state.
    pub truth: f64,
    /// Rows ordered by `(n, rep)`.
    pub rows: Vec<SweepRow>,
    /// Median error per sample size.
    pub medians: Vec<(usize, f64)>,
    /// Least-squares slope of log median error against log n; `None` when any
    /// median is zero or fewer than two sizes were run.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    /// 95% confidence interval of the slope (needs at least three sizes).
    pub slope_ci: Option<(f64, f64)>,
    /// First solver failure, if the sweep stopped early.
    pub aborted: Option<String>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

/// Least-squares line through `(x, y)` with a 95% slope interval.
pub fn fit_line(points: &[(f64, f64)]) -> Option<(f64, f64, Option<(f64, f64)>)> {
    let k = points.len();
    if k < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k as f64;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k as f64;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ci = (k >= 3).then(|| {
        let sse: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
        let se = (sse / (k - 2) as f64 / sxx).sqrt();
        let q = StudentsT::new(0.0, 1.0, (k - 2) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975);
        (slope - q * se, slope + q * se)
    });
    Some((slope, intercept, ci))
}

fn check_sweep(n_list: &[usize], reps: usize) -> Result<()> {
    if n_list.is_empty() || reps == 0 {
        return Err(Error::Config("a sweep needs at least one size and one replicate".into()));
    }
    if n_list[0] == 0 || n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("sample sizes must be positive and strictly increasing".into()));
    }
    Ok(())
}

fn run_sweep<F>(truth: f64, n_list: &[usize], reps: usize, solve: F) -> SweepResult
where
    F: Fn(usize, usize) -> Result<f64> + Sync,
{
    let jobs: Vec<(usize, usize)> = n_list
        .iter()
        .flat_map(|&n| (0..reps).map(move |r| (n, r)))
        .collect();
    let outcomes: Vec<(usize, usize, Result<f64>, f64)> = jobs
        .par_iter()
        .map(|&(n, rep)| {
            let start = Instant::now();
            let v = solve(n, rep);
            (n, rep, v, start.elapsed().as_secs_f64())
        })
        .collect();
    let mut rows = Vec::new();
    let mut aborted = None;
    for (n, rep, v, seconds) in outcomes {
        match v {
            Ok(v) => rows.push(SweepRow {
                n,
                rep,
                error: (v - truth).abs(),
                seconds,
            }),
            Err(e) => {
                if aborted.is_none() {
                    aborted = Some(format!("n = {n}, replicate {rep}: {e}"));
                }
            }
        }
    }
    let medians: Vec<(usize, f64)> = n_list
        .iter()
        .filter_map(|&n| {
            let mut errs: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.error).collect();
            (!errs.is_empty()).then(|| (n, median(&mut errs)))
        })
        .collect();
    let fit = if medians.iter().any(|m| m.1 <= 0.0) {
        None
    } else {
        let pts: Vec<(f64, f64)> = medians.iter().map(|&(n, e)| ((n as f64).ln(), e.ln())).collect();
        fit_line(&pts)
    };
    SweepResult {
        truth,
        rows,
        medians,
        slope: fit.map(|f| f.0),
        intercept: fit.map(|f| f.1),
        slope_ci: fit.and_then(|f| f.2),
        aborted,
    }
}

/// Errors `|R̂*_n − R*|` of the plug-in optimal risk at `s0`.
pub fn sweep_opt(
    model: &GenerativeModel,
    family: &RiskFamily,
    theta_grid: &ThetaGrid,
    n_list: &[usize],
    reps: usize,
    s0: usize,
    grid: &XGrid,
) -> Result<SweepResult> {
    check_sweep(n_list, reps)?;
    let truth = optimal_risk(&model.mdp, family, theta_grid, s0, grid)?.risk;
    Ok(run_sweep(truth, n_list, reps, |n, rep| {
        let m = model.with_seed(replicate_seed(model.seed, n, rep));
        let emp = build_empirical_mdp(&m, n)?;
        Ok(optimal_risk(&emp, family, theta_grid, s0, grid)?.risk)
    }))
}

/// Errors `|R̂^π_n − R^π|` of the plug-in risk of a fixed policy at `s0`.
#[allow(clippy::too_many_arguments)]
pub fn sweep_eval(
    model: &GenerativeModel,
    policy: &AugPolicy,
    family: &RiskFamily,
    theta_grid: &ThetaGrid,
    n_list: &[usize],
    reps: usize,
    s0: usize,
    grid: &XGrid,
) -> Result<SweepResult> {
    check_sweep(n_list, reps)?;
    let truth = policy_risk(&model.mdp, policy, family, theta_grid, s0, grid)?.0;
    Ok(run_sweep(truth, n_list, reps, |n, rep| {
        let m = model.with_seed(replicate_seed(model.seed, n, rep));
        let emp = build_empirical_mdp(&m, n)?;
        Ok(policy_risk(&emp, policy, family, theta_grid, s0, grid)?.0)
    }))
}

/// Problem constants entering the finite-MDP sample-size formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeParams {
    pub horizon: usize,
    pub l_c: f64,
    pub l_theta: f64,
    pub theta_dim: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub r_theta: f64,
}

fn check_accuracy(eps: f64, delta: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("accuracy {eps} must be positive")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("confidence level {delta} must lie in (0, 1)")));
    }
    Ok(())
}

fn check_size_params(p: &SizeParams) -> Result<()> {
    let positive = [p.l_c, p.l_theta, p.r_theta].iter().all(|v| *v > 0.0 && v.is_finite());
    if p.horizon == 0 || p.n_states == 0 || p.n_actions == 0 || !positive {
        return Err(Error::Config("sample-size parameters must be positive".into()));
    }
    Ok(())
}

/// `⌈(8T⁴L_C²/ε²)·max(0, log_arg)⌉`, at least 1.
fn hoeffding_count(horizon: usize, l_c: f64, eps: f64, log_arg: f64) -> Result<u64> {
    let t = horizon as f64;
    let lead = 8.0 * t.powi(4) * l_c * l_c / (eps * eps);
    let n = (lead * log_arg.max(0.0)).ceil().max(1.0);
    if !(n < 9.0e18) {
        return Err(Error::TooLarge(format!("sample size {n:e} does not fit in 64 bits")));
    }
    Ok(n as u64)
}

fn finite_log_arg(p: &SizeParams, modulus: f64, eps: f64, delta: f64) -> f64 {
    let t = p.horizon as f64;
    let eps_x = eps / (8.0 * t * modulus);
    let eps_theta = eps / (8.0 * t * p.l_theta);
    (2.0 * t).ln()
        + (p.n_states as f64).ln()
        + (p.n_actions as f64).ln()
        + (t / eps_x).ln()
        + p.theta_dim as f64 * (3.0 * p.r_theta / eps_theta).ln()
        - delta.ln()
}

/// Samples per row that make the plug-in policy risk ε-accurate with
/// probability `1 − δ` (proof-calibrated constants).
pub fn sample_size_eval(p: &SizeParams, l_pi: f64, eps: f64, delta: f64) -> Result<u64> {
    check_accuracy(eps, delta)?;
    check_size_params(p)?;
    if !(l_pi >= 0.0 && l_pi.is_finite()) {
        return Err(Error::Config(format!("policy Lipschitz constant {l_pi} is invalid")));
    }
    let modulus = eval_modulus(p.horizon, 0, p.l_c, l_pi);
    hoeffding_count(p.horizon, p.l_c, eps, finite_log_arg(p, modulus, eps, delta))
}

/// Samples per row that make the plug-in optimal risk ε-accurate with
/// probability `1 − δ` (proof-calibrated constants).
pub fn sample_size_opt(p: &SizeParams, eps: f64, delta: f64) -> Result<u64> {
    check_accuracy(eps, delta)?;
    check_size_params(p)?;
    let modulus = opt_modulus(p.horizon, 0, p.l_c);
    hoeffding_count(p.horizon, p.l_c, eps, finite_log_arg(p, modulus, eps, delta))
}

/// Problem constants entering the control-problem sample-size formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SocSizeParams {
    pub horizon: usize,
    pub l_c: f64,
    pub l_theta: f64,
    /// Joint Lipschitz constant of costs and dynamics.
    pub lipschitz: f64,
    /// Policy Lipschitz constant; `None` for the optimal value.
    pub l_pi: Option<f64>,
    pub theta_dim: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub r_state: f64,
    pub r_action: f64,
    pub r_theta: f64,
}

/// Scenarios per stage for an ε-accurate plug-in risk with probability `1 − δ`.
///
/// The error budget is split four ways across the state, action, accumulated
/// cost and θ nets; each net radius is `ε / (16 T · modulus)`.
pub fn sample_size_soc(p: &SocSizeParams, eps: f64, delta: f64) -> Result<u64> {
    check_accuracy(eps, delta)?;
    let positive = [p.l_c, p.l_theta, p.lipschitz, p.r_theta].iter().all(|v| *v > 0.0 && v.is_finite())
        && [p.r_state, p.r_action].iter().all(|v| *v >= 0.0 && v.is_finite());
    if p.horizon == 0 || !positive || p.l_pi.is_some_and(|l| !(l >= 0.0 && l.is_finite())) {
        return Err(Error::Config("sample-size parameters must be positive".into()));
    }
    let t = p.horizon as f64;
    let (l_x, l_s) = soc_moduli(p.horizon, 0, p.l_c, p.lipschitz, p.l_pi);
    let eps_s = eps / (16.0 * t * l_s);
    let eps_x = eps / (16.0 * t * l_x);
    let eps_theta = eps / (16.0 * t * p.l_theta);
    let net = |dim: usize, r: f64, e: f64| if dim == 0 || r == 0.0 { 0.0 } else { dim as f64 * (3.0 * r / e).ln().max(0.0) };
    let log_arg = (2.0 * t).ln()
        + net(p.state_dim, p.r_state, eps_s)
        + net(p.action_dim, p.r_action, eps_s)
        + (t / eps_x).ln()
        + net(p.theta_dim, p.r_theta, eps_theta)
        - delta.ln();
    hoeffding_count(p.horizon, p.l_c, eps, log_arg)
}

/// Truncation horizon for `ε/2` and the optimal-risk sample size at `ε/2`
/// on the truncated problem. `p.horizon` is ignored.
pub fn sample_size_infinite(gamma: f64, p: &SizeParams, eps: f64, delta: f64) -> Result<(usize, u64)> {
    check_accuracy(eps, delta)?;
    let plan = truncation_horizon(gamma, eps / 2.0, p.l_c)?;
    let q = SizeParams {
        horizon: plan.horizon,
        ..*p
    };
    Ok((plan.horizon, sample_size_opt(&q, eps / 2.0, delta)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::two_action;

    fn hand_params() -> SizeParams {
        SizeParams {
            horizon: 2,
            l_c: 2.0,
            l_theta: 2.0,
            theta_dim: 1,
            n_states: 2,
            n_actions: 2,
            r_theta: 2.0,
        }
    }

    #[test]
    fn draws_are_reproducible_and_prefix_stable() {
        let m = GenerativeModel::new(two_action(), 9);
        assert_eq!(m.draws(0, 0, 0, 50), m.draws(0, 0, 0, 50));
        assert_eq!(m.draws(0, 0, 0, 20), m.draws(0, 0, 0, 50)[..20]);
        assert_ne!(m.draws(0, 0, 0, 50), m.with_seed(10).draws(0, 0, 0, 50));
    }

    #[test]
    fn single_draw_gives_one_hot_rows() {
        let m = GenerativeModel::new(two_action(), 1);
        let e = build_empirical_mdp(&m, 1).unwrap();
        for row in e.kernels().iter().flatten().flatten() {
            assert_eq!(row.iter().filter(|&&p| p == 1.0).count(), 1);
        }
    }

    #[test]
    fn zero_samples_rejected() {
        let m = GenerativeModel::new(two_action(), 1);
        assert!(build_empirical_mdp(&m, 0).unwrap_err().is_config());
    }

    #[test]
    fn median_and_fit() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        let pts: Vec<(f64, f64)> = (1..6).map(|i| (i as f64, 1.0 - 0.5 * i as f64)).collect();
        let (s, b, ci) = fit_line(&pts).unwrap();
        assert!((s + 0.5).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
        let (lo, hi) = ci.unwrap();
        assert!((lo + 0.5).abs() < 1e-9 && (hi + 0.5).abs() < 1e-9);
    }

    #[test]
    fn hand_evaluated_eval_size() {
        // lead 8·2⁴·2²/0.1² = 51200; log argument 16·3840·1920/0.05
        let n = sample_size_eval(&hand_params(), 0.0, 0.1, 0.05).unwrap();
        let oracle = (51200.0f64 * 2_359_296_000f64.ln()).ceil() as u64;
        assert_eq!(n, oracle);
    }

    #[test]
    fn sizes_are_monotone() {
        let p = hand_params();
        let n = |e, d| sample_size_opt(&p, e, d).unwrap();
        assert!(n(0.05, 0.05) >= n(0.1, 0.05));
        assert!(n(0.1, 0.01) >= n(0.1, 0.05));
        let r = n(0.001, 0.05) as f64 / n(0.002, 0.05) as f64;
        assert!((3.5..=4.5).contains(&r));
        assert!(n(0.1, 0.999_999) >= 1);
        assert!(sample_size_opt(&p, 0.0, 0.5).is_err());
        assert!(sample_size_opt(&p, 0.1, 1.0).is_err());
    }

    #[test]
    fn infinite_horizon_degenerates_at_zero_discount() {
        let (t, n) = sample_size_infinite(0.0, &hand_params(), 0.1, 0.05).unwrap();
        assert_eq!(t, 1);
        assert!(n >= 1);
    }
}
