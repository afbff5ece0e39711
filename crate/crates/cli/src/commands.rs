//! Subcommand implementations.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use riskdp::horizon::{bellman_residual_opt, residual_bound, truncate_at, truncated_values, truncation_horizon};
use riskdp::mdp::{
    dp_evaluate, dp_optimize, opt_modulus, optimal_risk, policy_risk, AugPolicy, Decision, FiniteHorizonMdp,
    XGrid,
};
use riskdp::oracle::{cvar_closed_form, exact_total_cost_distribution, oracle_optimal_risk};
use riskdp::problem::{FiniteProblemFile, InfiniteProblemFile, SocProblemFile, XGridSpec};
use riskdp::risk::{risk_of_distribution, RiskFamily, ThetaGrid};
use riskdp::sampling::{sample_size_eval, sample_size_opt, sweep_eval, sweep_opt, GenerativeModel, SizeParams};
use riskdp::soc::{soc_moduli, soc_optimal_risk, SocGrid};

use crate::config::{family, load_json, n_list, resolve_risk, theta_grid, xgrid};
use crate::output::{float, write_csv, write_json};
use crate::{CliError, FiniteArgs, RiskArgs};

const DEFAULT_XGRID: XGridSpec = XGridSpec::Uniform { h: 0.01 };

struct FiniteSetup {
    mdp: FiniteHorizonMdp,
    family: RiskFamily,
    theta_grid: ThetaGrid,
    xgrid_spec: XGridSpec,
    grid: XGrid,
    s0: usize,
}

fn finite_setup(args: &FiniteArgs) -> Result<FiniteSetup, CliError> {
    let file: FiniteProblemFile = load_json(&args.problem)?;
    let mdp = file.to_mdp()?;
    let spec = resolve_risk(file.risk.as_ref(), &args.risk)?;
    let family = family(&spec, mdp.cost_bound())?;
    let theta_grid = theta_grid(&family, args.risk.theta_grid.as_deref())?;
    let xgrid_spec = xgrid(file.xgrid, args.risk.xgrid.as_deref(), DEFAULT_XGRID)?;
    let grid = XGrid::for_mdp(xgrid_spec.to_mode(), &mdp)?;
    let s0 = args.s0.unwrap_or(file.s0);
    if s0 >= mdp.n_states(0) {
        return Err(CliError::Config(format!("initial state {s0} is out of range")));
    }
    log::info!(
        "{}: T = {}, {} θ points, {} family",
        args.problem.display(),
        mdp.horizon(),
        theta_grid.len(),
        family.label()
    );
    Ok(FiniteSetup {
        mdp,
        family,
        theta_grid,
        xgrid_spec,
        grid,
        s0,
    })
}

fn x_nodes(grid: &XGrid) -> Vec<Vec<f64>> {
    (0..=grid.horizon()).map(|t| grid.stage(t).nodes()).collect()
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    schema: &'static str,
    risk: f64,
    theta_star: Vec<f64>,
    family: String,
    s0: usize,
    theta_points: usize,
    xgrid: XGridSpec,
    x_nodes: Vec<Vec<f64>>,
    policy: &'a [Vec<Vec<Decision>>],
}

pub fn solve(args: &FiniteArgs, out: &Path) -> Result<(), CliError> {
    let st = finite_setup(args)?;
    let opt = optimal_risk(&st.mdp, &st.family, &st.theta_grid, st.s0, &st.grid)?;
    write_json(
        out,
        &SolveOutput {
            schema: "riskdp.solve.v1",
            risk: opt.risk,
            theta_star: opt.theta_star,
            family: st.family.label(),
            s0: st.s0,
            theta_points: st.theta_grid.len(),
            xgrid: st.xgrid_spec,
            x_nodes: x_nodes(&st.grid),
            policy: &opt.policy.stages,
        },
    )
}

#[derive(Deserialize)]
struct PolicyFile {
    policy: Vec<Vec<Vec<Decision>>>,
    #[serde(default)]
    x_nodes: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    l_pi: Option<f64>,
}

fn load_policy(path: &Path, grid: &XGrid, mdp: &FiniteHorizonMdp) -> Result<AugPolicy, CliError> {
    let file: PolicyFile = load_json(path)?;
    if let Some(nodes) = &file.x_nodes {
        let ours = x_nodes(grid);
        let same = nodes.len() == ours.len()
            && nodes
                .iter()
                .zip(&ours)
                .all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12));
        if !same {
            return Err(CliError::Config(format!(
                "{} was written for a different x-grid",
                path.display()
            )));
        }
    }
    let policy = AugPolicy {
        stages: file.policy,
        l_pi: file.l_pi,
    };
    policy.validate(mdp, grid)?;
    Ok(policy)
}

#[derive(Serialize)]
struct EvaluateOutput {
    schema: &'static str,
    risk: f64,
    theta_star: Vec<f64>,
    family: String,
    s0: usize,
    theta_points: usize,
    xgrid: XGridSpec,
}

pub fn evaluate(args: &FiniteArgs, policy: &Path, out: &Path) -> Result<(), CliError> {
    let st = finite_setup(args)?;
    let pi = load_policy(policy, &st.grid, &st.mdp)?;
    let (risk, theta_star) = policy_risk(&st.mdp, &pi, &st.family, &st.theta_grid, st.s0, &st.grid)?;
    write_json(
        out,
        &EvaluateOutput {
            schema: "riskdp.evaluate.v1",
            risk,
            theta_star,
            family: st.family.label(),
            s0: st.s0,
            theta_points: st.theta_grid.len(),
            xgrid: st.xgrid_spec,
        },
    )
}

pub struct SweepRequest<'a> {
    pub args: &'a FiniteArgs,
    pub n_list: &'a str,
    pub reps: usize,
    pub seed: u64,
    pub policy: Option<&'a Path>,
    pub accuracy: Option<(f64, f64)>,
    pub timing: bool,
    pub out: &'a Path,
    pub summary: Option<&'a Path>,
}

#[derive(Serialize)]
struct MedianRow {
    n: usize,
    median: f64,
}

#[derive(Serialize)]
struct SampleSize {
    eps: f64,
    delta: f64,
    n: u64,
    calibration: &'static str,
}

#[derive(Serialize)]
struct SweepSummary {
    schema: &'static str,
    mode: &'static str,
    family: String,
    s0: usize,
    seed: u64,
    reps: usize,
    n_list: Vec<usize>,
    truth: f64,
    medians: Vec<MedianRow>,
    slope: Option<f64>,
    intercept: Option<f64>,
    slope_ci: Option<[f64; 2]>,
    aborted: Option<String>,
    sample_size: Option<SampleSize>,
}

fn summary_path(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".summary.json");
    out.with_file_name(name)
}

pub fn sweep(req: &SweepRequest<'_>) -> Result<(), CliError> {
    let st = finite_setup(req.args)?;
    let sizes = n_list(req.n_list)?;
    let model = GenerativeModel::new(st.mdp.clone(), req.seed);
    let policy = req.policy.map(|p| load_policy(p, &st.grid, &st.mdp)).transpose()?;
    let result = match &policy {
        Some(pi) => sweep_eval(&model, pi, &st.family, &st.theta_grid, &sizes, req.reps, st.s0, &st.grid)?,
        None => sweep_opt(&model, &st.family, &st.theta_grid, &sizes, req.reps, st.s0, &st.grid)?,
    };
    let rows: Vec<Vec<String>> = result
        .rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.rep.to_string(),
                float(r.error),
                float(if req.timing { r.seconds } else { 0.0 }),
            ]
        })
        .collect();
    write_csv(req.out, &["n", "rep", "error", "seconds"], &rows)?;

    let sample_size = match req.accuracy {
        None => None,
        Some((eps, delta)) => {
            let p = SizeParams {
                horizon: st.mdp.horizon().max(1),
                l_c: st.family.l_c(),
                l_theta: st.family.l_theta(),
                theta_dim: st.family.theta_dim(),
                n_states: st.mdp.max_states(),
                n_actions: st.mdp.max_actions(),
                r_theta: st.family.r_theta(),
            };
            let n = match &policy {
                None => Some(sample_size_opt(&p, eps, delta)?),
                Some(pi) => match pi.l_pi {
                    Some(l) => Some(sample_size_eval(&p, l, eps, delta)?),
                    None => {
                        log::warn!("policy file has no l_pi; sample size omitted");
                        None
                    }
                },
            };
            n.map(|n| SampleSize {
                eps,
                delta,
                n,
                calibration: "proof-calibrated",
            })
        }
    };
    let summary = SweepSummary {
        schema: "riskdp.sweep.v1",
        mode: if policy.is_some() { "policy" } else { "optimal" },
        family: st.family.label(),
        s0: st.s0,
        seed: req.seed,
        reps: req.reps,
        n_list: sizes,
        truth: result.truth,
        medians: result.medians.iter().map(|&(n, median)| MedianRow { n, median }).collect(),
        slope: result.slope,
        intercept: result.intercept,
        slope_ci: result.slope_ci.map(|(a, b)| [a, b]),
        aborted: result.aborted.clone(),
        sample_size,
    };
    let path = req.summary.map(Path::to_path_buf).unwrap_or_else(|| summary_path(req.out));
    write_json(&path, &summary)?;
    match result.aborted {
        Some(msg) => Err(CliError::Numeric(format!("sweep stopped early: {msg}"))),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    passed: bool,
    value: f64,
    tolerance: f64,
}

#[derive(Serialize)]
struct OracleReport {
    schema: &'static str,
    family: String,
    s0: usize,
    dp_risk: f64,
    oracle_risk: f64,
    policies_enumerated: usize,
    checks: Vec<Check>,
    violations: Vec<&'static str>,
}

fn check(name: &'static str, value: f64, tolerance: f64) -> Check {
    Check {
        name,
        passed: value <= tolerance,
        value,
        tolerance,
    }
}

pub fn oracle_check(args: &FiniteArgs, out: &Path) -> Result<(), CliError> {
    let st = finite_setup(args)?;
    if !st.grid.is_lattice() {
        return Err(CliError::Config("oracle-check needs a lattice x-grid".into()));
    }
    let (mdp, family, grid) = (&st.mdp, &st.family, &st.grid);
    let dp = optimal_risk(mdp, family, &st.theta_grid, st.s0, grid)?;
    let oracle = oracle_optimal_risk(mdp, family, &st.theta_grid, st.s0, grid)?;
    let mut checks = vec![check(
        "optimal_risk_matches_enumeration",
        (dp.risk - oracle.risk).abs(),
        st.theta_grid.step() * family.l_theta() + 1e-9,
    )];

    let theta = &dp.theta_star;
    let mut telescoping: f64 = 0.0;
    let mut policies = vec![dp.policy.clone()];
    policies.extend((0..mdp.max_actions()).map(|a| {
        AugPolicy::from_fn(mdp, grid, |t, _, _| Decision::Action(a.min(mdp.n_actions(t) - 1)))
    }));
    for pi in &policies {
        let table = dp_evaluate(mdp, pi, family, theta, grid)?;
        let dist = exact_total_cost_distribution(mdp, pi, grid, st.s0)?;
        let direct = dist.expect(|z| family.eval_unchecked(theta, z));
        let augmented = table.at(grid, 0, st.s0, 0.0) + family.eval_unchecked(theta, 0.0);
        telescoping = telescoping.max((direct - augmented).abs());
    }
    checks.push(check("telescoping_identity", telescoping, 1e-12));

    let (opt, greedy) = dp_optimize(mdp, family, theta, grid)?;
    let eval = dp_evaluate(mdp, &greedy, family, theta, grid)?;
    checks.push(check("greedy_consistency", opt.max_abs_diff(&eval), 1e-12));
    let horizon = mdp.horizon();
    let l_c = family.l_c();
    checks.push(check(
        "lipschitz_moduli",
        opt.lipschitz_excess(grid, |t| opt_modulus(horizon, t, l_c)).max(0.0),
        1e-9,
    ));

    if let Some(alpha) = family.alpha() {
        let (dual, _) = risk_of_distribution(family, &oracle.dist, &st.theta_grid)?;
        let tail = cvar_closed_form(&oracle.dist, alpha)?;
        checks.push(check(
            "cvar_closed_form",
            (dual - tail).abs(),
            2.0 * st.theta_grid.step() * l_c,
        ));
    }

    let violations: Vec<&'static str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    let count = violations.len();
    write_json(
        out,
        &OracleReport {
            schema: "riskdp.oracle_check.v1",
            family: family.label(),
            s0: st.s0,
            dp_risk: dp.risk,
            oracle_risk: oracle.risk,
            policies_enumerated: oracle.policies_enumerated,
            checks,
            violations,
        },
    )?;
    if count > 0 {
        return Err(CliError::Violations(count));
    }
    Ok(())
}

#[derive(Serialize)]
struct SocOutput<'a> {
    schema: &'static str,
    risk: f64,
    theta_star: Vec<f64>,
    family: String,
    s0: Vec<f64>,
    h_state: f64,
    h_action: f64,
    xgrid: XGridSpec,
    state_nodes: usize,
    action_nodes: usize,
    declared_lipschitz: f64,
    observed_lipschitz: f64,
    state_modulus: f64,
    cost_modulus: f64,
    discretization_bound: f64,
    policy: &'a [Vec<Vec<Decision>>],
}

pub fn soc_solve(path: &Path, risk: &RiskArgs, out: &Path) -> Result<(), CliError> {
    let file: SocProblemFile = load_json(path)?;
    let problem = file.to_problem()?;
    let spec = resolve_risk(file.risk.as_ref(), risk)?;
    let cost_bound: f64 = problem.cost_scale.iter().sum();
    let family = family(&spec, cost_bound)?;
    let tg = theta_grid(&family, risk.theta_grid.as_deref())?;
    let xspec = xgrid(Some(file.grids.xgrid), risk.xgrid.as_deref(), DEFAULT_XGRID)?;
    let grid = SocGrid::new(&problem, file.grids.h_s, file.grids.h_a, xspec.to_mode())?;
    let s0 = file.initial_state();
    let result = soc_optimal_risk(&problem, &family, &tg, &s0, &grid)?;
    let horizon = problem.horizon;
    let (l_x, l_s) = soc_moduli(horizon, 0, family.l_c(), problem.lipschitz, None);
    let h_x = (0..=horizon).map(|t| grid.xgrid.stage(t).step()).fold(0.0, f64::max);
    let bound = (l_s * grid.states.spacing() + l_s * grid.actions.spacing() + l_x * h_x) * horizon.max(1) as f64;
    write_json(
        out,
        &SocOutput {
            schema: "riskdp.soc_solve.v1",
            risk: result.risk,
            theta_star: result.theta_star,
            family: family.label(),
            s0,
            h_state: file.grids.h_s,
            h_action: file.grids.h_a,
            xgrid: xspec,
            state_nodes: grid.states.len(),
            action_nodes: grid.actions.len(),
            declared_lipschitz: problem.lipschitz,
            observed_lipschitz: grid.observed_lipschitz,
            state_modulus: l_s,
            cost_modulus: l_x,
            discretization_bound: bound,
            policy: &result.policy.stages,
        },
    )
}

#[derive(Serialize)]
struct ResidualReport {
    max_abs: f64,
    extrapolated: usize,
    points: usize,
    bound: f64,
}

#[derive(Serialize)]
struct HorizonOutput {
    schema: &'static str,
    gamma: f64,
    eps_trunc: f64,
    horizon: usize,
    epsilon_trunc: f64,
    risk: f64,
    theta_star: Vec<f64>,
    family: String,
    s0: usize,
    xgrid: XGridSpec,
    residual: Option<ResidualReport>,
    residual_note: Option<String>,
}

pub fn horizon_solve(
    path: &Path,
    risk: &RiskArgs,
    gamma: Option<f64>,
    eps_trunc: f64,
    s0: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    let file: InfiniteProblemFile = load_json(path)?;
    let inf = file.to_mdp(gamma)?;
    let spec = resolve_risk(file.risk.as_ref(), risk)?;
    let family = family(&spec, inf.cost_bound())?;
    if !family.l_c().is_finite() {
        return Err(CliError::Config(format!(
            "{} has an infinite Lipschitz constant, so no truncation horizon meets a tolerance",
            family.label()
        )));
    }
    let tg = theta_grid(&family, risk.theta_grid.as_deref())?;
    let xspec = xgrid(file.xgrid, risk.xgrid.as_deref(), DEFAULT_XGRID)?;
    let s0 = s0.unwrap_or(file.s0);
    if s0 >= inf.n_states() {
        return Err(CliError::Config(format!("initial state {s0} is out of range")));
    }
    let plan = truncation_horizon(inf.gamma(), eps_trunc, family.l_c())?;
    let mdp = truncate_at(&inf, plan.horizon)?;
    let grid = XGrid::for_mdp(xspec.to_mode(), &mdp)?;
    let opt = optimal_risk(&mdp, &family, &tg, s0, &grid)?;
    let (residual, residual_note) = if inf.gamma() == 0.0 {
        (None, Some("no fixed-point operator at zero discount".to_string()))
    } else {
        let table = truncated_values(
            &inf,
            &family,
            None,
            plan.horizon,
            std::slice::from_ref(&opt.theta_star),
            (0.0, inf.max_cost()),
            xspec.to_mode(),
        );
        match table.and_then(|t| bellman_residual_opt(&inf, &family, &t)) {
            Ok(r) => (
                Some(ResidualReport {
                    max_abs: r.max_abs,
                    extrapolated: r.extrapolated,
                    points: r.points,
                    bound: residual_bound(family.l_c(), inf.gamma(), plan.horizon),
                }),
                None,
            ),
            Err(e @ riskdp::Error::UnsupportedFamily(_)) => (None, Some(e.to_string())),
            Err(e) => return Err(e.into()),
        }
    };
    write_json(
        out,
        &HorizonOutput {
            schema: "riskdp.horizon_solve.v1",
            gamma: inf.gamma(),
            eps_trunc,
            horizon: plan.horizon,
            epsilon_trunc: plan.epsilon_trunc,
            risk: opt.risk,
            theta_star: opt.theta_star,
            family: family.label(),
            s0,
            xgrid: xspec,
            residual,
            residual_note,
        },
    )
}
