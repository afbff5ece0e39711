//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use riskdp::horizon::{
    bellman_residual_eval, bellman_residual_opt, cvar_operator_residual, cvar_truncated_values, residual_bound,
    truncated_risk, truncated_values, StationaryPolicy,
};
use riskdp::instances::{dyadic_chain, random_lattice_mdp, three_state_discounted, two_action};
use riskdp::mdp::{
    dp_evaluate, dp_optimize, eval_modulus, opt_modulus, optimal_risk, AugPolicy, Decision, FiniteHorizonMdp,
    XGrid, XMode,
};
use riskdp::oracle::{cvar_closed_form, exact_total_cost_distribution, oracle_optimal_risk, primal_phi_risk};
use riskdp::risk::{
    check_scaling, risk_of_distribution, DiscreteDist, PhiSpec, RiskFamily, ThetaBox, ThetaGrid, CONJUGATE_TOL,
    LAMBDA_MIN,
};
use riskdp::sampling::{sweep_opt, GenerativeModel};
use riskdp::soc::{embed_mdp, soc_moduli, soc_optimal_risk, BoxDomain, Dynamics, Scenario, SocCost, SocGrid, SocProblem};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

const K: u32 = 4;
const THETA_STEP: f64 = 0.05;
const ALPHAS: [f64; 3] = [0.25, 0.5, 1.0];

/// The 50-instance suite shared by criteria 1 to 4.
fn suite() -> Vec<(FiniteHorizonMdp, RiskFamily)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce);
    (0..50)
        .map(|i| {
            let mdp = random_lattice_mdp(&mut rng, 3, 2, 3, K);
            let family = RiskFamily::cvar_default(ALPHAS[i % 3], mdp.cost_bound()).unwrap();
            (mdp, family)
        })
        .collect()
}

fn lattice(mdp: &FiniteHorizonMdp) -> XGrid {
    XGrid::for_mdp(XMode::Lattice { k: K }, mdp).unwrap()
}

fn theta_grid(family: &RiskFamily) -> ThetaGrid {
    ThetaGrid::with_step(family.theta_box(), THETA_STEP).unwrap()
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    let mut enumerated = 0;
    for (mdp, family) in suite() {
        let grid = lattice(&mdp);
        let tg = theta_grid(&family);
        let tol = tg.step() * family.l_theta() + 1e-9;
        for s0 in 0..mdp.n_states(0) {
            let dp = optimal_risk(&mdp, &family, &tg, s0, &grid).unwrap().risk;
            let oracle = oracle_optimal_risk(&mdp, &family, &tg, s0, &grid).unwrap();
            enumerated += oracle.policies_enumerated;
            let gap = (dp - oracle.risk).abs();
            worst = worst.max(gap);
            if gap > tol {
                failures += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failures == 0 && secs < 60.0,
        format!("max |DP − oracle| = {worst:.3e}, {failures} over tolerance, {enumerated} policies enumerated, {secs:.2} s"),
    )
}

fn random_policy(mdp: &FiniteHorizonMdp, grid: &XGrid, rng: &mut ChaCha8Rng) -> AugPolicy {
    AugPolicy::from_fn(mdp, grid, |t, _, _| Decision::Action(rng.gen_range(0..mdp.n_actions(t))))
}

fn telescoping() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e1e);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (mdp, family) in suite() {
        let grid = lattice(&mdp);
        for _ in 0..100 {
            let policy = random_policy(&mdp, &grid, &mut rng);
            let theta = [rng.gen_range(0.0..=mdp.cost_bound())];
            let table = dp_evaluate(&mdp, &policy, &family, &theta, &grid).unwrap();
            for s0 in 0..mdp.n_states(0) {
                let dist = exact_total_cost_distribution(&mdp, &policy, &grid, s0).unwrap();
                let direct = dist.expect(|z| family.eval(&theta, z).unwrap());
                let augmented = table.at(&grid, 0, s0, 0.0) + family.eval(&theta, 0.0).unwrap();
                worst = worst.max((direct - augmented).abs());
                count += 1;
            }
        }
    }
    outcome(worst <= 1e-12, format!("max gap {worst:.3e} over {count} (policy, start) pairs"))
}

fn greedy_consistency() -> Outcome {
    let mut worst: f64 = 0.0;
    for (mdp, family) in suite() {
        let grid = lattice(&mdp);
        let tg = theta_grid(&family);
        for theta in tg.points() {
            let (opt, greedy) = dp_optimize(&mdp, &family, &theta, &grid).unwrap();
            let eval = dp_evaluate(&mdp, &greedy, &family, &theta, &grid).unwrap();
            worst = worst.max(opt.max_abs_diff(&eval));
        }
    }
    outcome(worst <= 1e-12, format!("max node gap {worst:.3e} over every θ on the grid"))
}

fn lipschitz_ledger() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1ed9);
    let mut excess = f64::NEG_INFINITY;
    let mut uniform_ratio: f64 = 0.0;
    let h = 0.1;
    for (mdp, family) in suite() {
        let horizon = mdp.horizon();
        let l_c = family.l_c();
        let grid = lattice(&mdp);
        let uniform = XGrid::for_mdp(XMode::Uniform { h }, &mdp).unwrap();
        let theta = [rng.gen_range(0.0..=mdp.cost_bound())];
        let (opt, _) = dp_optimize(&mdp, &family, &theta, &grid).unwrap();
        excess = excess.max(opt.lipschitz_excess(&grid, |t| opt_modulus(horizon, t, l_c)));
        // x-independent policies are Lipschitz with constant 0
        let flat = random_policy(&mdp, &grid, &mut rng);
        let flat = AugPolicy::from_fn(&mdp, &grid, |t, s, _| flat.decision(t, s, 0).clone());
        let eval = dp_evaluate(&mdp, &flat, &family, &theta, &grid).unwrap();
        excess = excess.max(eval.lipschitz_excess(&grid, |t| eval_modulus(horizon, t, l_c, 0.0)));
        let (approx, _) = dp_optimize(&mdp, &family, &theta, &uniform).unwrap();
        let bound = horizon.max(1) as f64 * opt_modulus(horizon, 0, l_c) * h;
        for s in 0..mdp.n_states(0) {
            let gap = (approx.at(&uniform, 0, s, 0.0) - opt.at(&grid, 0, s, 0.0)).abs();
            uniform_ratio = uniform_ratio.max(gap / bound);
        }
    }
    outcome(
        excess <= 1e-9 && uniform_ratio <= 1.0,
        format!(
            "worst modulus excess {excess:.3e}; worst Uniform(h = {h}) gap is {:.3} of its bound",
            uniform_ratio
        ),
    )
}

fn sample_rate() -> Outcome {
    let start = Instant::now();
    let mdp = two_action();
    let grid = XGrid::for_mdp(XMode::Lattice { k: 5 }, &mdp).unwrap();
    let n_list: Vec<usize> = (6..=14).map(|k| 1usize << k).collect();
    let run = |alpha: f64| {
        let family = RiskFamily::cvar_default(alpha, mdp.cost_bound()).unwrap();
        let tg = theta_grid(&family);
        sweep_opt(&GenerativeModel::new(mdp.clone(), 2024), &family, &tg, &n_list, 32, 0, &grid).unwrap()
    };
    // At α = 0.5 the safe action stays optimal for every plausible sample, so every error is 0.
    let degenerate = run(0.5);
    let zero = degenerate.rows.iter().all(|r| r.error == 0.0);
    let r = run(0.9);
    let secs = start.elapsed().as_secs_f64();
    let pass = r.aborted.is_none() && r.slope.is_some_and(|s| (-0.65..=-0.35).contains(&s)) && secs < 300.0;
    let ci = r.slope_ci.map(|(a, b)| format!("[{a:.3}, {b:.3}]")).unwrap_or_else(|| "n/a".into());
    outcome(
        pass,
        format!(
            "α = 0.9: slope {} (95% CI {ci}); α = 0.5: all errors zero = {zero}, slope {}; {secs:.2} s",
            r.slope.map(|s| format!("{s:.3}")).unwrap_or_else(|| "undefined".into()),
            degenerate.slope.map(|s| format!("{s:.3}")).unwrap_or_else(|| "undefined".into()),
        ),
    )
}

fn truncation() -> Outcome {
    let inf = three_state_discounted();
    let family = RiskFamily::cvar_default(0.5, inf.cost_bound()).unwrap();
    let tg = theta_grid(&family);
    let mode = XMode::Uniform { h: 0.05 };
    let gamma = inf.gamma();
    let mut lines = Vec::new();
    let mut pass = true;
    for t in [20usize, 40, 60] {
        let a = truncated_risk(&inf, &family, &tg, 0, t, mode).unwrap().risk;
        let b = truncated_risk(&inf, &family, &tg, 0, t + 10, mode).unwrap().risk;
        let bound = family.l_c() * gamma.powi(t as i32 + 1) / (1.0 - gamma);
        pass &= (a - b).abs() <= bound;
        lines.push(format!("T={t}: {:.3e} ≤ {bound:.3e}", (a - b).abs()));
    }
    outcome(pass, lines.join("; "))
}

fn residuals() -> Outcome {
    let inf = dyadic_chain();
    let family = RiskFamily::cvar_default(0.5, 2.0).unwrap();
    let pi = StationaryPolicy::deterministic(&[0, 1], &inf).unwrap();
    let gamma = inf.gamma();
    let theta = 0.25;
    let window = (0.0, 1.0);
    let mut rows = Vec::new();
    for t in [5usize, 10] {
        let mode = XMode::Lattice { k: 1 << (t + 2) };
        let tv = truncated_values(&inf, &family, Some(&pi), t, &[vec![theta]], window, mode).unwrap();
        let eval = bellman_residual_eval(&inf, &pi, &family, &tv).unwrap();
        let to = truncated_values(&inf, &family, None, t, &[vec![theta]], window, mode).unwrap();
        let opt = bellman_residual_opt(&inf, &family, &to).unwrap();
        let tc = cvar_truncated_values(&inf, &pi, &family, theta, t, window, mode).unwrap();
        let cvar = cvar_operator_residual(&inf, &pi, &family, &tc).unwrap();
        rows.push((t, [eval, opt, cvar]));
    }
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, k) in [("eval", 0), ("opt", 1), ("cvar", 2)] {
        let (t0, r0) = (rows[0].0, rows[0].1[k]);
        let (t1, r1) = (rows[1].0, rows[1].1[k]);
        let b0 = residual_bound(family.l_c(), gamma, t0);
        let b1 = residual_bound(family.l_c(), gamma, t1);
        // five more stages should cut the residual by at least γ⁵
        let shrink = gamma.powi((t1 - t0) as i32);
        pass &= r0.max_abs <= b0 && r1.max_abs <= b1 && r1.max_abs <= shrink * r0.max_abs * (1.0 + 1e-9) + 1e-12;
        pass &= r0.extrapolated == 0 && r1.extrapolated == 0;
        detail.push(format!(
            "{name}: {:.2e} (T={t0}, bound {b0:.2e}) → {:.2e} (T={t1}, bound {b1:.2e}), ratio {:.4}",
            r0.max_abs,
            r1.max_abs,
            r1.max_abs / r0.max_abs
        ));
    }
    outcome(pass, detail.join("; "))
}

fn random_dist(rng: &mut ChaCha8Rng, max_atoms: usize, hi: f64) -> DiscreteDist {
    let n = rng.gen_range(1..=max_atoms);
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    DiscreteDist::new(w.iter().map(|p| (rng.gen_range(0.0..hi), p / total)).collect()).unwrap()
}

fn duality_sandwich() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xd0a1);
    let theta_box = ThetaBox::new(vec![LAMBDA_MIN, -5.0], vec![10.0, 5.0]).unwrap();
    let mut worst_gap: f64 = 0.0;
    let mut weak = true;
    let mut monotone = true;
    for i in 0..20 {
        let dist = random_dist(&mut rng, 3, 1.0);
        let tau = rng.gen_range(0.01..=1.0);
        let l = rng.gen_range(1.5..=4.0);
        let phi = if i % 2 == 0 { PhiSpec::chi_squared() } else { PhiSpec::kl() };
        let family = RiskFamily::phi_dual(phi.clone(), tau, l, theta_box.clone()).unwrap();
        let tg = ThetaGrid::uniform(family.theta_box(), 129).unwrap();
        let (dual, _) = risk_of_distribution(&family, &dist, &tg).unwrap();
        let (primal, _) = primal_phi_risk(&dist, &phi, tau, l).unwrap();
        weak &= dual >= primal - 1e-12;
        worst_gap = worst_gap.max(dual - primal);
        let mut prev = f64::NEG_INFINITY;
        for cap in [1.5, 2.0, 2.5, 3.0, 3.5, 4.0] {
            let (v, _) = primal_phi_risk(&dist, &phi, tau, cap).unwrap();
            monotone &= v >= prev - 1e-12;
            prev = v;
        }
    }
    outcome(
        weak && monotone && worst_gap <= 1e-3,
        format!("weak duality {weak}, max gap {worst_gap:.3e}, primal non-decreasing in L {monotone}"),
    )
}

fn cvar_cross_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0a7);
    let mut worst_ratio: f64 = 0.0;
    let mut worst_mean: f64 = 0.0;
    for _ in 0..100 {
        let dist = random_dist(&mut rng, 6, 3.0);
        let alpha = rng.gen_range(0.05..1.0);
        let family = RiskFamily::cvar_default(alpha, 3.0).unwrap();
        let tg = theta_grid(&family);
        let (dual, _) = risk_of_distribution(&family, &dist, &tg).unwrap();
        let tail = cvar_closed_form(&dist, alpha).unwrap();
        worst_ratio = worst_ratio.max((dual - tail).abs() / (2.0 * tg.step() * family.l_c()));
        let mean_family = RiskFamily::cvar_default(1.0, 3.0).unwrap();
        let (m, _) = risk_of_distribution(&mean_family, &dist, &tg).unwrap();
        worst_mean = worst_mean.max((m - dist.mean()).abs());
    }
    outcome(
        worst_ratio <= 1.0 && worst_mean <= 1e-12,
        format!("worst gap {worst_ratio:.3e} of 2·step·L_C; α = 1 vs mean {worst_mean:.3e}"),
    )
}

fn soc_embedding() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x50c);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let mdp = random_lattice_mdp(&mut rng, 3, 2, 3, K);
        let family = RiskFamily::cvar_default(ALPHAS[i % 3], mdp.cost_bound()).unwrap();
        let tg = theta_grid(&family);
        let problem = embed_mdp(&mdp).unwrap();
        let sgrid = SocGrid::new(&problem, 1.0, 1.0, XMode::Lattice { k: K }).unwrap();
        let grid = lattice(&mdp);
        for s0 in 0..mdp.n_states(0) {
            let a = optimal_risk(&mdp, &family, &tg, s0, &grid).unwrap().risk;
            let b = soc_optimal_risk(&problem, &family, &tg, &[s0 as f64], &sgrid).unwrap().risk;
            worst = worst.max((a - b).abs());
        }
    }
    let horizon = 2;
    let noise = vec![
        Scenario { xi: vec![-0.2], p: 1.0 / 3.0 },
        Scenario { xi: vec![0.0], p: 1.0 / 3.0 },
        Scenario { xi: vec![0.2], p: 1.0 / 3.0 },
    ];
    let problem = SocProblem {
        horizon,
        state_box: BoxDomain::new(vec![-1.0], vec![1.0]).unwrap(),
        action_box: BoxDomain::new(vec![-1.0], vec![1.0]).unwrap(),
        dynamics: Dynamics::Linear {
            a: vec![vec![0.8]],
            b: vec![vec![0.5]],
            clamp: true,
        },
        cost: SocCost::Quadratic {
            q_s: vec![0.5],
            q_a: vec![0.2],
        },
        noise: vec![noise; horizon],
        cost_scale: vec![1.0; horizon + 1],
        lipschitz: 1.1,
    };
    let family = RiskFamily::cvar_default(0.5, 3.0).unwrap();
    let tg = theta_grid(&family);
    let h = 0.1;
    let coarse = SocGrid::new(&problem, h, h, XMode::Uniform { h }).unwrap();
    let fine = SocGrid::new(&problem, h / 2.0, h / 2.0, XMode::Uniform { h: h / 2.0 }).unwrap();
    let (l_x, l_s) = soc_moduli(horizon, 0, family.l_c(), problem.lipschitz, None);
    let bound = (l_s * h + l_s * h + l_x * h) * horizon as f64;
    let mut delta: f64 = 0.0;
    for s0 in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        let a = soc_optimal_risk(&problem, &family, &tg, &[s0], &coarse).unwrap().risk;
        let b = soc_optimal_risk(&problem, &family, &tg, &[s0], &fine).unwrap().risk;
        delta = delta.max((a - b).abs());
    }
    outcome(
        worst <= 1e-9 && delta <= bound,
        format!("embedding gap {worst:.3e}; refinement delta {delta:.3e} ≤ bound {bound:.3e}"),
    )
}

fn scaling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ca1);
    let mut cvar_worst: f64 = 0.0;
    let mut phi_worst: f64 = 0.0;
    let theta_box = ThetaBox::new(vec![LAMBDA_MIN, -5.0], vec![10.0, 5.0]).unwrap();
    for i in 0..1000 {
        let gamma = rng.gen_range(0.05..=1.0);
        let x = rng.gen_range(-5.0..5.0);
        let alpha = rng.gen_range(0.05..=1.0);
        let cvar = RiskFamily::cvar(alpha, ThetaBox::new(vec![0.0], vec![5.0]).unwrap()).unwrap();
        let theta = [rng.gen_range(0.0..5.0)];
        cvar_worst = cvar_worst.max(check_scaling(&cvar, &theta, gamma, &[x]).unwrap());
        let phi = if i % 2 == 0 { PhiSpec::chi_squared() } else { PhiSpec::kl() };
        let family = RiskFamily::phi_dual(phi, rng.gen_range(0.01..1.0), rng.gen_range(1.5..4.0), theta_box.clone()).unwrap();
        let theta = [rng.gen_range(0.05..10.0), rng.gen_range(-5.0..5.0)];
        phi_worst = phi_worst.max(check_scaling(&family, &theta, gamma, &[x]).unwrap());
    }
    outcome(
        cvar_worst <= 1e-12 && phi_worst <= CONJUGATE_TOL,
        format!("CVaR residual {cvar_worst:.3e}; truncated φ residual {phi_worst:.3e} (tolerance {CONJUGATE_TOL:e})"),
    )
}

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let two = repo("problems/two_action.json");
    let runs: Vec<(&str, Vec<String>, Vec<&str>)> = vec![
        ("solve", vec![two.display().to_string()], vec!["out.json"]),
        ("oracle-check", vec![two.display().to_string()], vec!["out.json"]),
        (
            "sweep",
            vec![
                two.display().to_string(),
                "--alpha".into(),
                "0.9".into(),
                "--theta-grid".into(),
                "step:0.05".into(),
                "--n-list".into(),
                "2^6..2^10".into(),
                "--reps".into(),
                "8".into(),
                "--seed".into(),
                "7".into(),
            ],
            vec!["out.csv", "out.summary.json"],
        ),
        (
            "soc-solve",
            vec![repo("problems/linear_quadratic.json").display().to_string(), "--theta-grid".into(), "step:0.1".into()],
            vec!["out.json"],
        ),
        (
            "horizon-solve",
            vec![
                repo("problems/three_state_discounted.json").display().to_string(),
                "--eps-trunc".into(),
                "0.1".into(),
                "--theta-grid".into(),
                "step:0.1".into(),
            ],
            vec!["out.json"],
        ),
    ];
    let mut mismatched = Vec::new();
    for (cmd, args, files) in &runs {
        let mut outputs = Vec::new();
        for (rep, jobs) in ["1", "4", "4"].iter().enumerate() {
            let sub = dir.path().join(format!("{cmd}-{rep}"));
            std::fs::create_dir_all(&sub).unwrap();
            let status = Command::new(env!("CARGO_BIN_EXE_riskdp"))
                .arg("--jobs")
                .arg(jobs)
                .arg(cmd)
                .args(args)
                .arg("--out")
                .arg(sub.join(files[0]))
                .status()
                .unwrap();
            assert!(status.success(), "{cmd} failed");
            outputs.push(files.iter().map(|f| std::fs::read(sub.join(f)).unwrap()).collect::<Vec<_>>());
        }
        if outputs.windows(2).any(|w| w[0] != w[1]) {
            mismatched.push(*cmd);
        }
    }
    outcome(
        mismatched.is_empty(),
        format!("{} subcommands × 3 runs (1 and 4 workers); mismatches: {mismatched:?}", runs.len()),
    )
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("oracle equivalence", oracle_equivalence),
        ("telescoping identity", telescoping),
        ("greedy consistency", greedy_consistency),
        ("Lipschitz ledger", lipschitz_ledger),
        ("sample-complexity rate", sample_rate),
        ("infinite-horizon truncation", truncation),
        ("fixed-point residuals", residuals),
        ("φ-divergence duality sandwich", duality_sandwich),
        ("CVaR cross-check", cvar_cross_check),
        ("control-problem embedding and refinement", soc_embedding),
        ("scaling property", scaling),
        ("CLI determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {} {name}: {}",
            i + 1,
            if result.pass { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
