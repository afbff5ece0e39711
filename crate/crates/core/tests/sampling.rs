use riskdp::instances::{two_action, two_action_with};
use riskdp::mdp::{AugPolicy, XGrid, XMode};
use riskdp::risk::{RiskFamily, ThetaGrid};
use riskdp::sampling::{
    build_empirical_mdp, sample_size_eval, sample_size_infinite, sample_size_soc, sweep_eval, sweep_opt,
    GenerativeModel, SizeParams, SocSizeParams,
};

fn setup(alpha: f64) -> (RiskFamily, ThetaGrid, XGrid) {
    let m = two_action();
    let family = RiskFamily::cvar_default(alpha, m.cost_bound()).unwrap();
    let tg = ThetaGrid::with_step(family.theta_box(), 0.05).unwrap();
    let grid = XGrid::for_mdp(XMode::Lattice { k: 5 }, &m).unwrap();
    (family, tg, grid)
}

#[test]
fn deterministic_model_has_zero_error_and_no_slope() {
    let m = two_action_with(0.0);
    assert!(m.is_deterministic());
    let (family, tg, grid) = setup(0.5);
    let r = sweep_opt(&GenerativeModel::new(m, 3), &family, &tg, &[4, 8, 16], 3, 0, &grid).unwrap();
    assert!(r.rows.iter().all(|row| row.error == 0.0));
    assert_eq!(r.slope, None);
    assert!(r.aborted.is_none());
}

#[test]
fn single_replicate_single_size() {
    let (family, tg, grid) = setup(0.5);
    let r = sweep_opt(&GenerativeModel::new(two_action(), 1), &family, &tg, &[32], 1, 0, &grid).unwrap();
    assert_eq!(r.rows.len(), 1);
    assert!(r.rows[0].error >= 0.0);
}

#[test]
fn sweeps_are_reproducible() {
    let (family, tg, grid) = setup(0.9);
    let model = GenerativeModel::new(two_action(), 42);
    let a = sweep_opt(&model, &family, &tg, &[16, 64], 4, 0, &grid).unwrap();
    let b = sweep_opt(&model, &family, &tg, &[16, 64], 4, 0, &grid).unwrap();
    let strip = |r: &riskdp::sampling::SweepResult| r.rows.iter().map(|x| (x.n, x.rep, x.error.to_bits())).collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(a.medians, b.medians);
}

#[test]
fn sizes_must_increase() {
    let (family, tg, grid) = setup(0.5);
    let model = GenerativeModel::new(two_action(), 1);
    assert!(sweep_opt(&model, &family, &tg, &[8, 8], 1, 0, &grid).unwrap_err().is_config());
    assert!(sweep_opt(&model, &family, &tg, &[8], 0, 0, &grid).unwrap_err().is_config());
}

#[test]
fn half_half_row_concentrates() {
    // Hoeffding: P(|p̂ − ½| > 0.02) ≤ 2 exp(−2 n 0.02²) ≈ 4e-6 at n = 2^14.
    let bound = 2.0 * (-2.0 * 16384.0 * 0.02f64.powi(2)).exp();
    assert!(bound < 0.01);
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let e = build_empirical_mdp(&GenerativeModel::new(two_action(), seed), 1 << 14).unwrap();
        worst = worst.max((e.kernel_row(0, 0, 0)[1] - 0.5).abs());
    }
    assert!(worst <= 0.02, "{worst}");
}

#[test]
fn errors_shrink_from_small_to_large_samples() {
    let (family, tg, grid) = setup(0.9);
    let r = sweep_opt(&GenerativeModel::new(two_action(), 5), &family, &tg, &[64, 16384], 16, 0, &grid).unwrap();
    assert!(r.medians[1].1 < r.medians[0].1);
}

#[test]
fn eval_sweep_failures_stay_below_confidence_level() {
    // At the proof-calibrated size the plug-in risk of a fixed policy is ε-accurate
    // in every replicate; the bound is loose, so a small ε is still affordable.
    let m = two_action();
    let (family, tg, grid) = setup(0.5);
    let policy = AugPolicy::constant(&m, &grid, 0);
    let p = SizeParams {
        horizon: 1,
        l_c: family.l_c(),
        l_theta: family.l_theta(),
        theta_dim: 1,
        n_states: 3,
        n_actions: 2,
        r_theta: family.r_theta(),
    };
    let (eps, delta) = (0.5, 0.05);
    let n = sample_size_eval(&p, 0.0, eps, delta).unwrap() as usize;
    let r = sweep_eval(&GenerativeModel::new(m, 11), &policy, &family, &tg, &[n], 200, 0, &grid).unwrap();
    let failures = r.rows.iter().filter(|row| row.error > eps).count();
    assert!(failures as f64 / 200.0 <= delta);
}

#[test]
fn hand_evaluated_control_size() {
    // Optimal moduli for T = 1, L_C = 1, L = 1: L_X^0 = 4, L_S^0 = 4.
    let p = SocSizeParams {
        horizon: 1,
        l_c: 1.0,
        l_theta: 1.0,
        lipschitz: 1.0,
        l_pi: None,
        theta_dim: 1,
        state_dim: 1,
        action_dim: 1,
        r_state: 1.0,
        r_action: 1.0,
        r_theta: 1.0,
    };
    let eps: f64 = 0.1;
    let delta: f64 = 0.1;
    let e_s = eps / 64.0;
    let e_x = eps / 64.0;
    let e_t = eps / 16.0;
    let arg = 2.0 * (3.0 / e_s) * (3.0 / e_s) * (1.0 / e_x) * (3.0 / e_t) / delta;
    let oracle = (8.0 / (eps * eps) * arg.ln()).ceil() as u64;
    assert_eq!(sample_size_soc(&p, eps, delta).unwrap(), oracle);
    assert!(sample_size_soc(&p, eps * 2.0, delta).unwrap() <= oracle);
    assert!(sample_size_soc(&SocSizeParams { horizon: 2, ..p }, eps, delta).unwrap() >= oracle);
}

#[test]
fn infinite_size_grows_with_discount() {
    let p = SizeParams {
        horizon: 1,
        l_c: 1.0,
        l_theta: 1.0,
        theta_dim: 1,
        n_states: 3,
        n_actions: 2,
        r_theta: 10.0,
    };
    let (t1, n1) = sample_size_infinite(0.5, &p, 0.1, 0.05).unwrap();
    let (t2, n2) = sample_size_infinite(0.9, &p, 0.1, 0.05).unwrap();
    assert!(t2 > t1 && n2 > n1);
    // L_C γ^T/(1 − γ) ≤ ε/2 first holds at T = 6 for γ = ½.
    assert_eq!(t1, 6);
}
