use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use riskdp::instances::random_lattice_mdp;
use riskdp::mdp::{
    dp_evaluate, dp_optimize, eval_modulus, opt_modulus, AugPolicy, Decision, XGrid, XMode,
};
use riskdp::oracle::{cvar_closed_form, exact_total_cost_distribution};
use riskdp::risk::{check_scaling, risk_of_distribution, DiscreteDist, RiskFamily, ThetaGrid};
use riskdp::sampling::{build_empirical_mdp, sample_size_eval, sample_size_opt, GenerativeModel, SizeParams};

const K: u32 = 4;

fn instance(seed: u64) -> riskdp::mdp::FiniteHorizonMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_lattice_mdp(&mut rng, 3, 2, 3, K)
}

fn random_policy(mdp: &riskdp::mdp::FiniteHorizonMdp, grid: &XGrid, seed: u64) -> AugPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AugPolicy::from_fn(mdp, grid, |t, _s, _j| Decision::Action(rng.gen_range(0..mdp.n_actions(t))))
}

fn alpha_strategy() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.25), Just(0.5), Just(1.0), 0.05f64..1.0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn telescoping_matches_exact_distribution(seed in any::<u64>(), pseed in any::<u64>(), alpha in alpha_strategy(), u in 0.0f64..1.0) {
        let mdp = instance(seed);
        let grid = XGrid::for_mdp(XMode::Lattice { k: K }, &mdp).unwrap();
        let family = RiskFamily::cvar_default(alpha, mdp.cost_bound()).unwrap();
        let theta = [u * mdp.cost_bound()];
        let policy = random_policy(&mdp, &grid, pseed);
        let table = dp_evaluate(&mdp, &policy, &family, &theta, &grid).unwrap();
        for s0 in 0..mdp.n_states(0) {
            let dist = exact_total_cost_distribution(&mdp, &policy, &grid, s0).unwrap();
            let direct = dist.expect(|z| family.eval(&theta, z).unwrap());
            let augmented = table.at(&grid, 0, s0, 0.0) + family.eval(&theta, 0.0).unwrap();
            prop_assert!((direct - augmented).abs() <= 1e-12, "{} vs {}", direct, augmented);
        }
    }

    #[test]
    fn greedy_policy_reproduces_optimal_values(seed in any::<u64>(), alpha in alpha_strategy(), u in 0.0f64..1.0) {
        let mdp = instance(seed);
        let grid = XGrid::for_mdp(XMode::Lattice { k: K }, &mdp).unwrap();
        let family = RiskFamily::cvar_default(alpha, mdp.cost_bound()).unwrap();
        let theta = [u * mdp.cost_bound()];
        let (opt, greedy) = dp_optimize(&mdp, &family, &theta, &grid).unwrap();
        let eval = dp_evaluate(&mdp, &greedy, &family, &theta, &grid).unwrap();
        prop_assert!(opt.max_abs_diff(&eval) <= 1e-12);
    }

    #[test]
    fn optimal_values_dominate_any_policy(seed in any::<u64>(), pseed in any::<u64>(), u in 0.0f64..1.0) {
        let mdp = instance(seed);
        let grid = XGrid::for_mdp(XMode::Lattice { k: K }, &mdp).unwrap();
        let family = RiskFamily::cvar_default(0.5, mdp.cost_bound()).unwrap();
        let theta = [u * mdp.cost_bound()];
        let (opt, _) = dp_optimize(&mdp, &family, &theta, &grid).unwrap();
        let eval = dp_evaluate(&mdp, &random_policy(&mdp, &grid, pseed), &family, &theta, &grid).unwrap();
        for (a, b) in opt.stages.iter().flatten().flatten().zip(eval.stages.iter().flatten().flatten()) {
            prop_assert!(*a <= *b + 1e-12);
        }
    }

    #[test]
    fn value_bounds_and_moduli(seed in any::<u64>(), pseed in any::<u64>(), alpha in alpha_strategy(), u in 0.0f64..1.0) {
        let mdp = instance(seed);
        let horizon = mdp.horizon();
        let grid = XGrid::for_mdp(XMode::Lattice { k: K }, &mdp).unwrap();
        let family = RiskFamily::cvar_default(alpha, mdp.cost_bound()).unwrap();
        let l_c = family.l_c();
        let theta = [u * mdp.cost_bound()];
        let (opt, _) = dp_optimize(&mdp, &family, &theta, &grid).unwrap();
        for (t, stage) in opt.stages.iter().enumerate() {
            let bound = (horizon - t + 1) as f64 * l_c;
            prop_assert!(stage.iter().flatten().all(|v| v.abs() <= bound + 1e-12));
        }
        prop_assert!(opt.lipschitz_excess(&grid, |t| opt_modulus(horizon, t, l_c)) <= 1e-9);
        // Policies that ignore x have modulus 0.
        let policy = random_policy(&mdp, &grid, pseed);
        let flat = AugPolicy::from_fn(&mdp, &grid, |t, s, _| policy.decision(t, s, 0).clone());
        let eval = dp_evaluate(&mdp, &flat, &family, &theta, &grid).unwrap();
        prop_assert!(eval.lipschitz_excess(&grid, |t| eval_modulus(horizon, t, l_c, 0.0)) <= 1e-9);
    }

    #[test]
    fn cvar_dual_matches_sorted_tail(atoms in prop::collection::vec((0.0f64..3.0, 0.01f64..1.0), 1..6), alpha in alpha_strategy()) {
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        let dist = DiscreteDist::new(atoms.iter().map(|&(v, p)| (v, p / total)).collect()).unwrap();
        let family = RiskFamily::cvar_default(alpha, 3.0).unwrap();
        let grid = ThetaGrid::with_step(family.theta_box(), 0.05).unwrap();
        let (dual, _) = risk_of_distribution(&family, &dist, &grid).unwrap();
        let tail = cvar_closed_form(&dist, alpha).unwrap();
        prop_assert!((dual - tail).abs() <= 2.0 * 0.05 * family.l_c(), "{} vs {}", dual, tail);
        prop_assert!(dual >= tail - 1e-9);
    }

    #[test]
    fn cvar_scaling_is_exact(alpha in 0.05f64..=1.0, theta in 0.0f64..2.0, gamma in 0.05f64..=1.0, x in -5.0f64..5.0) {
        let family = RiskFamily::cvar(alpha, riskdp::risk::ThetaBox::new(vec![0.0], vec![2.0]).unwrap()).unwrap();
        prop_assert!(check_scaling(&family, &[theta], gamma, &[x]).unwrap() <= 1e-12);
    }

    #[test]
    fn empirical_rows_are_frequencies(seed in any::<u64>(), mseed in any::<u64>(), n in 1usize..200) {
        let mdp = instance(seed);
        let emp = build_empirical_mdp(&GenerativeModel::new(mdp.clone(), mseed), n).unwrap();
        prop_assert_eq!(emp.costs(), mdp.costs());
        for (row, truth) in emp.kernels().iter().flatten().flatten().zip(mdp.kernels().iter().flatten().flatten()) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for (p, q) in row.iter().zip(truth) {
                let count = p * n as f64;
                prop_assert!((count - count.round()).abs() < 1e-9);
                if *q == 0.0 {
                    prop_assert_eq!(*p, 0.0);
                }
            }
        }
    }

    #[test]
    fn sample_sizes_are_monotone(t in 1usize..6, l_c in 0.5f64..4.0, d in 1usize..3, eps in 0.01f64..0.5, delta in 0.01f64..0.5) {
        let p = SizeParams { horizon: t, l_c, l_theta: l_c, theta_dim: d, n_states: 3, n_actions: 2, r_theta: 2.0 };
        let base = sample_size_eval(&p, 0.0, eps, delta).unwrap();
        prop_assert!(sample_size_eval(&p, 0.0, eps * 1.5, delta).unwrap() <= base);
        prop_assert!(sample_size_eval(&p, 0.0, eps, delta * 1.5).unwrap() <= base);
        let longer = SizeParams { horizon: t + 1, ..p };
        let steeper = SizeParams { l_c: l_c * 1.5, ..p };
        let wider = SizeParams { theta_dim: d + 1, ..p };
        prop_assert!(sample_size_eval(&longer, 0.0, eps, delta).unwrap() >= base);
        prop_assert!(sample_size_eval(&steeper, 0.0, eps, delta).unwrap() >= base);
        prop_assert!(sample_size_eval(&wider, 0.0, eps, delta).unwrap() >= base);
        prop_assert!(sample_size_opt(&p, eps, delta).unwrap() >= 1);
    }
}
