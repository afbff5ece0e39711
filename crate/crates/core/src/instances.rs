//! Small reference instances shared by tests, the acceptance suite, and the CLI.

use rand::Rng;

use crate::horizon::InfiniteMdp;
use crate::mdp::FiniteHorizonMdp;

/// Two stages, states `[s, g, b]`, actions `[a, a']`.
///
/// From `s`, action `a` costs 0 and moves to `g` or `b` with probability ½ each;
/// `a'` costs 0.6 and moves to `g`. At the last stage `b` costs 1 and everything
/// else costs 0. `g` and `b` are absorbing at stage 0.
pub fn two_action() -> FiniteHorizonMdp {
    two_action_with(0.5)
}

/// The two-action instance with `P(b | s, a) = q`.
pub fn two_action_with(q: f64) -> FiniteHorizonMdp {
    let kernels = vec![vec![
        vec![vec![0.0, 1.0 - q, q], vec![0.0, 1.0, 0.0]],
        vec![vec![0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0]],
        vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]],
    ]];
    let costs = vec![
        vec![vec![0.0, 0.6], vec![0.0, 0.0], vec![0.0, 0.0]],
        vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0]],
    ];
    FiniteHorizonMdp::new(kernels, costs).expect("two-action instance is valid")
}

pub const TWO_ACTION_STATES: [&str; 3] = ["s", "g", "b"];
pub const TWO_ACTION_ACTIONS: [&str; 2] = ["a", "a'"];

/// Random instance with `|S| ≤ max_states`, `|A| ≤ max_actions`, `T ≤ max_horizon`
/// and costs on the `1/k` lattice of `[0, 1]`.
pub fn random_lattice_mdp<R: Rng>(
    rng: &mut R,
    max_states: usize,
    max_actions: usize,
    max_horizon: usize,
    k: u32,
) -> FiniteHorizonMdp {
    let horizon = rng.gen_range(1..=max_horizon);
    let ns = rng.gen_range(1..=max_states);
    let na = rng.gen_range(1..=max_actions);
    let kernels = (0..horizon)
        .map(|_| {
            (0..ns)
                .map(|_| (0..na).map(|_| random_row(rng, ns)).collect())
                .collect()
        })
        .collect();
    let costs = (0..=horizon)
        .map(|_| {
            (0..ns)
                .map(|_| {
                    (0..na)
                        .map(|_| rng.gen_range(0..=k) as f64 / k as f64)
                        .collect()
                })
                .collect()
        })
        .collect();
    FiniteHorizonMdp::new(kernels, costs).expect("random instance is valid")
}

fn random_row<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let w: Vec<u32> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let total: u32 = w.iter().sum();
        if total > 0 {
            return w.iter().map(|&v| v as f64 / total as f64).collect();
        }
    }
}

/// Three states, two actions, discount 0.9.
pub fn three_state_discounted() -> InfiniteMdp {
    let kernel = vec![
        vec![vec![0.6, 0.3, 0.1], vec![0.1, 0.1, 0.8]],
        vec![vec![0.2, 0.5, 0.3], vec![0.7, 0.2, 0.1]],
        vec![vec![0.3, 0.3, 0.4], vec![0.5, 0.0, 0.5]],
    ];
    let cost = vec![vec![0.2, 0.5], vec![0.9, 0.4], vec![0.0, 1.0]];
    InfiniteMdp::new(kernel, cost, 0.9).expect("three-state instance is valid")
}

/// Two states, two actions, discount ½, costs in `{0, ½, 1}` so that every
/// discounted partial sum is dyadic.
pub fn dyadic_chain() -> InfiniteMdp {
    let kernel = vec![
        vec![vec![0.5, 0.5], vec![0.25, 0.75]],
        vec![vec![0.75, 0.25], vec![0.5, 0.5]],
    ];
    let cost = vec![vec![0.5, 0.0], vec![1.0, 0.5]];
    InfiniteMdp::new(kernel, cost, 0.5).expect("dyadic chain is valid")
}
