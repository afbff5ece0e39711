//! Lipschitz moduli of the augmented value functions in the accumulated cost.

/// Modulus of the optimal value `Ṽ_t^θ(s, ·)`: `2(T − t + 1)·L_C`.
pub fn opt_modulus(horizon: usize, t: usize, l_c: f64) -> f64 {
    2.0 * (horizon - t + 1) as f64 * l_c
}

/// Modulus of a policy value `Ṽ_t^{π,θ}(s, ·)` for a policy that is `L_pi`-Lipschitz in x:
/// `(2 + (T − t + 2)/2 · L_pi)(T − t + 1)·L_C`.
pub fn eval_modulus(horizon: usize, t: usize, l_c: f64, l_pi: f64) -> f64 {
    let remaining = (horizon - t + 1) as f64;
    (2.0 + (horizon - t + 2) as f64 / 2.0 * l_pi) * remaining * l_c
}
