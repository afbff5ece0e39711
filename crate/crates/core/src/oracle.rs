//! Brute-force ground truth for tiny instances.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::{AugPolicy, Decision, FiniteHorizonMdp, XGrid, XMode};
use crate::risk::{DiscreteDist, PhiSpec, RiskFamily, ThetaGrid};
use crate::search::golden_section_max;

/// Largest number of `(state, accumulated cost)` atoms in a front.
pub const ATOM_CAP: usize = 100_000;
/// Largest number of enumerated policies.
pub const POLICY_CAP: usize = 1_000_000;

/// Front of `(state, accumulated-cost numerator) → probability`; costs are `j / K` exactly.
type Front = BTreeMap<(usize, usize), f64>;

fn lattice_k(grid: &XGrid) -> Result<u32> {
    match grid.mode() {
        XMode::Lattice { k } if grid.stage(0).lo() == 0.0 => Ok(k),
        _ => Err(Error::Config(
            "exact propagation needs a lattice x grid anchored at 0".into(),
        )),
    }
}

/// Exact law of the total cost under an augmented-state policy.
///
/// Accumulated costs are carried as integer numerators over the lattice
/// denominator, so atoms merge without floating-point comparisons.
pub fn exact_total_cost_distribution(
    mdp: &FiniteHorizonMdp,
    policy: &AugPolicy,
    grid: &XGrid,
    s0: usize,
) -> Result<DiscreteDist> {
    let k = lattice_k(grid)?;
    grid.check_compatible(mdp)?;
    policy.validate(mdp, grid)?;
    if s0 >= mdp.n_states(0) {
        return Err(Error::Config(format!("initial state {s0} is out of range")));
    }
    let mut front: Front = BTreeMap::new();
    front.insert((s0, 0), 1.0);
    let mut totals: BTreeMap<usize, f64> = BTreeMap::new();
    for t in 0..=mdp.horizon() {
        let mut next: Front = BTreeMap::new();
        for (&(s, j), &p) in &front {
            for a in 0..mdp.n_actions(t) {
                let q = policy.decision(t, s, j).prob(a);
                if q == 0.0 {
                    continue;
                }
                let j2 = j + grid.cost_steps(t, s, a).expect("lattice grid");
                if t == mdp.horizon() {
                    *totals.entry(j2).or_insert(0.0) += p * q;
                } else {
                    for (s2, &w) in mdp.kernel_row(t, s, a).iter().enumerate() {
                        if w > 0.0 {
                            *next.entry((s2, j2)).or_insert(0.0) += p * q * w;
                        }
                    }
                }
            }
        }
        if next.len() > ATOM_CAP {
            return Err(Error::TooLarge(format!(
                "atom front at stage {} holds {} atoms",
                t + 1,
                next.len()
            )));
        }
        front = next;
    }
    DiscreteDist::new(
        totals
            .into_iter()
            .map(|(j, p)| (j as f64 / k as f64, p))
            .collect(),
    )
}

/// Outcome of exhaustive policy enumeration.
#[derive(Debug, Clone)]
pub struct OracleOptimum {
    pub risk: f64,
    pub theta_star: Vec<f64>,
    pub policy: AugPolicy,
    pub dist: DiscreteDist,
    pub policies_enumerated: usize,
}

struct Search<'a> {
    mdp: &'a FiniteHorizonMdp,
    grid: &'a XGrid,
    family: &'a RiskFamily,
    thetas: Vec<Vec<f64>>,
    k: f64,
    leaves: usize,
    best: Option<(f64, usize, Vec<(usize, usize, usize, usize)>, DiscreteDist)>,
}

impl Search<'_> {
    fn descend(&mut self, t: usize, front: &Front, choices: &mut Vec<(usize, usize, usize, usize)>) -> Result<()> {
        let horizon = self.mdp.horizon();
        if t == horizon {
            return self.leaf(front, choices);
        }
        let pairs: Vec<(usize, usize)> = front.keys().copied().collect();
        let na = self.mdp.n_actions(t);
        let mut digits = vec![0usize; pairs.len()];
        loop {
            let mut next: Front = BTreeMap::new();
            for (idx, &(s, j)) in pairs.iter().enumerate() {
                let a = digits[idx];
                let p = front[&(s, j)];
                let j2 = j + self.grid.cost_steps(t, s, a).expect("lattice grid");
                for (s2, &w) in self.mdp.kernel_row(t, s, a).iter().enumerate() {
                    if w > 0.0 {
                        *next.entry((s2, j2)).or_insert(0.0) += p * w;
                    }
                }
                choices.push((t, s, j, a));
            }
            if next.len() > ATOM_CAP {
                return Err(Error::TooLarge(format!("atom front at stage {} is too large", t + 1)));
            }
            self.descend(t + 1, &next, choices)?;
            choices.truncate(choices.len() - pairs.len());

            let mut pos = 0;
            loop {
                if pos == digits.len() {
                    return Ok(());
                }
                digits[pos] += 1;
                if digits[pos] < na {
                    break;
                }
                digits[pos] = 0;
                pos += 1;
            }
        }
    }

    fn leaf(&mut self, front: &Front, choices: &[(usize, usize, usize, usize)]) -> Result<()> {
        self.leaves += 1;
        if self.leaves > POLICY_CAP {
            return Err(Error::TooLarge(format!(
                "more than {POLICY_CAP} policies to enumerate"
            )));
        }
        let t = self.mdp.horizon();
        let mut totals: BTreeMap<usize, f64> = BTreeMap::new();
        for (&(s, j), &p) in front {
            let a = cheapest_action(self.mdp, t, s);
            let j2 = j + self.grid.cost_steps(t, s, a).expect("lattice grid");
            *totals.entry(j2).or_insert(0.0) += p;
        }
        let dist = DiscreteDist::new(totals.into_iter().map(|(j, p)| (j as f64 / self.k, p)).collect())?;
        let mut best_theta = (f64::INFINITY, 0);
        for (i, theta) in self.thetas.iter().enumerate() {
            let v = dist.expect(|z| self.family.eval_unchecked(theta, z));
            if v < best_theta.0 {
                best_theta = (v, i);
            }
        }
        let improves = match &self.best {
            None => true,
            Some((v, ..)) => best_theta.0 < *v,
        };
        if improves {
            self.best = Some((best_theta.0, best_theta.1, choices.to_vec(), dist));
        }
        Ok(())
    }
}

fn cheapest_action(mdp: &FiniteHorizonMdp, t: usize, s: usize) -> usize {
    let mut best = 0;
    for a in 1..mdp.n_actions(t) {
        if mdp.cost(t, s, a) < mdp.cost(t, s, best) {
            best = a;
        }
    }
    best
}

/// `min_θ min_π E[f_θ(total cost)]` by enumerating deterministic policies on
/// reachable `(state, accumulated cost)` pairs.
///
/// At the last stage the cheapest action is optimal for every θ because `f_θ`
/// is non-decreasing, so only stages `0..T` are enumerated.
pub fn oracle_optimal_risk(
    mdp: &FiniteHorizonMdp,
    family: &RiskFamily,
    theta_grid: &ThetaGrid,
    s0: usize,
    grid: &XGrid,
) -> Result<OracleOptimum> {
    let k = lattice_k(grid)?;
    grid.check_compatible(mdp)?;
    if theta_grid.dim() != family.theta_dim() {
        return Err(Error::Config("θ grid dimension does not match the family".into()));
    }
    if s0 >= mdp.n_states(0) {
        return Err(Error::Config(format!("initial state {s0} is out of range")));
    }
    let mut search = Search {
        mdp,
        grid,
        family,
        thetas: theta_grid.points(),
        k: k as f64,
        leaves: 0,
        best: None,
    };
    let mut front: Front = BTreeMap::new();
    front.insert((s0, 0), 1.0);
    search.descend(0, &front, &mut Vec::new())?;
    let (risk, theta_index, choices, dist) = search.best.expect("at least one policy");

    let horizon = mdp.horizon();
    let mut policy = AugPolicy::from_fn(mdp, grid, |t, s, _| {
        Decision::Action(if t == horizon { cheapest_action(mdp, t, s) } else { 0 })
    });
    for (t, s, j, a) in choices {
        policy.stages[t][s][j] = Decision::Action(a);
    }
    Ok(OracleOptimum {
        risk,
        theta_star: search.thetas[theta_index].clone(),
        policy,
        dist,
        policies_enumerated: search.leaves,
    })
}

/// CVaR at level α by averaging the upper α-tail of the sorted atoms
/// (the atom straddling the tail boundary is weighted fractionally).
pub fn cvar_closed_form(dist: &DiscreteDist, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(format!("CVaR level {alpha} must lie in (0, 1]")));
    }
    if dist.is_empty() {
        return Err(Error::Input("empty distribution".into()));
    }
    let mut atoms = dist.atoms().to_vec();
    atoms.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut remaining = alpha;
    let mut acc = 0.0;
    for (v, p) in atoms {
        if remaining <= 0.0 {
            break;
        }
        let take = p.min(remaining);
        acc += v * take;
        remaining -= take;
    }
    Ok(acc / alpha)
}

const FEAS_TOL: f64 = 1e-12;
const BISECT_ITERS: usize = 200;

/// Largest number of atoms accepted by [`primal_phi_risk`].
pub const PRIMAL_MAX_ATOMS: usize = 6;

/// Worst-case expectation `sup E[X ζ]` over densities with `E[ζ] = 1`,
/// `E[φ(ζ)] ≤ τ` and `0 ≤ ζ ≤ L`.
///
/// Up to three atoms the problem is solved by nested one-dimensional searches:
/// with two atoms the objective is linear along the mass constraint, so the
/// optimum sits at an end of the feasible interval (found by bisection on the
/// convex divergence); a third atom adds an outer golden section over its
/// density, whose optimal-value profile is concave. Four to six atoms use
/// block-coordinate ascent over triples of atoms from 16 feasible starts.
///
/// The returned density is feasible up to `1e-12` in the divergence budget, so
/// the value is a lower bound on the robust risk.
pub fn primal_phi_risk(dist: &DiscreteDist, phi: &PhiSpec, tau: f64, l: f64) -> Result<(f64, Vec<f64>)> {
    if !(tau >= 0.0) {
        return Err(Error::Config(format!("divergence budget {tau} is negative")));
    }
    if !(l > 0.0) {
        return Err(Error::Config(format!("truncation level {l} must be positive")));
    }
    if dist.len() > PRIMAL_MAX_ATOMS {
        return Err(Error::Config(format!(
            "primal solver handles at most {PRIMAL_MAX_ATOMS} atoms, got {}",
            dist.len()
        )));
    }
    let support: Vec<usize> = (0..dist.len()).filter(|&i| dist.atoms()[i].1 > 0.0).collect();
    let p: Vec<f64> = support.iter().map(|&i| dist.atoms()[i].1).collect();
    let x: Vec<f64> = support.iter().map(|&i| dist.atoms()[i].0).collect();
    let mass: f64 = p.iter().sum();
    let solver = Block { phi, l };

    let zeta_support = if p.len() <= 3 {
        solver
            .solve(&p, &x, mass, tau)
            .map(|(_, z)| z)
            .unwrap_or_else(|| vec![1.0; p.len()])
    } else {
        solver.multistart(&p, &x, tau)
    };
    let mut zeta = vec![1.0; dist.len()];
    for (k, &i) in support.iter().enumerate() {
        zeta[i] = zeta_support[k];
    }
    let value = dist
        .atoms()
        .iter()
        .zip(&zeta)
        .map(|(&(v, q), z)| v * q * z)
        .sum();
    Ok((value, zeta))
}

struct Block<'a> {
    phi: &'a PhiSpec,
    l: f64,
}

impl Block<'_> {
    fn divergence(&self, p: &[f64], z: &[f64]) -> f64 {
        p.iter().zip(z).map(|(q, w)| q * self.phi.eval(*w)).sum()
    }

    /// Maximize `Σ p_i x_i ζ_i` s.t. `Σ p_i ζ_i = m`, `Σ p_i φ(ζ_i) ≤ b`, `0 ≤ ζ ≤ L`.
    fn solve(&self, p: &[f64], x: &[f64], m: f64, b: f64) -> Option<(f64, Vec<f64>)> {
        match p.len() {
            1 => {
                let z = m / p[0];
                (z >= -FEAS_TOL && z <= self.l + FEAS_TOL && p[0] * self.phi.eval(z.max(0.0)) <= b + FEAS_TOL)
                    .then(|| (p[0] * x[0] * z, vec![z.max(0.0)]))
            }
            2 => self.solve_pair(p, x, m, b),
            3 => self.solve_triple(p, x, m, b),
            _ => None,
        }
    }

    fn solve_pair(&self, p: &[f64], x: &[f64], m: f64, b: f64) -> Option<(f64, Vec<f64>)> {
        let total = p[0] + p[1];
        let c = m / total;
        if c < -FEAS_TOL || c > self.l + FEAS_TOL || total * self.phi.eval(c.max(0.0)) > b + FEAS_TOL {
            return None;
        }
        let c = c.clamp(0.0, self.l);
        let second = |z0: f64| ((m - p[0] * z0) / p[1]).clamp(0.0, self.l);
        let g = |z0: f64| p[0] * self.phi.eval(z0) + p[1] * self.phi.eval(second(z0));
        let lo = ((m - p[1] * self.l) / p[0]).max(0.0).min(c);
        let hi = (m / p[0]).min(self.l).max(c);
        let z0 = if x[0] > x[1] {
            edge(&g, c, hi, b)
        } else if x[0] < x[1] {
            edge(&g, c, lo, b)
        } else {
            c
        };
        let z = vec![z0, second(z0)];
        Some((p[0] * x[0] * z[0] + p[1] * x[1] * z[1], z))
    }

    fn solve_triple(&self, p: &[f64], x: &[f64], m: f64, b: f64) -> Option<(f64, Vec<f64>)> {
        let rest = p[1] + p[2];
        let c = m / (p[0] + rest);
        let pooled = |z0: f64| ((m - p[0] * z0) / rest).clamp(0.0, self.l);
        let h = |z0: f64| p[0] * self.phi.eval(z0) + rest * self.phi.eval(pooled(z0));
        if c < -FEAS_TOL || c > self.l + FEAS_TOL || h(c.clamp(0.0, self.l)) > b + FEAS_TOL {
            return None;
        }
        let c = c.clamp(0.0, self.l);
        let lo = edge(&h, c, ((m - rest * self.l) / p[0]).max(0.0).min(c), b);
        let hi = edge(&h, c, (m / p[0]).min(self.l).max(c), b);
        let inner = |z0: f64| {
            self.solve_pair(&p[1..], &x[1..], m - p[0] * z0, b - p[0] * self.phi.eval(z0))
                .map(|(v, _)| p[0] * x[0] * z0 + v)
                .unwrap_or(f64::NEG_INFINITY)
        };
        let (mut z0, best) = golden_section_max(inner, lo, hi, 1e-15, 300);
        if inner(c) > best {
            z0 = c;
        }
        let (v, rest_z) = self.solve_pair(&p[1..], &x[1..], m - p[0] * z0, b - p[0] * self.phi.eval(z0))?;
        Some((p[0] * x[0] * z0 + v, vec![z0, rest_z[0], rest_z[1]]))
    }

    fn multistart(&self, p: &[f64], x: &[f64], tau: f64) -> Vec<f64> {
        let n = p.len();
        let center = vec![1.0; n];
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let objective = |z: &[f64]| p.iter().zip(x).zip(z).map(|((q, v), w)| q * v * w).sum::<f64>();
        let mut best = center.clone();
        let mut best_value = objective(&best);
        for start in 0..16 {
            let mut z = if start == 0 {
                center.clone()
            } else {
                self.random_feasible(&mut rng, p, tau)
            };
            for _ in 0..200 {
                let before = objective(&z);
                for i in 0..n {
                    for j in i + 1..n {
                        for k in j + 1..n {
                            let idx = [i, j, k];
                            let bp: Vec<f64> = idx.iter().map(|&q| p[q]).collect();
                            let bx: Vec<f64> = idx.iter().map(|&q| x[q]).collect();
                            let m: f64 = idx.iter().map(|&q| p[q] * z[q]).sum();
                            let used: f64 = (0..n)
                                .filter(|q| !idx.contains(q))
                                .map(|q| p[q] * self.phi.eval(z[q]))
                                .sum();
                            let current: f64 = idx.iter().map(|&q| p[q] * x[q] * z[q]).sum();
                            if let Some((v, bz)) = self.solve(&bp, &bx, m, tau - used) {
                                if v > current + 1e-15 {
                                    for (slot, &q) in idx.iter().enumerate() {
                                        z[q] = bz[slot];
                                    }
                                }
                            }
                        }
                    }
                }
                if objective(&z) <= before + 1e-15 {
                    break;
                }
            }
            let v = objective(&z);
            if v > best_value && self.divergence(p, &z) <= tau + 1e-9 {
                best_value = v;
                best = z;
            }
        }
        best
    }

    /// A random density on the segment from `ζ ≡ 1` toward a random direction,
    /// retracted into the feasible set.
    fn random_feasible(&self, rng: &mut ChaCha8Rng, p: &[f64], tau: f64) -> Vec<f64> {
        let n = p.len();
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let shift: f64 = raw.iter().zip(p).map(|(r, q)| r * q).sum::<f64>() / p.iter().sum::<f64>();
        let d: Vec<f64> = raw.iter().map(|r| r - shift).collect();
        let point = |s: f64| -> Vec<f64> { d.iter().map(|di| 1.0 + s * di).collect() };
        let feasible = |s: f64| {
            let z = point(s);
            z.iter().all(|&w| (0.0..=self.l).contains(&w)) && self.divergence(p, &z) <= tau
        };
        let mut hi = 1.0;
        while feasible(hi) && hi < 1e6 {
            hi *= 2.0;
        }
        let reach = crate::search::bisect_feasible(|u| feasible(u * hi), 100) * hi;
        point(reach * rng.gen_range(0.0..1.0))
    }
}

/// Point farthest from `from` toward `to` with `g ≤ b`, assuming `g(from) ≤ b` and `g` convex.
fn edge<G: Fn(f64) -> f64>(g: &G, from: f64, to: f64, b: f64) -> f64 {
    if g(to) <= b {
        return to;
    }
    let (mut ok, mut bad) = (from, to);
    for _ in 0..BISECT_ITERS {
        let mid = 0.5 * (ok + bad);
        if mid == ok || mid == bad {
            break;
        }
        if g(mid) <= b {
            ok = mid;
        } else {
            bad = mid;
        }
    }
    ok
}
