//! Exact, interpolation-free oracles on finite MDPs.
//!
//! A [`FiniteMdp`] has finitely many states, controls and disturbance atoms,
//! and a finite set of running-maximum values closed under `z' = max{z, c}`.
//! On such a model the operators of value iteration can be applied exactly,
//! which gives ground truth for the grid solver, the policy layer, and the
//! Monte Carlo estimator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridAxis;
use crate::model::{Atom, DiscreteDistribution, FnSystem, MdpModel, PROB_SUM_TOL};
use crate::risk::weighted_cvar;

/// Finite controlled chain `x' = next[x][u][w]` with `P(w) = probs[w]`.
///
/// Value tables are indexed `x * nz + iz` where `iz` indexes [`Self::z_values`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteMdp {
    costs: Vec<Vec<f64>>,
    next: Vec<Vec<Vec<usize>>>,
    probs: Vec<f64>,
    z_values: Vec<f64>,
    /// `next_z[(iz * n + x) * m + u]` indexes `max{z_iz, c(x, u)}`.
    next_z: Vec<usize>,
}

impl FiniteMdp {
    /// Uses `{0} ∪ range(c)` as the running-maximum set.
    pub fn new(costs: Vec<Vec<f64>>, next: Vec<Vec<Vec<usize>>>, probs: Vec<f64>) -> Result<Self> {
        let mut z: Vec<f64> = std::iter::once(0.0).chain(costs.iter().flatten().copied()).collect();
        z.sort_by(f64::total_cmp);
        z.dedup();
        Self::with_z_values(costs, next, probs, z)
    }

    pub fn with_z_values(
        costs: Vec<Vec<f64>>,
        next: Vec<Vec<Vec<usize>>>,
        probs: Vec<f64>,
        mut z_values: Vec<f64>,
    ) -> Result<Self> {
        let n = costs.len();
        if n == 0 {
            return Err(Error::domain("finite MDP needs at least one state"));
        }
        let m = costs[0].len();
        if m == 0 {
            return Err(Error::domain("finite MDP needs at least one control"));
        }
        if probs.is_empty() || probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::domain("disturbance probabilities must lie in [0, 1]"));
        }
        if (probs.iter().sum::<f64>() - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::domain("disturbance probabilities must sum to 1"));
        }
        if next.len() != n || costs.iter().any(|row| row.len() != m) {
            return Err(Error::domain("cost and transition tables disagree on shape"));
        }
        for (x, rows) in next.iter().enumerate() {
            if rows.len() != m || rows.iter().any(|r| r.len() != probs.len()) {
                return Err(Error::domain(format!("transition table for state {x} has the wrong shape")));
            }
            if rows.iter().flatten().any(|&y| y >= n) {
                return Err(Error::domain(format!("transition from state {x} leaves the state set")));
            }
        }
        if costs.iter().flatten().any(|&c| !(c >= 0.0 && c.is_finite())) {
            return Err(Error::domain("stage costs must be finite and nonnegative"));
        }
        z_values.sort_by(f64::total_cmp);
        z_values.dedup();
        if z_values.first() != Some(&0.0) {
            return Err(Error::domain("z-set must contain the initial running maximum 0"));
        }
        let mut next_z = Vec::with_capacity(z_values.len() * n * m);
        for &z in &z_values {
            for row in &costs {
                for &c in row {
                    let target = z.max(c);
                    let iz = z_values.iter().position(|&v| v == target).ok_or_else(|| {
                        Error::domain(format!("z-set not closed under the update: max({z}, {c}) is missing"))
                    })?;
                    next_z.push(iz);
                }
            }
        }
        Ok(Self {
            costs,
            next,
            probs,
            z_values,
            next_z,
        })
    }

    /// Random instance whose costs are multiples of `cost_step`, at most `levels * cost_step`.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        n_states: usize,
        n_controls: usize,
        n_atoms: usize,
        levels: u32,
        cost_step: f64,
    ) -> Self {
        let costs = (0..n_states)
            .map(|_| {
                (0..n_controls)
                    .map(|_| rng.random_range(0..=levels) as f64 * cost_step)
                    .collect()
            })
            .collect();
        let next = (0..n_states)
            .map(|_| {
                (0..n_controls)
                    .map(|_| (0..n_atoms).map(|_| rng.random_range(0..n_states)).collect())
                    .collect()
            })
            .collect();
        let raw: Vec<f64> = (0..n_atoms).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
        // put the rounding residue on the last atom so the sum is 1 to round-off
        let head: f64 = probs[..n_atoms - 1].iter().sum();
        probs[n_atoms - 1] = 1.0 - head;
        Self::new(costs, next, probs).expect("random instance is well formed")
    }

    /// The same chain with every stage cost raised by `b`.
    pub fn shifted(&self, b: f64) -> Result<Self> {
        let costs = self.costs.iter().map(|row| row.iter().map(|c| c + b).collect()).collect();
        Self::new(costs, self.next.clone(), self.probs.clone())
    }

    pub fn n_states(&self) -> usize {
        self.costs.len()
    }

    pub fn n_controls(&self) -> usize {
        self.costs[0].len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn z_values(&self) -> &[f64] {
        &self.z_values
    }

    pub fn nz(&self) -> usize {
        self.z_values.len()
    }

    /// Size of the augmented space.
    pub fn len(&self) -> usize {
        self.n_states() * self.nz()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cost(&self, x: usize, u: usize) -> f64 {
        self.costs[x][u]
    }

    pub fn next_state(&self, x: usize, u: usize, w: usize) -> usize {
        self.next[x][u][w]
    }

    pub fn next_z_index(&self, x: usize, iz: usize, u: usize) -> usize {
        self.next_z[(iz * self.n_states() + x) * self.n_controls() + u]
    }

    pub fn cost_bound(&self) -> f64 {
        self.z_values[self.nz() - 1]
    }

    pub fn index(&self, x: usize, iz: usize) -> usize {
        x * self.nz() + iz
    }

    /// `sum_w p(w) v(next(x, u, w), max{z, c(x, u)})`.
    pub fn q_value(&self, v: &[f64], x: usize, iz: usize, u: usize) -> f64 {
        let jz = self.next_z_index(x, iz, u);
        self.probs
            .iter()
            .zip(&self.next[x][u])
            .map(|(p, &y)| p * v[self.index(y, jz)])
            .sum()
    }

    /// Grid model on integer nodes that reproduces this chain exactly: states
    /// and controls sit on unit-spaced axes and disturbance atom `w` carries
    /// the value `w`. `z_nodes` must place every z-value on a node for the
    /// grid solution to be interpolation free.
    pub fn to_grid_model(&self, cost_bound: f64, z_nodes: usize) -> Result<MdpModel> {
        let (n, m) = (self.n_states(), self.n_controls());
        if n < 2 || m < 2 {
            return Err(Error::domain("grid embedding needs at least two states and two controls"));
        }
        let next = self.next.clone();
        let costs = self.costs.clone();
        let atoms = self
            .probs
            .iter()
            .enumerate()
            .map(|(w, &prob)| Atom {
                value: vec![w as f64],
                prob,
            })
            .collect();
        let sys = FnSystem::new(
            move |x, u, w, out| out[0] = next[x[0].round() as usize][u.round() as usize][w[0] as usize] as f64,
            move |x, u| costs[x[0].round() as usize][u.round() as usize],
            DiscreteDistribution::new(atoms)?,
        );
        MdpModel::builder(sys)
            .state_axis(GridAxis::new(0.0, (n - 1) as f64, n)?)
            .control_axis(GridAxis::new(0.0, (m - 1) as f64, m)?)
            .z_nodes(z_nodes)
            .cost_bound(cost_bound)
            .identity("finite-mdp")
            .build()
    }
}

/// Deterministic stationary feedback `u = mu(x, z)` on the augmented space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinitePolicy {
    controls: Vec<usize>,
}

impl FinitePolicy {
    pub fn from_controls(mdp: &FiniteMdp, controls: Vec<usize>) -> Result<Self> {
        if controls.len() != mdp.len() || controls.iter().any(|&u| u >= mdp.n_controls()) {
            return Err(Error::domain("policy table does not fit the finite MDP"));
        }
        Ok(Self { controls })
    }

    pub fn constant(mdp: &FiniteMdp, u: usize) -> Result<Self> {
        Self::from_controls(mdp, vec![u; mdp.len()])
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, mdp: &FiniteMdp) -> Self {
        Self {
            controls: (0..mdp.len()).map(|_| rng.random_range(0..mdp.n_controls())).collect(),
        }
    }

    /// All `m^(n * nz)` stationary policies; intended for tiny instances.
    pub fn enumerate_all(mdp: &FiniteMdp) -> Vec<Self> {
        let (len, m) = (mdp.len(), mdp.n_controls());
        let total = m.checked_pow(len as u32).expect("policy space too large to enumerate");
        (0..total)
            .map(|mut code| Self {
                controls: (0..len)
                    .map(|_| {
                        let u = code % m;
                        code /= m;
                        u
                    })
                    .collect(),
            })
            .collect()
    }

    pub fn get(&self, mdp: &FiniteMdp, x: usize, iz: usize) -> usize {
        self.controls[mdp.index(x, iz)]
    }

    pub fn controls(&self) -> &[usize] {
        &self.controls
    }
}

/// `v_0^s(x, z) = max{z - s, 0}`.
pub fn initial_value(mdp: &FiniteMdp, s: f64) -> Vec<f64> {
    (0..mdp.n_states())
        .flat_map(|_| mdp.z_values().iter().map(move |&z| (z - s).max(0.0)))
        .collect()
}

/// `T_mu v`.
pub fn apply_policy(mdp: &FiniteMdp, policy: &FinitePolicy, v: &[f64]) -> Vec<f64> {
    (0..mdp.n_states())
        .flat_map(|x| (0..mdp.nz()).map(move |iz| (x, iz)))
        .map(|(x, iz)| mdp.q_value(v, x, iz, policy.get(mdp, x, iz)))
        .collect()
}

/// `J_{T,s}` for the Markov policy `(mu_0, ..., mu_{T-1})`:
/// `T_{mu_0}(T_{mu_1}(... T_{mu_{T-1}}(v_0^s)))`.
pub fn policy_evaluate_markov(mdp: &FiniteMdp, stages: &[FinitePolicy], s: f64) -> Vec<f64> {
    stages
        .iter()
        .rev()
        .fold(initial_value(mdp, s), |v, mu| apply_policy(mdp, mu, &v))
}

/// `J_{T,s}` for a stationary policy.
pub fn policy_evaluate_recursive(mdp: &FiniteMdp, policy: &FinitePolicy, s: f64, horizon: usize) -> Vec<f64> {
    (0..horizon).fold(initial_value(mdp, s), |v, _| apply_policy(mdp, policy, &v))
}

/// One exact Bellman backup with its lowest-index minimizer.
pub fn bellman(mdp: &FiniteMdp, v: &[f64]) -> (Vec<f64>, FinitePolicy) {
    let mut out = Vec::with_capacity(mdp.len());
    let mut controls = Vec::with_capacity(mdp.len());
    for x in 0..mdp.n_states() {
        for iz in 0..mdp.nz() {
            let mut best = (f64::INFINITY, 0);
            for u in 0..mdp.n_controls() {
                let q = mdp.q_value(v, x, iz, u);
                if q < best.0 {
                    best = (q, u);
                }
            }
            out.push(best.0);
            controls.push(best.1);
        }
    }
    (out, FinitePolicy { controls })
}

/// `v_T^s`: `T` exact value-iteration sweeps from `v_0^s`.
pub fn exact_optimal_value(mdp: &FiniteMdp, s: f64, horizon: usize) -> Vec<f64> {
    (0..horizon).fold(initial_value(mdp, s), |v, _| bellman(mdp, &v).0)
}

/// Optimal Markov policy for horizon `T`: stage `t` is greedy for `v_{T-1-t}^s`.
pub fn optimal_markov_policy(mdp: &FiniteMdp, s: f64, horizon: usize) -> Vec<FinitePolicy> {
    let mut stages = Vec::with_capacity(horizon);
    let mut v = initial_value(mdp, s);
    for _ in 0..horizon {
        let (next, mu) = bellman(mdp, &v);
        stages.push(mu);
        v = next;
    }
    stages.reverse();
    stages
}

/// Iterates exact backups until successive iterates differ by at most `tol`.
/// Returns the last iterate and the number of sweeps.
pub fn converged_value(mdp: &FiniteMdp, s: f64, tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)> {
    let mut v = initial_value(mdp, s);
    for k in 1..=max_iter {
        let next = bellman(mdp, &v).0;
        let diff = sup_distance(&v, &next);
        v = next;
        if diff <= tol {
            return Ok((v, k));
        }
    }
    Err(Error::Consistency(format!(
        "finite value iteration for s = {s} did not reach {tol} in {max_iter} sweeps"
    )))
}

/// Evaluates a stationary policy to its limit by repeated `T_mu`.
pub fn policy_value_limit(mdp: &FiniteMdp, policy: &FinitePolicy, s: f64, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let mut v = initial_value(mdp, s);
    for _ in 0..max_iter {
        let next = apply_policy(mdp, policy, &v);
        let diff = sup_distance(&v, &next);
        v = next;
        if diff <= tol {
            return Ok(v);
        }
    }
    Err(Error::Consistency(format!("policy evaluation did not reach {tol} in {max_iter} sweeps")))
}

/// Lowest-index minimizer of `Phi(v)` at every augmented node.
pub fn greedy_policy(mdp: &FiniteMdp, v: &[f64]) -> FinitePolicy {
    bellman(mdp, v).1
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Visits every disturbance sequence of length `T = stages.len()` from
/// `(x, z_iz)`, passing `(probability, z_T)` for each.
fn for_each_path(mdp: &FiniteMdp, stages: &[FinitePolicy], x: usize, iz: usize, mut visit: impl FnMut(f64, f64)) {
    let horizon = stages.len();
    let atoms = mdp.probs().len();
    let total = atoms.checked_pow(horizon as u32).expect("too many paths to enumerate");
    for code in 0..total {
        let (mut xt, mut zt, mut p, mut rest) = (x, iz, 1.0, code);
        for mu in stages {
            let w = rest % atoms;
            rest /= atoms;
            let u = mu.get(mdp, xt, zt);
            p *= mdp.probs()[w];
            zt = mdp.next_z_index(xt, zt, u);
            xt = mdp.next_state(xt, u, w);
        }
        visit(p, mdp.z_values()[zt]);
    }
}

/// Brute-force `E[max{z_T - s, 0}]` from `(x, z_iz)` over all disturbance sequences.
pub fn enumerate_expected_excess(mdp: &FiniteMdp, stages: &[FinitePolicy], s: f64, x: usize, iz: usize) -> f64 {
    let mut total = 0.0;
    for_each_path(mdp, stages, x, iz, |p, z| total += p * (z - s).max(0.0));
    total
}

/// Law of `Y_T = z_T` from `(x0, 0)`, merged over equal values.
pub fn enumerate_cost_distribution(mdp: &FiniteMdp, stages: &[FinitePolicy], x0: usize) -> Vec<(f64, f64)> {
    let mut mass = vec![0.0; mdp.nz()];
    for_each_path(mdp, stages, x0, 0, |p, z| {
        let iz = mdp.z_values().iter().position(|&v| v == z).expect("z in set");
        mass[iz] += p;
    });
    mdp.z_values()
        .iter()
        .copied()
        .zip(mass)
        .filter(|&(_, p)| p > 0.0)
        .collect()
}

/// Exact CVaR of `Y_T` under a Markov policy started at `(x0, 0)`.
pub fn exact_policy_cvar(mdp: &FiniteMdp, stages: &[FinitePolicy], x0: usize, alpha: f64) -> Result<f64> {
    weighted_cvar(&enumerate_cost_distribution(mdp, stages, x0), alpha)
}

/// Which value function `V_s` the minimization over `s` reads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Depth {
    /// `v_T^s`, the optimum for the supremum over the first `T` stages.
    Steps(usize),
    /// The limit of value iteration, to within `tol`.
    Converged { tol: f64, max_iter: usize },
}

/// `V*_alpha(x) = min_s { s + V_s(x, 0) / alpha }` with its lowest minimizer.
///
/// The objective is piecewise linear in `s` with concave pieces between
/// consecutive z-values, so minimizing over the z-set is exact.
pub fn finite_v_alpha(mdp: &FiniteMdp, alpha: f64, x: usize, depth: Depth) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let mut best = (f64::INFINITY, 0.0);
    for &s in mdp.z_values() {
        let v = match depth {
            Depth::Steps(t) => exact_optimal_value(mdp, s, t),
            Depth::Converged { tol, max_iter } => converged_value(mdp, s, tol, max_iter)?.0,
        };
        let obj = s + v[mdp.index(x, 0)] / alpha;
        if obj < best.0 {
            best = (obj, s);
        }
    }
    Ok(best)
}

/// Result of one named oracle check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Runs the finite-MDP checks on instances drawn from `seed`.
pub fn verification_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // forward recursion against path enumeration
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let mdp = FiniteMdp::random(&mut rng, 4, 2, 2, 4, 0.25);
        for _ in 0..20 {
            let mu = FinitePolicy::random(&mut rng, &mdp);
            for s in [0.0, 0.3, 1.0] {
                for t in 0..=6 {
                    let rec = policy_evaluate_recursive(&mdp, &mu, s, t);
                    let stages = vec![mu.clone(); t];
                    for x in 0..mdp.n_states() {
                        for iz in 0..mdp.nz() {
                            let e = enumerate_expected_excess(&mdp, &stages, s, x, iz);
                            worst = worst.max((e - rec[mdp.index(x, iz)]).abs());
                        }
                    }
                }
            }
        }
    }
    out.push(CheckOutcome::new(
        "recursion-vs-enumeration",
        worst <= 1e-12,
        format!("max |J_rec - J_enum| = {worst:e}"),
    ));

    // optimal value sandwich
    let mdp = FiniteMdp::random(&mut rng, 3, 2, 2, 2, 0.5);
    let policies = FinitePolicy::enumerate_all(&mdp);
    let mut ok = true;
    let mut detail = String::new();
    for s in [0.0, 0.3, 0.5] {
        let (vs, _) = converged_value(&mdp, s, 1e-14, 100_000)?;
        let mut prev = initial_value(&mdp, s);
        for t in 1..=50 {
            let cur = exact_optimal_value(&mdp, s, t);
            if cur.iter().zip(&prev).any(|(c, p)| *c < p - 1e-9) {
                ok = false;
                detail = format!("v_T decreased at T = {t}, s = {s}");
            }
            if t <= 4 {
                for mu in &policies {
                    let j = policy_evaluate_recursive(&mdp, mu, s, t);
                    if cur.iter().zip(&j).any(|(v, j)| *v > j + 1e-9) {
                        ok = false;
                        detail = format!("a policy beat v_T at T = {t}, s = {s}");
                    }
                }
            }
            prev = cur;
        }
        let greedy = greedy_policy(&mdp, &vs);
        for t in [1, 5, 20, 50] {
            let j = policy_evaluate_recursive(&mdp, &greedy, s, t);
            if j.iter().zip(&vs).any(|(j, v)| *j > v + 1e-9) {
                ok = false;
                detail = format!("greedy evaluation exceeded v^s at T = {t}, s = {s}");
            }
        }
    }
    if ok {
        detail = format!("{} policies, T <= 50", policies.len());
    }
    out.push(CheckOutcome::new("sandwich", ok, detail));

    // greedy policy attains the converged value from (x, 0)
    let mut worst = 0.0f64;
    for s in [0.0, 0.25, 0.5] {
        let (vs, _) = converged_value(&mdp, s, 1e-14, 100_000)?;
        let j = policy_value_limit(&mdp, &greedy_policy(&mdp, &vs), s, 1e-14, 100_000)?;
        for x in 0..mdp.n_states() {
            worst = worst.max((j[mdp.index(x, 0)] - vs[mdp.index(x, 0)]).abs());
        }
    }
    out.push(CheckOutcome::new(
        "greedy-attains-value",
        worst <= 1e-9,
        format!("max |J_greedy - v^s| at z = 0: {worst:e}"),
    ));

    // cost shift
    let shifted = mdp.shifted(0.5)?;
    let mut worst = 0.0f64;
    for alpha in [1.0, 0.5, 0.05] {
        for x in 0..mdp.n_states() {
            for depth in [Depth::Steps(6), Depth::Converged { tol: 1e-14, max_iter: 100_000 }] {
                let (a, _) = finite_v_alpha(&mdp, alpha, x, depth)?;
                let (b, _) = finite_v_alpha(&shifted, alpha, x, depth)?;
                worst = worst.max((b - a - 0.5).abs());
            }
        }
    }
    out.push(CheckOutcome::new(
        "cost-shift",
        worst <= 1e-9,
        format!("max |V~ - V - 0.5| = {worst:e}"),
    ));

    // precommitment policy attains V*_alpha exactly at finite horizon
    let mut worst = 0.0f64;
    let horizon = 6;
    for alpha in [1.0, 0.3, 0.05] {
        for x in 0..mdp.n_states() {
            let (v, s) = finite_v_alpha(&mdp, alpha, x, Depth::Steps(horizon))?;
            let stages = optimal_markov_policy(&mdp, s, horizon);
            worst = worst.max((exact_policy_cvar(&mdp, &stages, x, alpha)? - v).abs());
        }
    }
    out.push(CheckOutcome::new(
        "precommitment-cvar",
        worst <= 1e-12,
        format!("max |CVaR(policy) - V*| = {worst:e}"),
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// 0 -> 1 -> 2 -> 2 with costs 0, 0.5, 1 and no randomness.
    fn chain() -> FiniteMdp {
        FiniteMdp::new(
            vec![vec![0.0, 0.0], vec![0.5, 0.5], vec![1.0, 1.0]],
            vec![vec![vec![1], vec![0]], vec![vec![2], vec![2]], vec![vec![2], vec![2]]],
            vec![1.0],
        )
        .unwrap()
    }

    #[test]
    fn horizon_zero_is_initial_value() {
        let m = chain();
        let mu = FinitePolicy::constant(&m, 0).unwrap();
        for s in [0.0, 0.3] {
            assert_eq!(policy_evaluate_recursive(&m, &mu, s, 0), initial_value(&m, s));
        }
    }

    #[test]
    fn deterministic_chain_hand_trace() {
        let m = chain();
        let go = FinitePolicy::constant(&m, 0).unwrap();
        let stay = FinitePolicy::constant(&m, 1).unwrap();
        // from (0, 0) moving right: costs 0, 0.5, 1 -> Y_3 = 1
        let j = policy_evaluate_recursive(&m, &go, 0.2, 3);
        assert!((j[m.index(0, 0)] - 0.8).abs() < 1e-15);
        // two steps: Y_2 = 0.5
        assert!((policy_evaluate_recursive(&m, &go, 0.2, 2)[m.index(0, 0)] - 0.3).abs() < 1e-15);
        // staying at 0 never incurs cost
        assert_eq!(policy_evaluate_recursive(&m, &stay, 0.0, 3)[m.index(0, 0)], 0.0);
        assert_eq!(exact_optimal_value(&m, 0.0, 10)[m.index(0, 0)], 0.0);
    }

    #[test]
    fn recursion_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = FiniteMdp::random(&mut rng, 4, 2, 2, 4, 0.25);
        for _ in 0..5 {
            let stages: Vec<_> = (0..5).map(|_| FinitePolicy::random(&mut rng, &m)).collect();
            let rec = policy_evaluate_markov(&m, &stages, 0.3);
            for x in 0..4 {
                for iz in 0..m.nz() {
                    let e = enumerate_expected_excess(&m, &stages, 0.3, x, iz);
                    assert!((e - rec[m.index(x, iz)]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn large_s_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = FiniteMdp::random(&mut rng, 3, 2, 2, 4, 0.25);
        let s = m.cost_bound();
        assert!(exact_optimal_value(&m, s, 8).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn open_z_set_is_rejected() {
        let err = FiniteMdp::with_z_values(vec![vec![0.5]], vec![vec![vec![0]]], vec![1.0], vec![0.0]).unwrap_err();
        assert!(matches!(err, Error::Domain(ref m) if m.contains("not closed")));
    }

    #[test]
    fn enumerate_all_counts() {
        let m = chain();
        let all = FinitePolicy::enumerate_all(&m);
        assert_eq!(all.len(), 1 << m.len());
        assert_eq!(all[0].controls(), &vec![0; m.len()][..]);
    }

    #[test]
    fn grid_embedding_reproduces_exact_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = FiniteMdp::random(&mut rng, 3, 2, 2, 4, 0.25);
        // z-values are multiples of 0.25 in [0, 1]: all on the 5-node z axis
        let g = m.to_grid_model(1.0, 5).unwrap();
        let op = crate::vi::BellmanOperator::new(&g);
        for s in [0.0, 0.5] {
            let mut it = op.iterate(s, &g);
            for _ in 0..6 {
                it.step().unwrap();
            }
            let exact = exact_optimal_value(&m, s, 6);
            for x in 0..3 {
                for (iz, &z) in m.z_values().iter().enumerate() {
                    let jz = (z / 0.25).round() as usize;
                    assert!((it.grid().get(x, jz) - exact[m.index(x, iz)]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn suite_passes() {
        for c in verification_suite(17).unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
