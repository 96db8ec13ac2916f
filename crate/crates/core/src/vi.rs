//! Value iteration for the expected excess `E[max{Z - s, 0}]` on the augmented
//! grid `S x Z`.
//!
//! Starting from `v_0(x, z) = max{z - s, 0}`, each sweep applies
//!
//! ```text
//! v_{t+1}(x, z) = min_u  sum_w p(w|x,u) * v_t(f(x,u,w), max{z, c(x,u)})
//! ```
//!
//! where `v_t` is read off the grid by multilinear interpolation in `(x, z)`.
//! Sweeps are Jacobi-style (only the previous grid is read), so the iterates
//! ascend monotonically to the fixed point and stay within `[0, max{c_bar - s, 0}]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridAxis;
use crate::model::MdpModel;

/// Allowed round-off in the pointwise ascent `v_t <= v_{t+1}`.
pub const MONOTONE_TOL: f64 = 1e-10;

/// Values of `v_t^s` over the state grid times the z axis. The z index varies fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueGrid {
    values: Vec<f64>,
    n_states: usize,
    nz: usize,
    s: f64,
    t: usize,
}

impl ValueGrid {
    pub fn from_values(values: Vec<f64>, n_states: usize, nz: usize, s: f64, t: usize) -> Result<Self> {
        if values.len() != n_states * nz {
            return Err(Error::domain(format!(
                "value grid of {} entries does not match {n_states} states x {nz} z nodes",
                values.len()
            )));
        }
        Ok(Self { values, n_states, nz, s, t })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    /// The dual variable this grid is parametrized by.
    pub fn s(&self) -> f64 {
        self.s
    }

    /// Number of sweeps applied since `init_value`.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn get(&self, state: usize, iz: usize) -> f64 {
        self.values[state * self.nz + iz]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.nz..(state + 1) * self.nz]
    }

    /// `x -> v(x, 0)`, which equals `V_s(x)` once converged.
    pub fn slice_at_z0(&self) -> Vec<f64> {
        self.values.iter().step_by(self.nz).copied().collect()
    }

    pub fn sup_distance(&self, other: &ValueGrid) -> f64 {
        assert_eq!(self.values.len(), other.values.len(), "grid shape mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Greedy control indices `kappa^s` over the augmented grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorTable {
    controls: Vec<u32>,
    n_states: usize,
    nz: usize,
    s: f64,
}

impl SelectorTable {
    pub fn from_indices(controls: Vec<u32>, n_states: usize, nz: usize, s: f64) -> Result<Self> {
        if controls.len() != n_states * nz {
            return Err(Error::domain("selector table does not match its shape"));
        }
        Ok(Self { controls, n_states, nz, s })
    }

    pub fn indices(&self) -> &[u32] {
        &self.controls
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn get(&self, state: usize, iz: usize) -> usize {
        self.controls[state * self.nz + iz] as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub iterations_run: usize,
    /// Sup-norm of `v_{t+1} - v_t` for each sweep.
    pub sup_diff_history: Vec<f64>,
    pub converged: bool,
    /// Sup-norm of `v - B(v)` for the returned grid.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct ViSolution {
    pub value: ValueGrid,
    /// Greedy with respect to `value` itself.
    pub selector: SelectorTable,
    pub report: ConvergenceReport,
}

/// `v_0^s(x, z) = max{z - s, 0}`.
pub fn init_value(model: &MdpModel, s: f64) -> ValueGrid {
    let n_states = model.state_grid().len();
    let z = model.z_axis();
    let row: Vec<f64> = z.nodes().map(|zn| (zn - s).max(0.0)).collect();
    let values = (0..n_states).flat_map(|_| row.iter().copied()).collect();
    ValueGrid {
        values,
        n_states,
        nz: z.len(),
        s,
        t: 0,
    }
}

/// Precomputed transition structure of a model: stage costs and the merged
/// interpolation stencil of every `(state node, control node)` pair.
#[derive(Debug, Clone)]
pub struct BellmanOperator {
    z_axis: GridAxis,
    z_nodes: Vec<f64>,
    n_states: usize,
    n_controls: usize,
    costs: Vec<f64>,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
}

impl BellmanOperator {
    pub fn new(model: &MdpModel) -> Self {
        let grid = model.state_grid();
        let controls: Vec<f64> = model.control_axis().nodes().collect();
        let n_states = grid.len();
        let n_controls = controls.len();
        let d = grid.dim();

        let per_state: Vec<(Vec<f64>, Vec<Vec<(u32, f64)>>)> = (0..n_states)
            .into_par_iter()
            .map(|k| {
                let x = grid.node(k);
                let mut next = vec![0.0; d];
                let mut costs = Vec::with_capacity(n_controls);
                let mut stencils = Vec::with_capacity(n_controls);
                for &u in &controls {
                    costs.push(model.system().stage_cost(&x, u));
                    let dist = model.disturbance(&x, u);
                    let mut merged: Vec<(u32, f64)> = Vec::new();
                    for atom in dist.atoms().iter().filter(|a| a.prob > 0.0) {
                        model.next_state(&x, u, &atom.value, &mut next);
                        for (idx, w) in grid.stencil(&next) {
                            merged.push((idx as u32, w * atom.prob));
                        }
                    }
                    merged.sort_by_key(|p| p.0);
                    merged.dedup_by(|b, a| {
                        if a.0 == b.0 {
                            a.1 += b.1;
                            true
                        } else {
                            false
                        }
                    });
                    stencils.push(merged);
                }
                (costs, stencils)
            })
            .collect();

        let mut costs = Vec::with_capacity(n_states * n_controls);
        let mut offsets = vec![0];
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        for (c, stencils) in per_state {
            costs.extend(c);
            for st in stencils {
                for (idx, w) in st {
                    targets.push(idx);
                    weights.push(w);
                }
                offsets.push(targets.len());
            }
        }

        let z_axis = *model.z_axis();
        Self {
            z_nodes: z_axis.nodes().collect(),
            z_axis,
            n_states,
            n_controls,
            costs,
            offsets,
            targets,
            weights,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    pub fn nz(&self) -> usize {
        self.z_nodes.len()
    }

    /// Stage cost at a state node and control node.
    pub fn cost(&self, state: usize, control: usize) -> f64 {
        self.costs[state * self.n_controls + control]
    }

    fn check_shape(&self, v: &ValueGrid) {
        assert_eq!(
            (v.n_states, v.nz),
            (self.n_states, self.nz()),
            "value grid shape does not match the model"
        );
    }

    /// `Phi(v)(x, z, u)` at grid indices.
    pub fn phi(&self, v: &ValueGrid, state: usize, iz: usize, control: usize) -> f64 {
        self.check_shape(v);
        let nz = v.nz;
        let pair = state * self.n_controls + control;
        let (lo, hi) = (self.offsets[pair], self.offsets[pair + 1]);
        let zq = self.z_nodes[iz].max(self.costs[pair]);
        let (i0, lam) = self.z_axis.bracket(zq);
        let expect_at = |i: usize| {
            let mut acc = 0.0;
            for e in lo..hi {
                acc += self.weights[e] * v.values[self.targets[e] as usize * nz + i];
            }
            acc
        };
        interp(expect_at(i0), || expect_at(i0 + 1), lam)
    }

    /// Fills `out` with `Phi(v)(x_state, z, u)` for every z node.
    fn phi_row(&self, v: &ValueGrid, state: usize, control: usize, acc: &mut [f64], out: &mut [f64]) {
        let nz = v.nz;
        let pair = state * self.n_controls + control;
        acc.fill(0.0);
        for e in self.offsets[pair]..self.offsets[pair + 1] {
            let w = self.weights[e];
            let base = self.targets[e] as usize * nz;
            for (a, &val) in acc.iter_mut().zip(&v.values[base..base + nz]) {
                *a += w * val;
            }
        }
        let c = self.costs[pair];
        for (iz, o) in out.iter_mut().enumerate() {
            let zq = self.z_nodes[iz].max(c);
            let (i0, lam) = self.z_axis.bracket(zq);
            *o = interp(acc[i0], || acc[i0 + 1], lam);
        }
    }

    /// One Jacobi sweep. Ties in the minimum go to the lowest control index.
    pub fn backup(&self, v: &ValueGrid) -> (ValueGrid, SelectorTable) {
        self.check_shape(v);
        let nz = v.nz;
        let mut values = vec![f64::INFINITY; v.values.len()];
        let mut controls = vec![0u32; v.values.len()];
        values
            .par_chunks_mut(nz)
            .zip(controls.par_chunks_mut(nz))
            .enumerate()
            .for_each_init(
                || (vec![0.0; nz], vec![0.0; nz]),
                |(acc, row), (state, (best, arg))| {
                    for j in 0..self.n_controls {
                        self.phi_row(v, state, j, acc, row);
                        for iz in 0..nz {
                            if row[iz] < best[iz] {
                                best[iz] = row[iz];
                                arg[iz] = j as u32;
                            }
                        }
                    }
                },
            );
        (
            ValueGrid {
                values,
                n_states: v.n_states,
                nz,
                s: v.s,
                t: v.t + 1,
            },
            SelectorTable {
                controls,
                n_states: v.n_states,
                nz,
                s: v.s,
            },
        )
    }

    /// `sup |v - B(v)|` over all nodes.
    pub fn residual(&self, v: &ValueGrid) -> f64 {
        self.backup(v).0.sup_distance(v)
    }

    pub fn iterate(&self, s: f64, model: &MdpModel) -> ValueIteration<'_> {
        ValueIteration::new(self, init_value(model, s))
    }

    /// Sweeps from `v_0^s` until the sup-norm step is at most `tol` or
    /// `max_iter` sweeps have run.
    pub fn solve(&self, model: &MdpModel, s: f64, max_iter: usize, tol: f64) -> Result<ViSolution> {
        if max_iter < 1 {
            return Err(Error::domain("max_iter must be at least 1"));
        }
        if !(tol > 0.0) {
            return Err(Error::domain(format!("tol must be positive, got {tol}")));
        }
        self.run(self.iterate(s, model), max_iter, tol)
    }

    /// Continues an earlier, possibly unconverged solve from its last grid.
    /// `max_iter` counts the sweeps already in `prev.report`.
    pub fn resume(&self, prev: ViSolution, max_iter: usize, tol: f64) -> Result<ViSolution> {
        if !(tol > 0.0) {
            return Err(Error::domain(format!("tol must be positive, got {tol}")));
        }
        if prev.value.n_states != self.n_states() || prev.value.nz != self.nz() {
            return Err(Error::domain("stored grid does not match the model"));
        }
        let it = ValueIteration {
            op: self,
            grid: prev.value,
            history: prev.report.sup_diff_history,
        };
        self.run(it, max_iter, tol)
    }

    fn run(&self, mut it: ValueIteration<'_>, max_iter: usize, tol: f64) -> Result<ViSolution> {
        let mut converged = it.history.last().is_some_and(|&d| d <= tol);
        while !converged && it.history.len() < max_iter {
            if it.step()? <= tol {
                converged = true;
            }
        }
        let (value, history) = it.into_parts();
        let (next, selector) = self.backup(&value);
        let residual = next.sup_distance(&value);
        Ok(ViSolution {
            value,
            selector,
            report: ConvergenceReport {
                iterations_run: history.len(),
                sup_diff_history: history,
                converged,
                residual,
            },
        })
    }
}

#[inline]
fn interp(lo: f64, hi: impl FnOnce() -> f64, lam: f64) -> f64 {
    if lam == 0.0 {
        lo
    } else if lam == 1.0 {
        hi()
    } else {
        (1.0 - lam) * lo + lam * hi()
    }
}

/// Stepwise driver over the iterates `v_0, v_1, ...`, checking the monotone
/// ascent on every sweep.
pub struct ValueIteration<'a> {
    op: &'a BellmanOperator,
    grid: ValueGrid,
    history: Vec<f64>,
}

impl<'a> ValueIteration<'a> {
    pub fn new(op: &'a BellmanOperator, start: ValueGrid) -> Self {
        Self {
            op,
            grid: start,
            history: Vec::new(),
        }
    }

    pub fn grid(&self) -> &ValueGrid {
        &self.grid
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// Applies one sweep and returns `sup |v_{t+1} - v_t|`.
    pub fn step(&mut self) -> Result<f64> {
        let (next, _) = self.op.backup(&self.grid);
        let mut diff = 0.0f64;
        let mut worst_drop = 0.0f64;
        for (a, b) in self.grid.values.iter().zip(&next.values) {
            diff = diff.max((b - a).abs());
            worst_drop = worst_drop.max(a - b);
        }
        if worst_drop > MONOTONE_TOL {
            return Err(Error::Consistency(format!(
                "sweep {} decreased a value by {worst_drop:e} (s = {}); \
                 value iteration must ascend monotonically",
                next.t, next.s
            )));
        }
        self.grid = next;
        self.history.push(diff);
        Ok(diff)
    }

    pub fn into_parts(self) -> (ValueGrid, Vec<f64>) {
        (self.grid, self.history)
    }
}

/// `Phi(v)(x, z, u)` at grid indices. Builds the transition cache on every call;
/// use [`BellmanOperator`] for repeated evaluation.
pub fn phi_apply(model: &MdpModel, v: &ValueGrid, state: usize, iz: usize, control: usize) -> f64 {
    BellmanOperator::new(model).phi(v, state, iz, control)
}

pub fn bellman_backup(model: &MdpModel, v: &ValueGrid) -> (ValueGrid, SelectorTable) {
    BellmanOperator::new(model).backup(v)
}

pub fn value_iteration(model: &MdpModel, s: f64, max_iter: usize, tol: f64) -> Result<ViSolution> {
    BellmanOperator::new(model).solve(model, s, max_iter, tol)
}

pub fn fixed_point_residual(model: &MdpModel, v: &ValueGrid) -> f64 {
    BellmanOperator::new(model).residual(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Atom, DiscreteDistribution, FnSystem};

    /// Three states on a line; control 1 moves right, control 0 stays. Cost grows to the right.
    fn chain() -> MdpModel {
        let sys = FnSystem::new(
            |x, u, w, next| next[0] = x[0] + u.round() * w[0],
            |x, u| 0.25 * x[0] + 0.25 * u,
            DiscreteDistribution::new(vec![
                Atom { value: vec![1.0], prob: 0.5 },
                Atom { value: vec![0.0], prob: 0.5 },
            ])
            .unwrap(),
        );
        MdpModel::builder(sys)
            .state_axis(GridAxis::new(0.0, 2.0, 3).unwrap())
            .control_axis(GridAxis::new(0.0, 1.0, 2).unwrap())
            .z_nodes(5)
            .cost_bound(1.0)
            .build()
            .unwrap()
    }

    #[test]
    fn init_value_formula() {
        let m = chain();
        let v = init_value(&m, 0.2);
        // z nodes 0, .25, .5, .75, 1
        assert!((v.get(0, 2) - 0.3).abs() < 1e-15);
        assert_eq!(v.get(1, 0), 0.0);
        let v = init_value(&m, 1.0);
        assert!(v.values().iter().all(|&x| x == 0.0));
        assert_eq!(v.t(), 0);
    }

    #[test]
    fn phi_of_constant_is_constant() {
        let m = chain();
        let v = ValueGrid::from_values(vec![0.7; 15], 3, 5, 0.0, 0).unwrap();
        let op = BellmanOperator::new(&m);
        for k in 0..3 {
            for iz in 0..5 {
                for j in 0..2 {
                    assert!((op.phi(&v, k, iz, j) - 0.7).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn phi_two_atom_convex_combination() {
        // deterministic cost 0, next state is the atom value itself
        let sys = FnSystem::new(
            |_x, _u, w, next| next[0] = w[0],
            |_x, _u| 0.0,
            DiscreteDistribution::new(vec![
                Atom { value: vec![0.0], prob: 0.25 },
                Atom { value: vec![1.0], prob: 0.75 },
            ])
            .unwrap(),
        );
        let m = MdpModel::builder(sys)
            .state_axis(GridAxis::new(0.0, 1.0, 2).unwrap())
            .control_axis(GridAxis::new(0.0, 1.0, 2).unwrap())
            .z_nodes(2)
            .cost_bound(1.0)
            .build()
            .unwrap();
        let v = ValueGrid::from_values(vec![0.0, 0.0, 0.4, 0.4], 2, 2, 0.0, 0).unwrap();
        assert!((phi_apply(&m, &v, 0, 0, 0) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn zero_grid_is_fixed() {
        let m = chain();
        let v = init_value(&m, 1.0);
        let (b, _) = bellman_backup(&m, &v);
        assert!(b.values().iter().all(|&x| x == 0.0));
        assert_eq!(b.t(), 1);
    }

    #[test]
    fn first_backup_matches_hand_enumeration() {
        // v_1(x,z) = min_u sum_w p(w) max{max(z, c(x,u)) - s, 0} with s = 0
        let m = chain();
        let v0 = init_value(&m, 0.0);
        let (v1, sel) = bellman_backup(&m, &v0);
        for k in 0..3 {
            let x = k as f64;
            for (iz, z) in m.z_axis().nodes().enumerate() {
                let candidates: Vec<f64> = [0.0, 1.0]
                    .iter()
                    .map(|&u| (0.25 * x + 0.25 * u).max(z))
                    .collect();
                let expect = candidates[0].min(candidates[1]);
                assert!((v1.get(k, iz) - expect).abs() < 1e-15);
                let j = sel.get(k, iz);
                assert_eq!(candidates[j], expect);
                if candidates[0] == candidates[1] {
                    assert_eq!(j, 0, "ties go to the lowest control index");
                }
            }
        }
    }

    #[test]
    fn large_s_converges_immediately() {
        let m = chain();
        let sol = value_iteration(&m, 1.0, 50, 1e-9).unwrap();
        assert!(sol.report.converged);
        assert_eq!(sol.report.iterations_run, 1);
        assert_eq!(sol.value.t(), 1);
        assert!(sol.value.values().iter().all(|&x| x == 0.0));
        assert_eq!(sol.report.residual, 0.0);
    }

    #[test]
    fn initial_grid_is_not_a_fixed_point() {
        let m = chain();
        assert!(fixed_point_residual(&m, &init_value(&m, 0.0)) > 0.0);
    }

    #[test]
    fn selector_attains_backup() {
        let m = chain();
        let op = BellmanOperator::new(&m);
        let sol = op.solve(&m, 0.1, 200, 1e-12).unwrap();
        let (next, _) = op.backup(&sol.value);
        for k in 0..3 {
            for iz in 0..5 {
                let j = sol.selector.get(k, iz);
                assert!((op.phi(&sol.value, k, iz, j) - next.get(k, iz)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let m = chain();
        assert!(value_iteration(&m, 0.0, 0, 1e-6).is_err());
        assert!(value_iteration(&m, 0.0, 10, 0.0).is_err());
    }

    #[test]
    fn resume_matches_uninterrupted_solve() {
        let m = chain();
        let op = BellmanOperator::new(&m);
        let direct = op.solve(&m, 0.1, 12, 1e-14).unwrap();
        let partial = op.solve(&m, 0.1, 5, 1e-14).unwrap();
        let resumed = op.resume(partial, 12, 1e-14).unwrap();
        assert_eq!(resumed.value, direct.value);
        assert_eq!(resumed.report, direct.report);
    }
}
