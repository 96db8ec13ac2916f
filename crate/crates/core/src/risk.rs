//! CVaR layer: empirical VaR/CVaR, the family `V_s`, the minimization over
//! `s` that yields `V*_alpha`, risk-averse safe sets, and the checkpoint
//! stopping rule `gamma_alpha(N', N)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GridLayout, MdpModel};
use crate::vi::{BellmanOperator, ConvergenceReport, ValueIteration, ViSolution};

fn check_alpha(alpha: f64, allow_one: bool) -> Result<()> {
    let ok = alpha > 0.0 && (alpha < 1.0 || (allow_one && alpha == 1.0));
    if ok {
        Ok(())
    } else {
        let range = if allow_one { "(0, 1]" } else { "(0, 1)" };
        Err(Error::domain(format!("alpha must lie in {range}, got {alpha}")))
    }
}

/// Equally weighted samples of a random cost, kept sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    samples: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.iter().any(|y| y.is_nan()) {
            return Err(Error::domain("samples contain NaN"));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }
}

/// Smallest sample `y` whose empirical CDF reaches `1 - alpha`.
pub fn empirical_var(dist: &EmpiricalDistribution, alpha: f64) -> Result<f64> {
    check_alpha(alpha, false)?;
    let n = dist.len();
    if n == 0 {
        return Err(Error::domain("VaR of an empty sample"));
    }
    let need = n as f64 * (1.0 - alpha);
    // k / n >= 1 - alpha, guarding against round-off in the product
    let k = ((need - 1e-9 * n as f64).ceil() as usize).clamp(1, n);
    Ok(dist.samples[k - 1])
}

/// `min_s { s + E[max{Y - s, 0}] / alpha }`, evaluated exactly: the minimum is
/// attained at a sample point, so every sample point is tried.
pub fn empirical_cvar(dist: &EmpiricalDistribution, alpha: f64) -> Result<f64> {
    check_alpha(alpha, true)?;
    if dist.is_empty() {
        return Err(Error::domain("CVaR of an empty sample"));
    }
    let p = 1.0 / dist.len() as f64;
    Ok(sorted_cvar(dist.samples.iter().map(|&y| (y, p)), alpha))
}

/// CVaR of a finitely supported law given as `(value, probability)` pairs.
pub fn weighted_cvar(atoms: &[(f64, f64)], alpha: f64) -> Result<f64> {
    check_alpha(alpha, true)?;
    if atoms.is_empty() {
        return Err(Error::domain("CVaR of an empty distribution"));
    }
    let mut sorted = atoms.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(sorted_cvar(sorted.into_iter(), alpha))
}

/// Rockafellar–Uryasev objective at each atom of an ascending law, scanning
/// from the top so the excess `sum_{i>k} p_i (y_i - y_k)` is accumulated from
/// gaps between neighbours.
fn sorted_cvar(atoms: impl DoubleEndedIterator<Item = (f64, f64)>, alpha: f64) -> f64 {
    let mut best = f64::INFINITY;
    let mut excess = 0.0;
    let mut mass_above = 0.0;
    let mut above: Option<f64> = None;
    for (y, p) in atoms.rev() {
        if let Some(prev) = above {
            excess += mass_above * (prev - y);
        }
        best = best.min(y + excess / alpha);
        mass_above += p;
        above = Some(y);
    }
    best
}

/// Lowest minimizer of `s + value(i) / alpha` over the `s` grid.
pub fn minimize_over_s(s_values: &[f64], alpha: f64, value: impl Fn(usize) -> f64) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for (i, &s) in s_values.iter().enumerate() {
        let obj = s + value(i) / alpha;
        if obj < best.0 {
            best = (obj, i);
        }
    }
    best
}

/// Converged value grids `v^s` for a sorted set of dual variables `s`.
#[derive(Debug, Clone)]
pub struct VsFamily {
    layout: GridLayout,
    s_values: Vec<f64>,
    solutions: Vec<ViSolution>,
    slices: Vec<Vec<f64>>,
}

impl VsFamily {
    pub fn from_solutions(layout: GridLayout, s_values: Vec<f64>, solutions: Vec<ViSolution>) -> Result<Self> {
        validate_s_values(&s_values, layout.cost_bound)?;
        if solutions.len() != s_values.len() {
            return Err(Error::domain("one solution per s value is required"));
        }
        let n_states = layout.state.len();
        for (sol, &s) in solutions.iter().zip(&s_values) {
            if sol.value.n_states() != n_states || sol.value.nz() != layout.z.len() {
                return Err(Error::domain(format!("value grid for s = {s} does not match the layout")));
            }
        }
        let slices = solutions.iter().map(|sol| sol.value.slice_at_z0()).collect();
        Ok(Self {
            layout,
            s_values,
            solutions,
            slices,
        })
    }

    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }

    pub fn s_values(&self) -> &[f64] {
        &self.s_values
    }

    pub fn solutions(&self) -> &[ViSolution] {
        &self.solutions
    }

    pub fn solution(&self, index: usize) -> &ViSolution {
        &self.solutions[index]
    }

    /// `V_s(x) = v^s(x, 0)` for the `index`-th `s`.
    pub fn slice(&self, index: usize) -> &[f64] {
        &self.slices[index]
    }

    /// `s` values whose value iteration hit `max_iter` before the tolerance.
    pub fn unconverged(&self) -> Vec<f64> {
        self.s_values
            .iter()
            .zip(&self.solutions)
            .filter(|(_, sol)| !sol.report.converged)
            .map(|(&s, _)| s)
            .collect()
    }

    /// Largest gap between consecutive `s` values.
    pub fn s_spacing(&self) -> f64 {
        s_spacing(&self.s_values)
    }
}

fn s_spacing(s_values: &[f64]) -> f64 {
    s_values.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

fn validate_s_values(s_values: &[f64], cost_bound: f64) -> Result<()> {
    if s_values.is_empty() {
        return Err(Error::domain("s grid is empty"));
    }
    if s_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain("s values must be strictly increasing"));
    }
    let slack = 1e-12 * cost_bound;
    if s_values[0] < -slack || s_values[s_values.len() - 1] > cost_bound + slack {
        return Err(Error::domain(format!("s values must lie in [0, {cost_bound}]")));
    }
    Ok(())
}

/// `n` evenly spaced values covering `[lo, hi]`, endpoints included. Interior
/// values are rounded to 12 decimals so that `0:0.8:21` yields `0.12`, not
/// `0.12000000000000002`.
pub fn s_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| match i {
                0 => lo,
                _ if i + 1 == n => hi,
                _ => {
                    let v = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                    ((v * 1e12).round() / 1e12).clamp(lo, hi)
                }
            })
            .collect(),
    }
}

/// Runs value iteration independently for every `s`.
pub fn compute_vs_family(model: &MdpModel, s_values: &[f64], tol: f64, max_iter: usize) -> Result<VsFamily> {
    validate_s_values(s_values, model.cost_bound())?;
    let op = BellmanOperator::new(model);
    let solutions = s_values
        .par_iter()
        .map(|&s| op.solve(model, s, max_iter, tol))
        .collect::<Result<Vec<_>>>()?;
    VsFamily::from_solutions(model.layout(), s_values.to_vec(), solutions)
}

/// `V*_alpha` over the state grid together with the committed dual variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskResult {
    pub alpha: f64,
    pub v_star: Vec<f64>,
    pub s_star: Vec<f64>,
    pub s_star_index: Vec<usize>,
    /// `(1 + 1/alpha) * ds / 2`: error allowance from minimizing over a finite `s` grid.
    pub quantization_bound: f64,
    pub cost_bound: f64,
    /// Constant added to the stage cost before solving; subtract it to report
    /// risk in the original cost units.
    pub cost_shift: f64,
}

impl RiskResult {
    pub fn len(&self) -> usize {
        self.v_star.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_star.is_empty()
    }

    /// `V*_alpha` in the units of the unshifted cost.
    pub fn unshifted_v_star(&self) -> Vec<f64> {
        self.v_star.iter().map(|v| v - self.cost_shift).collect()
    }
}

/// Per state node: `min_s { s + V_s(x) / alpha }` and its lowest minimizer.
pub fn compute_v_alpha(family: &VsFamily, alpha: f64) -> Result<RiskResult> {
    v_alpha_from_slices(&family.layout, &family.s_values, &family.slices, alpha)
}

fn v_alpha_from_slices(layout: &GridLayout, s_values: &[f64], slices: &[Vec<f64>], alpha: f64) -> Result<RiskResult> {
    check_alpha(alpha, true)?;
    let n = layout.state.len();
    let mut v_star = Vec::with_capacity(n);
    let mut s_star = Vec::with_capacity(n);
    let mut s_star_index = Vec::with_capacity(n);
    for k in 0..n {
        let (v, i) = minimize_over_s(s_values, alpha, |i| slices[i][k]);
        v_star.push(v.clamp(0.0, layout.cost_bound));
        s_star.push(s_values[i]);
        s_star_index.push(i);
    }
    Ok(RiskResult {
        alpha,
        v_star,
        s_star,
        s_star_index,
        quantization_bound: (1.0 + 1.0 / alpha) * s_spacing(s_values) / 2.0,
        cost_bound: layout.cost_bound,
        cost_shift: layout.cost_shift,
    })
}

/// `{x : V*_alpha(x) <= r}` as a mask over the state grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeSet {
    pub alpha: f64,
    pub r: f64,
    pub mask: Vec<bool>,
}

impl SafeSet {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn is_subset_of(&self, other: &SafeSet) -> bool {
        self.mask.len() == other.mask.len() && self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }

    /// Jaccard index between the set and its bounding box in index space,
    /// or `None` for an empty set. Equals 1 exactly for box-shaped sets.
    pub fn rectangularity(&self, shape: &[usize]) -> Option<f64> {
        let d = shape.len();
        let mut lo = vec![usize::MAX; d];
        let mut hi = vec![0usize; d];
        let mut count = 0usize;
        for (flat, _) in self.mask.iter().enumerate().filter(|(_, &m)| m) {
            count += 1;
            let mut rest = flat;
            for axis in (0..d).rev() {
                let i = rest % shape[axis];
                rest /= shape[axis];
                lo[axis] = lo[axis].min(i);
                hi[axis] = hi[axis].max(i);
            }
        }
        if count == 0 {
            return None;
        }
        let bbox: usize = lo.iter().zip(&hi).map(|(l, h)| h - l + 1).product();
        Some(count as f64 / bbox as f64)
    }
}

pub fn safe_set(result: &RiskResult, r: f64) -> SafeSet {
    SafeSet {
        alpha: result.alpha,
        r,
        mask: result.v_star.iter().map(|&v| v <= r).collect(),
    }
}

/// `sup_x |V*_{alpha,N'}(x) - V*_{alpha,N}(x)|`.
pub fn gamma_criterion(earlier: &RiskResult, later: &RiskResult) -> Result<f64> {
    if earlier.len() != later.len() {
        return Err(Error::domain(format!(
            "risk tensors over different grids ({} vs {} nodes)",
            earlier.len(),
            later.len()
        )));
    }
    if earlier.alpha != later.alpha {
        return Err(Error::domain(format!(
            "risk tensors for different alphas ({} vs {})",
            earlier.alpha, later.alpha
        )));
    }
    Ok(earlier
        .v_star
        .iter()
        .zip(&later.v_star)
        .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaOptions {
    /// Distance `N - N'` between compared checkpoints.
    pub stride: usize,
    /// Stop once every alpha has `gamma_alpha(N - stride, N) <= threshold`.
    pub threshold: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaRecord {
    pub earlier: usize,
    pub later: usize,
    /// One value per alpha, in the order the alphas were given.
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: usize,
    pub results: Vec<RiskResult>,
}

#[derive(Debug, Clone)]
pub struct GammaRun {
    pub alphas: Vec<f64>,
    /// Iteration count `N` at which the criterion was first met.
    pub stopped_at: Option<usize>,
    pub history: Vec<GammaRecord>,
    /// `V*_alpha` estimates at every multiple of the stride, starting from 0.
    pub checkpoints: Vec<Checkpoint>,
    /// Grids after the final sweep with their greedy selectors. The reports
    /// are never marked converged since no inner tolerance applies.
    pub solutions: Vec<ViSolution>,
}

impl GammaRun {
    pub fn checkpoint(&self, iteration: usize) -> Option<&Checkpoint> {
        self.checkpoints.iter().find(|c| c.iteration == iteration)
    }
}

/// Runs all `s` in lockstep and evaluates `V*_alpha` from the iterates
/// `v_N^s` every `stride` sweeps, stopping on the gamma criterion.
pub fn solve_with_gamma_stopping(
    model: &MdpModel,
    s_values: &[f64],
    alphas: &[f64],
    opts: &GammaOptions,
) -> Result<GammaRun> {
    validate_s_values(s_values, model.cost_bound())?;
    for &a in alphas {
        check_alpha(a, true)?;
    }
    if opts.stride == 0 {
        return Err(Error::domain("gamma stride must be positive"));
    }
    let layout = model.layout();
    let op = BellmanOperator::new(model);
    let mut iters: Vec<ValueIteration<'_>> = s_values.iter().map(|&s| op.iterate(s, model)).collect();

    let evaluate = |iters: &[ValueIteration<'_>]| -> Result<Vec<RiskResult>> {
        let slices: Vec<Vec<f64>> = iters.iter().map(|it| it.grid().slice_at_z0()).collect();
        alphas
            .iter()
            .map(|&a| v_alpha_from_slices(&layout, s_values, &slices, a))
            .collect()
    };

    let mut checkpoints = vec![Checkpoint {
        iteration: 0,
        results: evaluate(&iters)?,
    }];
    let mut history = Vec::new();
    let mut stopped_at = None;
    let mut n = 0;
    while n < opts.max_iter {
        let sweeps = opts.stride.min(opts.max_iter - n);
        iters.par_iter_mut().try_for_each(|it| -> Result<()> {
            for _ in 0..sweeps {
                it.step()?;
            }
            Ok(())
        })?;
        n += sweeps;
        let results = evaluate(&iters)?;
        let prev = checkpoints.last().expect("initial checkpoint");
        let gamma = prev
            .results
            .iter()
            .zip(&results)
            .map(|(a, b)| gamma_criterion(a, b))
            .collect::<Result<Vec<_>>>()?;
        let met = sweeps == opts.stride && gamma.iter().all(|&g| g <= opts.threshold);
        history.push(GammaRecord {
            earlier: prev.iteration,
            later: n,
            gamma,
        });
        checkpoints.push(Checkpoint { iteration: n, results });
        if met {
            stopped_at = Some(n);
            break;
        }
    }
    Ok(GammaRun {
        alphas: alphas.to_vec(),
        stopped_at,
        history,
        checkpoints,
        solutions: iters
            .into_par_iter()
            .map(|it| {
                let (value, history) = it.into_parts();
                let (next, selector) = op.backup(&value);
                let residual = next.sup_distance(&value);
                ViSolution {
                    value,
                    selector,
                    report: ConvergenceReport {
                        iterations_run: history.len(),
                        sup_diff_history: history,
                        converged: false,
                        residual,
                    },
                }
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(v: &[f64]) -> EmpiricalDistribution {
        EmpiricalDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn var_examples() {
        assert_eq!(empirical_var(&dist(&[4.0, 1.0, 3.0, 2.0]), 0.5).unwrap(), 2.0);
        assert_eq!(empirical_var(&dist(&[0.0, 10.0]), 0.25).unwrap(), 10.0);
        for a in [0.01, 0.3, 0.99] {
            assert_eq!(empirical_var(&dist(&[1.7; 5]), a).unwrap(), 1.7);
        }
        assert!(empirical_var(&dist(&[]), 0.5).is_err());
        assert!(empirical_var(&dist(&[1.0]), 1.0).is_err());
    }

    #[test]
    fn cvar_examples() {
        assert!((empirical_cvar(&dist(&[1.0, 2.0, 3.0, 4.0]), 0.5).unwrap() - 3.5).abs() < 1e-15);
        let d = dist(&[0.3, 1.1, 7.0, 2.5]);
        assert!((empirical_cvar(&d, 1.0).unwrap() - d.mean()).abs() < 1e-14);
        assert_eq!(empirical_cvar(&dist(&[2.5; 4]), 0.1).unwrap(), 2.5);
        assert!(empirical_cvar(&dist(&[]), 0.5).is_err());
        assert!(empirical_cvar(&d, 0.0).is_err());
        assert!(empirical_cvar(&d, 1.5).is_err());
    }

    #[test]
    fn weighted_cvar_matches_repeated_samples() {
        let w = weighted_cvar(&[(1.0, 0.25), (3.0, 0.5), (0.0, 0.25)], 0.3).unwrap();
        let e = empirical_cvar(&dist(&[0.0, 1.0, 3.0, 3.0]), 0.3).unwrap();
        assert!((w - e).abs() < 1e-14);
    }

    #[test]
    fn lowest_minimizer_wins_ties() {
        // s + v/alpha with alpha = 1: 0 + 1 = 1, 0.5 + 0.5 = 1
        let (v, i) = minimize_over_s(&[0.0, 0.5, 1.0], 1.0, |i| [1.0, 0.5, 0.25][i]);
        assert_eq!((v, i), (1.0, 0));
    }

    #[test]
    fn s_grid_endpoints() {
        let g = s_grid(0.0, 2.0, 21);
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[20], 2.0);
        assert!((g[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rectangularity_of_box_and_l_shape() {
        // 3 x 3 grid
        let boxed = SafeSet { alpha: 0.1, r: 0.0, mask: vec![true, true, false, true, true, false, false, false, false] };
        assert_eq!(boxed.rectangularity(&[3, 3]), Some(1.0));
        let ell = SafeSet { alpha: 0.1, r: 0.0, mask: vec![true, false, false, true, false, false, true, true, true] };
        assert!((ell.rectangularity(&[3, 3]).unwrap() - 5.0 / 9.0).abs() < 1e-15);
        let empty = SafeSet { alpha: 0.1, r: 0.0, mask: vec![false; 9] };
        assert_eq!(empty.rectangularity(&[3, 3]), None);
    }

    #[test]
    fn gamma_of_identical_is_zero_and_mismatch_errors() {
        let r = RiskResult {
            alpha: 0.05,
            v_star: vec![0.1, 0.5],
            s_star: vec![0.0, 0.0],
            s_star_index: vec![0, 0],
            quantization_bound: 0.0,
            cost_bound: 1.0,
            cost_shift: 0.0,
        };
        assert_eq!(gamma_criterion(&r, &r).unwrap(), 0.0);
        let mut other = r.clone();
        other.v_star.push(0.0);
        assert!(gamma_criterion(&r, &other).is_err());
        let mut other = r.clone();
        other.alpha = 0.5;
        assert!(gamma_criterion(&r, &other).is_err());
    }
}
