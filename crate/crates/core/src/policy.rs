//! Greedy selectors as deployable controllers, and the optimal precommitment
//! policy obtained by committing to `s*` for a given initial state and alpha.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GridLayout;
use crate::risk::{RiskResult, VsFamily};
use crate::vi::SelectorTable;

/// Maps an augmented state `(x, z)` to a control value.
pub trait Controller: Sync {
    fn control(&self, x: &[f64], z: f64) -> Result<f64>;
}

/// Applies the same control everywhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantControl(pub f64);

impl Controller for ConstantControl {
    fn control(&self, _x: &[f64], _z: f64) -> Result<f64> {
        Ok(self.0)
    }
}

/// A stationary selector table read by nearest-node lookup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyPolicy {
    pub selector: SelectorTable,
    pub layout: GridLayout,
}

impl GreedyPolicy {
    pub fn new(selector: SelectorTable, layout: GridLayout) -> Result<Self> {
        if selector.n_states() != layout.state.len() || selector.nz() != layout.z.len() {
            return Err(Error::domain("selector table does not match the grid layout"));
        }
        Ok(Self { selector, layout })
    }

    /// Node indices `(state, z)` nearest to `(x, z)`.
    pub fn nearest_node(&self, x: &[f64], z: f64) -> Result<(usize, usize)> {
        if !self.layout.state.contains(x) {
            return Err(Error::domain(format!("state {x:?} outside the grid box")));
        }
        if !self.layout.z.contains(z) {
            return Err(Error::domain(format!(
                "running maximum {z} outside [0, {}]",
                self.layout.z.hi()
            )));
        }
        Ok((self.layout.state.nearest(x), self.layout.z.nearest(z)))
    }

    pub fn control_index(&self, x: &[f64], z: f64) -> Result<usize> {
        let (k, iz) = self.nearest_node(x, z)?;
        Ok(self.selector.get(k, iz))
    }
}

impl Controller for GreedyPolicy {
    fn control(&self, x: &[f64], z: f64) -> Result<f64> {
        Ok(self.layout.control.node(self.control_index(x, z)?))
    }
}

/// The selector for `s = s*_{alpha, x0}`, deployed from `(x0, 0)`.
///
/// Optimality holds for the committed initial state only; the policy can be
/// run from other states but then carries no guarantee.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecommitmentPolicy {
    pub alpha: f64,
    pub x0: Vec<f64>,
    pub s_star: f64,
    pub s_index: usize,
    /// `V*_alpha(x0)` at the nearest state node.
    pub v_star: f64,
    pub z_init: f64,
    pub greedy: GreedyPolicy,
}

impl PrecommitmentPolicy {
    /// `kappa^{s*}(x, z)` by nearest-node lookup.
    pub fn act(&self, x: &[f64], z: f64) -> Result<f64> {
        self.greedy.control(x, z)
    }
}

impl Controller for PrecommitmentPolicy {
    fn control(&self, x: &[f64], z: f64) -> Result<f64> {
        self.act(x, z)
    }
}

/// Reads `s*` at the state node nearest to `x0` and binds the matching selector.
pub fn synthesize(family: &VsFamily, result: &RiskResult, x0: &[f64]) -> Result<PrecommitmentPolicy> {
    let layout = family.layout();
    if !layout.state.contains(x0) {
        return Err(Error::domain(format!("initial state {x0:?} outside the grid box")));
    }
    if result.len() != layout.state.len() {
        return Err(Error::domain("risk result does not match the family's grid"));
    }
    let k = layout.state.nearest(x0);
    let s_index = result.s_star_index[k];
    if s_index >= family.s_values().len() || family.s_values()[s_index] != result.s_star[k] {
        return Err(Error::Consistency(format!(
            "no value grid for s* = {} in the family",
            result.s_star[k]
        )));
    }
    let selector = family.solution(s_index).selector.clone();
    Ok(PrecommitmentPolicy {
        alpha: result.alpha,
        x0: x0.to_vec(),
        s_star: result.s_star[k],
        s_index,
        v_star: result.v_star[k],
        z_init: 0.0,
        greedy: GreedyPolicy::new(selector, layout.clone())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridAxis, StateGrid};

    fn layout() -> GridLayout {
        GridLayout {
            state: StateGrid::new(vec![GridAxis::new(0.0, 1.0, 3).unwrap()]).unwrap(),
            z: GridAxis::new(0.0, 1.0, 3).unwrap(),
            control: GridAxis::new(0.0, 1.0, 5).unwrap(),
            cost_bound: 1.0,
            cost_shift: 0.0,
        }
    }

    fn greedy() -> GreedyPolicy {
        let sel = SelectorTable::from_indices((0..9).map(|i| (i % 5) as u32).collect(), 3, 3, 0.0).unwrap();
        GreedyPolicy::new(sel, layout()).unwrap()
    }

    #[test]
    fn on_grid_lookup_returns_stored_control() {
        let g = greedy();
        let ctrl = layout().control;
        for k in 0..3 {
            for iz in 0..3 {
                let want = ctrl.node(g.selector.get(k, iz));
                let got = g.control(&[k as f64 * 0.5], iz as f64 * 0.5).unwrap();
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn small_z_perturbation_keeps_control() {
        let g = greedy();
        let base = g.control(&[0.5], 0.5).unwrap();
        for dz in [-0.24, -0.1, 0.1, 0.24] {
            assert_eq!(g.control(&[0.5], 0.5 + dz).unwrap(), base);
        }
    }

    #[test]
    fn out_of_range_is_domain_error() {
        let g = greedy();
        assert!(matches!(g.control(&[1.5], 0.0), Err(Error::Domain(_))));
        assert!(matches!(g.control(&[0.5], 1.5), Err(Error::Domain(_))));
        assert!(matches!(g.control(&[0.5], -0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn stationary() {
        let g = greedy();
        let first = g.control(&[0.3], 0.7).unwrap();
        for _ in 0..10 {
            assert_eq!(g.control(&[0.3], 0.7).unwrap(), first);
        }
    }
}
