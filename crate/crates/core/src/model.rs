//! The stochastic control system, its gridded representation, and the
//! augmented `(x, z)` step where `z` tracks the running maximum stage cost.

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridAxis, StateGrid};

/// Tolerance on the total mass of a discrete distribution.
pub const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub value: Vec<f64>,
    pub prob: f64,
}

/// Finitely supported disturbance law `p(.|x,u)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteDistribution {
    atoms: Vec<Atom>,
}

impl DiscreteDistribution {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::validation("atoms", "distribution has no atoms"));
        }
        for (i, a) in atoms.iter().enumerate() {
            if !(a.prob.is_finite() && a.prob >= 0.0) {
                return Err(Error::validation(
                    format!("atoms[{i}].prob"),
                    format!("probability must be finite and nonnegative, got {}", a.prob),
                ));
            }
            if a.value.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("atoms[{i}].value"), "non-finite value"));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.prob).sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::validation(
                "atoms[*].prob",
                format!("probabilities sum to {total}, expected 1"),
            ));
        }
        Ok(Self { atoms })
    }

    /// Point mass at `value`.
    pub fn dirac(value: Vec<f64>) -> Self {
        Self {
            atoms: vec![Atom { value, prob: 1.0 }],
        }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn mean(&self, component: usize) -> f64 {
        self.atoms.iter().map(|a| a.prob * a.value[component]).sum()
    }

    pub fn variance(&self, component: usize) -> f64 {
        let m = self.mean(component);
        self.atoms
            .iter()
            .map(|a| a.prob * (a.value[component] - m).powi(2))
            .sum()
    }

    /// Inverse-CDF draw from a uniform `u01 in [0, 1)`.
    pub fn sample_index(&self, u01: f64) -> usize {
        let mut acc = 0.0;
        for (i, a) in self.atoms.iter().enumerate() {
            acc += a.prob;
            if u01 < acc {
                return i;
            }
        }
        // round-off in the cumulative sum: fall back to the last atom with mass
        self.atoms.iter().rposition(|a| a.prob > 0.0).unwrap_or(0)
    }
}

/// The primitives `f`, `c` and `p` of a control system with scalar control.
pub trait ControlSystem: Send + Sync {
    /// Writes `f(x, u, w)` into `next`. The model clamps the result to the state box.
    fn dynamics(&self, x: &[f64], u: f64, w: &[f64], next: &mut [f64]);

    fn stage_cost(&self, x: &[f64], u: f64) -> f64;

    fn disturbance(&self, x: &[f64], u: f64) -> Cow<'_, DiscreteDistribution>;
}

type DynamicsFn = dyn Fn(&[f64], f64, &[f64], &mut [f64]) + Send + Sync;
type CostFn = dyn Fn(&[f64], f64) -> f64 + Send + Sync;

/// A [`ControlSystem`] assembled from closures with a state-independent disturbance.
pub struct FnSystem {
    dynamics: Box<DynamicsFn>,
    cost: Box<CostFn>,
    disturbance: DiscreteDistribution,
}

impl FnSystem {
    pub fn new(
        dynamics: impl Fn(&[f64], f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        cost: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        disturbance: DiscreteDistribution,
    ) -> Self {
        Self {
            dynamics: Box::new(dynamics),
            cost: Box::new(cost),
            disturbance,
        }
    }
}

impl ControlSystem for FnSystem {
    fn dynamics(&self, x: &[f64], u: f64, w: &[f64], next: &mut [f64]) {
        (self.dynamics)(x, u, w, next)
    }

    fn stage_cost(&self, x: &[f64], u: f64) -> f64 {
        (self.cost)(x, u)
    }

    fn disturbance(&self, _x: &[f64], _u: f64) -> Cow<'_, DiscreteDistribution> {
        Cow::Borrowed(&self.disturbance)
    }
}

/// Adds a constant to the stage cost of the wrapped system.
struct ShiftedCost {
    inner: Arc<dyn ControlSystem>,
    shift: f64,
}

impl ControlSystem for ShiftedCost {
    fn dynamics(&self, x: &[f64], u: f64, w: &[f64], next: &mut [f64]) {
        self.inner.dynamics(x, u, w, next)
    }

    fn stage_cost(&self, x: &[f64], u: f64) -> f64 {
        self.inner.stage_cost(x, u) + self.shift
    }

    fn disturbance(&self, x: &[f64], u: f64) -> Cow<'_, DiscreteDistribution> {
        self.inner.disturbance(x, u)
    }
}

/// `(x, z)`: a physical state paired with the running maximum of stage costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedState {
    pub x: Vec<f64>,
    pub z: f64,
}

impl AugmentedState {
    pub fn initial(x: Vec<f64>) -> Self {
        Self { x, z: 0.0 }
    }
}

/// The grids of a model without its dynamics; enough to interpret persisted
/// value grids, selectors, and risk tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLayout {
    pub state: StateGrid,
    pub z: GridAxis,
    pub control: GridAxis,
    pub cost_bound: f64,
    pub cost_shift: f64,
}

/// A validated control system on a gridded augmented space `S x Z` with
/// controls on a uniform grid over `C`.
#[derive(Clone)]
pub struct MdpModel {
    state: StateGrid,
    z_axis: GridAxis,
    control_axis: GridAxis,
    cost_bound: f64,
    cost_shift: f64,
    identity: String,
    system: Arc<dyn ControlSystem>,
}

impl fmt::Debug for MdpModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MdpModel")
            .field("state", &self.state)
            .field("z_axis", &self.z_axis)
            .field("control_axis", &self.control_axis)
            .field("cost_bound", &self.cost_bound)
            .field("cost_shift", &self.cost_shift)
            .field("identity", &self.identity)
            .finish_non_exhaustive()
    }
}

pub struct ModelBuilder {
    state_axes: Vec<GridAxis>,
    z_nodes: Option<usize>,
    control_axis: Option<GridAxis>,
    cost_bound: Option<f64>,
    cost_shift: f64,
    identity: String,
    system: Arc<dyn ControlSystem>,
}

impl ModelBuilder {
    pub fn state_axis(mut self, axis: GridAxis) -> Self {
        self.state_axes.push(axis);
        self
    }

    pub fn state_axes(mut self, axes: impl IntoIterator<Item = GridAxis>) -> Self {
        self.state_axes.extend(axes);
        self
    }

    /// Number of nodes on the running-maximum axis `[0, cost_bound]`.
    pub fn z_nodes(mut self, n: usize) -> Self {
        self.z_nodes = Some(n);
        self
    }

    pub fn control_axis(mut self, axis: GridAxis) -> Self {
        self.control_axis = Some(axis);
        self
    }

    pub fn cost_bound(mut self, bound: f64) -> Self {
        self.cost_bound = Some(bound);
        self
    }

    /// Solve with `c + b` in place of `c`; the bound grows by `b` as well.
    pub fn cost_shift(mut self, b: f64) -> Self {
        self.cost_shift = b;
        self
    }

    pub fn identity(mut self, id: impl Into<String>) -> Self {
        self.identity = id.into();
        self
    }

    pub fn build(self) -> Result<MdpModel> {
        let state = StateGrid::new(self.state_axes)
            .map_err(|e| Error::validation("state_grid", e.to_string()))?;
        let control_axis = self
            .control_axis
            .ok_or_else(|| Error::validation("control_grid", "missing control grid"))?;
        let base_bound = self
            .cost_bound
            .ok_or_else(|| Error::validation("cost_bound", "missing cost bound"))?;
        if !(base_bound.is_finite() && base_bound > 0.0) {
            return Err(Error::validation(
                "cost_bound",
                format!("cost bound must be positive and finite, got {base_bound}"),
            ));
        }
        let shift = self.cost_shift;
        if !(shift.is_finite() && shift >= 0.0) {
            return Err(Error::validation("shift", format!("shift must be nonnegative, got {shift}")));
        }
        let cost_bound = base_bound + shift;
        let z_axis = GridAxis::new(0.0, cost_bound, self.z_nodes.unwrap_or(21))
            .map_err(|e| Error::validation("z_grid", e.to_string()))?;
        let system: Arc<dyn ControlSystem> = if shift > 0.0 {
            Arc::new(ShiftedCost {
                inner: self.system,
                shift,
            })
        } else {
            self.system
        };
        let model = MdpModel {
            state,
            z_axis,
            control_axis,
            cost_bound,
            cost_shift: shift,
            identity: self.identity,
            system,
        };
        model.scan_costs()?;
        Ok(model)
    }
}

impl MdpModel {
    pub fn builder(system: impl ControlSystem + 'static) -> ModelBuilder {
        Self::builder_arc(Arc::new(system))
    }

    pub fn builder_arc(system: Arc<dyn ControlSystem>) -> ModelBuilder {
        ModelBuilder {
            state_axes: Vec::new(),
            z_nodes: None,
            control_axis: None,
            cost_bound: None,
            cost_shift: 0.0,
            identity: String::from("unnamed"),
            system,
        }
    }

    /// Exhaustive check that `c` lies in `[0, cost_bound]` at every state and control node.
    fn scan_costs(&self) -> Result<()> {
        for k in 0..self.state.len() {
            let x = self.state.node(k);
            for u in self.control_axis.nodes() {
                let c = self.system.stage_cost(&x, u);
                if c.is_nan() {
                    return Err(Error::validation("cost", format!("cost is NaN at x={x:?}, u={u}")));
                }
                if c < 0.0 {
                    return Err(Error::validation(
                        "cost",
                        format!(
                            "negative stage cost {c} at x={x:?}, u={u}; costs must be nonnegative. \
                             If c is bounded below by -b, solve with the cost shift b (c + b) \
                             and subtract b from the resulting risk values"
                        ),
                    ));
                }
                if c > self.cost_bound * (1.0 + 1e-12) {
                    return Err(Error::validation(
                        "cost",
                        format!("stage cost {c} at x={x:?}, u={u} exceeds cost_bound {}", self.cost_bound),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn state_grid(&self) -> &StateGrid {
        &self.state
    }

    pub fn z_axis(&self) -> &GridAxis {
        &self.z_axis
    }

    pub fn control_axis(&self) -> &GridAxis {
        &self.control_axis
    }

    pub fn cost_bound(&self) -> f64 {
        self.cost_bound
    }

    pub fn cost_shift(&self) -> f64 {
        self.cost_shift
    }

    pub fn identity(&self) -> &str {
        &self.identity
    }

    pub fn layout(&self) -> GridLayout {
        GridLayout {
            state: self.state.clone(),
            z: self.z_axis,
            control: self.control_axis,
            cost_bound: self.cost_bound,
            cost_shift: self.cost_shift,
        }
    }

    pub fn system(&self) -> &dyn ControlSystem {
        self.system.as_ref()
    }

    fn check_state(&self, x: &[f64]) -> Result<()> {
        if !self.state.contains(x) {
            return Err(Error::domain(format!("state {x:?} outside the state grid box")));
        }
        Ok(())
    }

    fn check_control(&self, u: f64) -> Result<()> {
        if !self.control_axis.contains(u) {
            return Err(Error::domain(format!(
                "control {u} outside [{}, {}]",
                self.control_axis.lo(),
                self.control_axis.hi()
            )));
        }
        Ok(())
    }

    /// `c(x, u)`, checked against the state box and the control range.
    pub fn evaluate_cost(&self, x: &[f64], u: f64) -> Result<f64> {
        self.check_state(x)?;
        self.check_control(u)?;
        Ok(self.system.stage_cost(x, u))
    }

    /// `f(x, u, w)` clamped componentwise to the state box.
    pub fn next_state(&self, x: &[f64], u: f64, w: &[f64], next: &mut [f64]) {
        self.system.dynamics(x, u, w, next);
        self.state.clamp_in_place(next);
    }

    pub fn disturbance(&self, x: &[f64], u: f64) -> Cow<'_, DiscreteDistribution> {
        self.system.disturbance(x, u)
    }

    /// One transition of the augmented system: `(f(x,u,w), max{z, c(x,u)})`.
    pub fn augmented_step(&self, s: &AugmentedState, u: f64, w: &[f64]) -> Result<AugmentedState> {
        let c = self.evaluate_cost(&s.x, u)?;
        if !(s.z >= 0.0 && s.z <= self.cost_bound * (1.0 + 1e-12)) {
            return Err(Error::domain(format!("running maximum {} outside [0, {}]", s.z, self.cost_bound)));
        }
        let mut next = vec![0.0; s.x.len()];
        self.next_state(&s.x, u, w, &mut next);
        Ok(AugmentedState {
            x: next,
            z: s.z.max(c),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_model(cost: f64) -> MdpModel {
        let sys = FnSystem::new(
            |x, _u, _w, next| next.copy_from_slice(x),
            move |_x, _u| cost,
            DiscreteDistribution::dirac(vec![0.0]),
        );
        MdpModel::builder(sys)
            .state_axis(GridAxis::new(0.0, 1.0, 2).unwrap())
            .control_axis(GridAxis::new(0.0, 1.0, 2).unwrap())
            .cost_bound(1.0)
            .z_nodes(11)
            .build()
            .unwrap()
    }

    #[test]
    fn distribution_rejects_bad_mass() {
        let atoms = vec![
            Atom { value: vec![0.0], prob: 0.49 },
            Atom { value: vec![1.0], prob: 0.49 },
        ];
        let err = DiscreteDistribution::new(atoms).unwrap_err();
        assert!(matches!(err, Error::Validation { .. }));
        assert!(DiscreteDistribution::new(vec![Atom { value: vec![0.0], prob: -0.1 }]).is_err());
        assert!(DiscreteDistribution::new(vec![]).is_err());
    }

    #[test]
    fn sample_index_follows_cdf() {
        let d = DiscreteDistribution::new(vec![
            Atom { value: vec![0.0], prob: 0.25 },
            Atom { value: vec![1.0], prob: 0.0 },
            Atom { value: vec![2.0], prob: 0.75 },
        ])
        .unwrap();
        assert_eq!(d.sample_index(0.0), 0);
        assert_eq!(d.sample_index(0.2499), 0);
        assert_eq!(d.sample_index(0.25), 2);
        assert_eq!(d.sample_index(0.999_999), 2);
        assert_eq!(d.sample_index(1.0), 2);
    }

    #[test]
    fn running_max_updates() {
        let m = unit_model(0.1);
        let s = AugmentedState { x: vec![0.5], z: 0.4 };
        let n = m.augmented_step(&s, 0.0, &[0.0]).unwrap();
        assert_eq!(n.z, 0.4);
        assert_eq!(n.x, vec![0.5]);

        let m = unit_model(0.7);
        let n = m.augmented_step(&AugmentedState::initial(vec![0.5]), 1.0, &[0.0]).unwrap();
        assert_eq!(n.z, 0.7);
        assert_eq!(n.x, vec![0.5]);
    }

    #[test]
    fn out_of_range_is_domain_error() {
        let m = unit_model(0.1);
        assert!(matches!(m.evaluate_cost(&[1.5], 0.0), Err(Error::Domain(_))));
        assert!(matches!(m.evaluate_cost(&[0.5], -0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn dynamics_are_clamped() {
        let sys = FnSystem::new(
            |x, _u, w, next| next[0] = x[0] + w[0],
            |_x, _u| 0.0,
            DiscreteDistribution::dirac(vec![5.0]),
        );
        let m = MdpModel::builder(sys)
            .state_axis(GridAxis::new(0.0, 1.0, 3).unwrap())
            .control_axis(GridAxis::new(0.0, 1.0, 2).unwrap())
            .cost_bound(1.0)
            .build()
            .unwrap();
        let n = m.augmented_step(&AugmentedState::initial(vec![0.5]), 0.0, &[5.0]).unwrap();
        assert_eq!(n.x, vec![1.0]);
    }

    #[test]
    fn negative_cost_mentions_shift() {
        let sys = FnSystem::new(
            |x, _u, _w, next| next.copy_from_slice(x),
            |x, _u| x[0] - 0.5,
            DiscreteDistribution::dirac(vec![0.0]),
        );
        let err = MdpModel::builder(sys)
            .state_axis(GridAxis::new(0.0, 1.0, 3).unwrap())
            .control_axis(GridAxis::new(0.0, 1.0, 2).unwrap())
            .cost_bound(1.0)
            .build()
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("`cost`") && msg.contains("shift"), "{msg}");
    }

    #[test]
    fn shift_adds_constant_exactly() {
        let base = |x: &[f64], u: f64| (0.3 * x[0] + 0.2 * u).min(1.0);
        let build = |b: f64| {
            let sys = FnSystem::new(
                |x, _u, _w, next| next.copy_from_slice(x),
                base,
                DiscreteDistribution::dirac(vec![0.0]),
            );
            MdpModel::builder(sys)
                .state_axis(GridAxis::new(0.0, 2.0, 5).unwrap())
                .control_axis(GridAxis::new(0.0, 1.0, 3).unwrap())
                .cost_bound(1.0)
                .cost_shift(b)
                .build()
                .unwrap()
        };
        let plain = build(0.0);
        let shifted = build(0.5);
        assert_eq!(shifted.cost_bound(), 1.5);
        assert_eq!(shifted.z_axis().hi(), 1.5);
        for k in 0..plain.state_grid().len() {
            let x = plain.state_grid().node(k);
            for u in plain.control_axis().nodes() {
                let c = plain.evaluate_cost(&x, u).unwrap();
                assert_eq!(shifted.evaluate_cost(&x, u).unwrap(), c + 0.5);
            }
        }
    }
}
