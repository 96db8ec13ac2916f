//! Two tanks joined by a controlled valve, fed by random surface runoff.
//!
//! State `x = (x1, x2)` holds the water levels (ft) of tank 1 and tank 2.
//! The control `u in [0, 1]` is the valve position. Tank 1 receives a share of
//! the runoff and empties only through the valve into tank 2; tank 2 receives
//! the remaining runoff plus the valve flow and drains into the storm sewer.
//! Water above `k1` or `k2` spills into the combined sewer, which is what the
//! stage cost `max{x1 - k1, x2 - k2, 0}` penalizes.
//!
//! The hydraulic coefficients below are a self-contained mass-balance model,
//! not a calibrated reproduction of any particular site. All of them are
//! exposed through [`StormwaterParams`] and the model config.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridAxis;
use crate::model::{Atom, ControlSystem, DiscreteDistribution, MdpModel};

/// Two-point runoff law: a frequent high value and a rare low value (a dry
/// step), with the first two moments pinned to `mean` and `variance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunoffSpec {
    /// cfs
    pub mean: f64,
    /// cfs^2
    pub variance: f64,
    /// Probability `p` of the high atom, in `(0, 1)`.
    pub high_prob: f64,
}

impl Default for RunoffSpec {
    fn default() -> Self {
        Self {
            mean: 2.0,
            variance: 0.3,
            high_prob: 0.9,
        }
    }
}

impl RunoffSpec {
    /// Atoms `mean + sd * sqrt((1 - p) / p)` with mass `p` and
    /// `mean - sd * sqrt(p / (1 - p))` with mass `1 - p`.
    pub fn distribution(&self) -> Result<DiscreteDistribution> {
        let p = self.high_prob;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::validation(
                "disturbance.runoff.high_prob",
                format!("must lie in (0, 1), got {p}"),
            ));
        }
        if !(self.variance >= 0.0 && self.variance.is_finite()) {
            return Err(Error::validation("disturbance.runoff.variance", "variance must be nonnegative"));
        }
        if !self.mean.is_finite() {
            return Err(Error::validation("disturbance.runoff.mean", "mean must be finite"));
        }
        let sd = self.variance.sqrt();
        let hi = self.mean + sd * ((1.0 - p) / p).sqrt();
        let lo = self.mean - sd * (p / (1.0 - p)).sqrt();
        if lo < 0.0 {
            return Err(Error::validation(
                "disturbance.runoff",
                format!("low runoff atom {lo} would be negative"),
            ));
        }
        DiscreteDistribution::new(vec![
            Atom { value: vec![lo], prob: 1.0 - p },
            Atom { value: vec![hi], prob: p },
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StormwaterParams {
    /// Spill level of tank 1 (ft).
    pub k1: f64,
    /// Spill level of tank 2 (ft).
    pub k2: f64,
    /// Physical height of tank 1; the state box is `[0, x1_max] x [0, x2_max]`.
    pub x1_max: f64,
    pub x2_max: f64,
    /// Surface areas (ft^2).
    pub area1: f64,
    pub area2: f64,
    /// Valve flow at `u = 1` is `valve_coeff * sqrt(x1)` (cfs).
    pub valve_coeff: f64,
    /// Sewer drain flow of tank 2 is `drain_coeff * sqrt(x2)` (cfs).
    pub drain_coeff: f64,
    /// Fraction of the runoff that lands in tank 1.
    pub runoff_split: f64,
    /// Time step (s).
    pub dt: f64,
}

impl Default for StormwaterParams {
    fn default() -> Self {
        Self {
            k1: 3.0,
            k2: 4.0,
            x1_max: 5.0,
            x2_max: 6.0,
            area1: 30_000.0,
            area2: 30_000.0,
            valve_coeff: 1.5,
            drain_coeff: 1.02,
            runoff_split: 0.5,
            dt: 12_000.0,
        }
    }
}

impl StormwaterParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dynamics.params.x1_max", self.x1_max),
            ("dynamics.params.x2_max", self.x2_max),
            ("dynamics.params.area1", self.area1),
            ("dynamics.params.area2", self.area2),
            ("dynamics.params.dt", self.dt),
        ];
        for (path, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(path, format!("must be positive, got {v}")));
            }
        }
        for (path, v) in [
            ("dynamics.params.valve_coeff", self.valve_coeff),
            ("dynamics.params.drain_coeff", self.drain_coeff),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(path, format!("must be nonnegative, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.runoff_split) {
            return Err(Error::validation(
                "dynamics.params.runoff_split",
                format!("must lie in [0, 1], got {}", self.runoff_split),
            ));
        }
        if !(self.k1 >= 0.0 && self.k1 < self.x1_max && self.k2 >= 0.0 && self.k2 < self.x2_max) {
            return Err(Error::validation("dynamics.params", "spill levels must lie inside the tanks"));
        }
        Ok(())
    }

    /// Largest possible overflow over the state box.
    pub fn cost_bound(&self) -> f64 {
        (self.x1_max - self.k1).max(self.x2_max - self.k2)
    }

    pub fn valve_flow(&self, x1: f64, u: f64) -> f64 {
        self.valve_coeff * u * x1.max(0.0).sqrt()
    }

    pub fn drain_flow(&self, x2: f64) -> f64 {
        self.drain_coeff * x2.max(0.0).sqrt()
    }

    /// One explicit Euler step of the tank mass balance, before box clamping.
    pub fn euler_step(&self, x: &[f64], u: f64, runoff: f64) -> [f64; 2] {
        let q_valve = self.valve_flow(x[0], u);
        let q_drain = self.drain_flow(x[1]);
        let inflow1 = self.runoff_split * runoff;
        let inflow2 = (1.0 - self.runoff_split) * runoff;
        [
            x[0] + self.dt / self.area1 * (inflow1 - q_valve),
            x[1] + self.dt / self.area2 * (inflow2 + q_valve - q_drain),
        ]
    }

    pub fn overflow_cost(&self, x: &[f64]) -> f64 {
        (x[0] - self.k1).max(x[1] - self.k2).max(0.0)
    }
}

/// The two-tank system as a [`ControlSystem`].
#[derive(Debug, Clone)]
pub struct Stormwater {
    params: StormwaterParams,
    runoff: DiscreteDistribution,
}

impl Stormwater {
    pub fn new(params: StormwaterParams, runoff: RunoffSpec) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            runoff: runoff.distribution()?,
        })
    }

    pub fn with_distribution(params: StormwaterParams, runoff: DiscreteDistribution) -> Result<Self> {
        params.validate()?;
        if runoff.atoms().iter().any(|a| a.value.len() != 1) {
            return Err(Error::validation("disturbance.atoms", "runoff atoms must be scalar"));
        }
        Ok(Self { params, runoff })
    }

    pub fn params(&self) -> &StormwaterParams {
        &self.params
    }

    pub fn runoff(&self) -> &DiscreteDistribution {
        &self.runoff
    }
}

impl ControlSystem for Stormwater {
    fn dynamics(&self, x: &[f64], u: f64, w: &[f64], next: &mut [f64]) {
        let [a, b] = self.params.euler_step(x, u, w[0]);
        next[0] = a.clamp(0.0, self.params.x1_max);
        next[1] = b.clamp(0.0, self.params.x2_max);
    }

    fn stage_cost(&self, x: &[f64], _u: f64) -> f64 {
        self.params.overflow_cost(x)
    }

    fn disturbance(&self, _x: &[f64], _u: f64) -> Cow<'_, DiscreteDistribution> {
        Cow::Borrowed(&self.runoff)
    }
}

/// Node counts of a stormwater discretization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub x1: usize,
    pub x2: usize,
    pub z: usize,
    pub u: usize,
}

impl Resolution {
    /// 0.1 ft state spacing: 51 x 61 x 21 augmented nodes, 21 valve positions.
    pub const FULL: Resolution = Resolution { x1: 51, x2: 61, z: 21, u: 21 };
    /// 0.2 ft state spacing: 26 x 31 x 11 augmented nodes, 21 valve positions.
    pub const REDUCED: Resolution = Resolution { x1: 26, x2: 31, z: 11, u: 21 };
}

pub fn stormwater_model(params: StormwaterParams, runoff: RunoffSpec, res: Resolution) -> Result<MdpModel> {
    let sys = Stormwater::new(params, runoff)?;
    MdpModel::builder(sys)
        .state_axis(GridAxis::new(0.0, params.x1_max, res.x1)?)
        .state_axis(GridAxis::new(0.0, params.x2_max, res.x2)?)
        .control_axis(GridAxis::new(0.0, 1.0, res.u)?)
        .z_nodes(res.z)
        .cost_bound(params.cost_bound())
        .identity(format!("stormwater-builtin-{}x{}x{}x{}", res.x1, res.x2, res.z, res.u))
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys() -> Stormwater {
        Stormwater::new(StormwaterParams::default(), RunoffSpec::default()).unwrap()
    }

    #[test]
    fn overflow_cost_examples() {
        let s = sys();
        assert_eq!(s.stage_cost(&[3.5, 4.0], 0.3), 0.5);
        assert_eq!(s.stage_cost(&[2.0, 3.0], 1.0), 0.0);
        assert!((s.stage_cost(&[4.0, 5.9], 0.0) - 1.9).abs() < 1e-12);
    }

    #[test]
    fn runoff_moments() {
        for p in [0.1, 0.5, 0.9] {
            let d = RunoffSpec { high_prob: p, ..RunoffSpec::default() }.distribution().unwrap();
            assert!((d.mean(0) - 2.0).abs() < 1e-12);
            assert!((d.variance(0) - 0.3).abs() < 1e-12);
        }
        let d = RunoffSpec::default().distribution().unwrap();
        assert!((d.atoms()[0].value[0] - 0.356_8).abs() < 1e-4);
        assert!((d.atoms()[1].value[0] - 2.182_6).abs() < 1e-4);
        for p in [0.0, 1.0, 0.999] {
            assert!(RunoffSpec { high_prob: p, ..RunoffSpec::default() }.distribution().is_err());
        }
    }

    #[test]
    fn empty_tanks_stay_empty_without_runoff() {
        let s = sys();
        let mut next = [9.0; 2];
        for u in [0.0, 0.5, 1.0] {
            s.dynamics(&[0.0, 0.0], u, &[0.0], &mut next);
            assert_eq!(next, [0.0, 0.0]);
        }
    }

    #[test]
    fn closed_valve_only_fills_tank1() {
        let s = sys();
        let mut next = [0.0; 2];
        s.dynamics(&[2.0, 3.0], 0.0, &[1.5], &mut next);
        assert!(next[0] > 2.0);
    }

    #[test]
    fn euler_step_balances_mass() {
        let p = StormwaterParams::default();
        for (x, u, w) in [([2.0, 3.0], 0.4, 2.5), ([1.0, 1.0], 1.0, 1.45), ([4.2, 0.3], 0.0, 2.55)] {
            let next = p.euler_step(&x, u, w);
            let stored = p.area1 * (next[0] - x[0]) + p.area2 * (next[1] - x[1]);
            let net = p.dt * (w - p.drain_flow(x[1]));
            // compare in level units (ft) so the tolerance is scale-free
            assert!((stored - net).abs() / p.area1 < 1e-12, "{stored} vs {net}");
        }
    }

    #[test]
    fn opening_valve_moves_water_downstream() {
        let s = sys();
        let mut prev = [f64::INFINITY, f64::NEG_INFINITY];
        let mut next = [0.0; 2];
        for i in 0..=10 {
            s.dynamics(&[2.5, 2.0], i as f64 / 10.0, &[2.0], &mut next);
            assert!(next[0] <= prev[0] && next[1] >= prev[1]);
            prev = next;
        }
    }

    #[test]
    fn reduced_model_has_expected_shape() {
        let m = stormwater_model(StormwaterParams::default(), RunoffSpec::default(), Resolution::REDUCED).unwrap();
        assert_eq!(m.state_grid().shape(), vec![26, 31]);
        assert_eq!(m.z_axis().len(), 11);
        assert_eq!(m.cost_bound(), 2.0);
    }
}
