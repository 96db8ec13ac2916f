//! Monte Carlo rollouts of the augmented system under a controller, and CVaR
//! estimates of the truncated supremum cost `Y_T = max_{t<T} c(x_t, u_t)`.
//!
//! Every rollout draws from its own ChaCha stream keyed by `(seed, index)`,
//! so results do not depend on how rollouts are scheduled across threads and
//! extending a rollout reproduces a longer one exactly.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MdpModel;
use crate::policy::Controller;
use crate::risk::{empirical_cvar, EmpiricalDistribution};

pub const BOOTSTRAP_RESAMPLES: usize = 200;
const BOOTSTRAP_STREAM: u64 = u64::MAX;

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `x_0 .. x_T`
    pub states: Vec<Vec<f64>>,
    /// `z_0 .. z_T`
    pub z: Vec<f64>,
    /// `u_0 .. u_{T-1}`
    pub controls: Vec<f64>,
    /// `c(x_t, u_t)` for `t < T`
    pub costs: Vec<f64>,
    pub horizon: usize,
    pub seed: u64,
    pub index: u64,
}

impl Trajectory {
    /// `Y_T = z_T`.
    pub fn y(&self) -> f64 {
        self.z[self.horizon]
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.states.first().map_or(0, Vec::len);
        let xs: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        writeln!(w, "t,{},z,u,cost", xs.join(","))?;
        for t in 0..=self.horizon {
            let x: Vec<String> = self.states[t].iter().map(f64::to_string).collect();
            let (u, c) = if t < self.horizon {
                (self.controls[t].to_string(), self.costs[t].to_string())
            } else {
                (String::new(), String::new())
            };
            writeln!(w, "{t},{},{},{u},{c}", x.join(","), self.z[t])?;
        }
        Ok(())
    }
}

/// One augmented-state walker with its private random stream.
struct Walker {
    x: Vec<f64>,
    z: f64,
    rng: ChaCha8Rng,
}

impl Walker {
    fn new(x0: &[f64], seed: u64, index: u64) -> Self {
        Self {
            x: x0.to_vec(),
            z: 0.0,
            rng: stream(seed, index),
        }
    }

    /// Runs one step of the augmented dynamics and returns `(u, c(x, u))`.
    fn step(&mut self, model: &MdpModel, ctrl: &dyn Controller, next: &mut [f64]) -> Result<(f64, f64)> {
        let u = ctrl.control(&self.x, self.z)?;
        let c = model.evaluate_cost(&self.x, u)?;
        let dist = model.disturbance(&self.x, u);
        let atom = &dist.atoms()[dist.sample_index(self.rng.random::<f64>())];
        model.next_state(&self.x, u, &atom.value, next);
        self.x.copy_from_slice(next);
        self.z = self.z.max(c);
        Ok((u, c))
    }

    fn advance(&mut self, model: &MdpModel, ctrl: &dyn Controller, steps: usize) -> Result<()> {
        let mut next = vec![0.0; self.x.len()];
        for _ in 0..steps {
            self.step(model, ctrl, &mut next)?;
        }
        Ok(())
    }
}

fn check_x0(model: &MdpModel, x0: &[f64]) -> Result<()> {
    if !model.state_grid().contains(x0) {
        return Err(Error::domain(format!("initial state {x0:?} outside the grid box")));
    }
    Ok(())
}

/// Simulates `T` steps from `(x0, 0)` using rollout stream `index` of `seed`.
pub fn rollout_indexed(
    model: &MdpModel,
    ctrl: &dyn Controller,
    x0: &[f64],
    horizon: usize,
    seed: u64,
    index: u64,
) -> Result<Trajectory> {
    if horizon < 1 {
        return Err(Error::domain("rollout horizon must be at least 1"));
    }
    check_x0(model, x0)?;
    let mut walker = Walker::new(x0, seed, index);
    let mut next = vec![0.0; x0.len()];
    let mut traj = Trajectory {
        states: vec![x0.to_vec()],
        z: vec![0.0],
        controls: Vec::with_capacity(horizon),
        costs: Vec::with_capacity(horizon),
        horizon,
        seed,
        index,
    };
    for _ in 0..horizon {
        let (u, c) = walker.step(model, ctrl, &mut next)?;
        traj.controls.push(u);
        traj.costs.push(c);
        traj.states.push(walker.x.clone());
        traj.z.push(walker.z);
    }
    Ok(traj)
}

pub fn rollout(model: &MdpModel, ctrl: &dyn Controller, x0: &[f64], horizon: usize, seed: u64) -> Result<Trajectory> {
    rollout_indexed(model, ctrl, x0, horizon, seed, 0)
}

/// Truncation horizon for the supremum cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Horizon {
    Fixed(usize),
    /// Doubles `T` from `initial` until the CVaR estimate moves by less than
    /// `tol` between doublings, or `T` would exceed `max`.
    Adaptive { initial: usize, max: usize, tol: f64 },
}

impl Horizon {
    pub fn adaptive() -> Self {
        Horizon::Adaptive {
            initial: 16,
            max: 4096,
            tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvarEstimate {
    pub alpha: f64,
    pub point: f64,
    /// Percentile bootstrap 95% interval.
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_samples: usize,
    pub horizon: usize,
    pub seed: u64,
    pub mean: f64,
    /// `(T, estimate)` for each horizon tried.
    pub horizon_trace: Vec<(usize, f64)>,
}

impl CvarEstimate {
    pub fn ci_half_width(&self) -> f64 {
        (self.ci_high - self.ci_low) / 2.0
    }
}

/// Independent rollouts from `(x0, 0)`; rollout `i` uses stream `i` of `seed`.
pub struct RolloutBatch<'a> {
    model: &'a MdpModel,
    ctrl: &'a dyn Controller,
    walkers: Vec<Walker>,
    horizon: usize,
}

impl<'a> RolloutBatch<'a> {
    pub fn new(model: &'a MdpModel, ctrl: &'a dyn Controller, x0: &[f64], n: usize, seed: u64) -> Result<Self> {
        check_x0(model, x0)?;
        Ok(Self {
            model,
            ctrl,
            walkers: (0..n as u64).map(|i| Walker::new(x0, seed, i)).collect(),
            horizon: 0,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn advance_to(&mut self, horizon: usize) -> Result<()> {
        if horizon > self.horizon {
            let steps = horizon - self.horizon;
            let (model, ctrl) = (self.model, self.ctrl);
            self.walkers
                .par_iter_mut()
                .try_for_each(|w| w.advance(model, ctrl, steps))?;
            self.horizon = horizon;
        }
        Ok(())
    }

    /// Current `Y_T` of every rollout, in rollout order.
    pub fn costs(&self) -> Vec<f64> {
        self.walkers.iter().map(|w| w.z).collect()
    }
}

pub fn estimate_cvar(
    model: &MdpModel,
    ctrl: &dyn Controller,
    x0: &[f64],
    alpha: f64,
    n: usize,
    horizon: Horizon,
    seed: u64,
) -> Result<CvarEstimate> {
    if n < 100 {
        return Err(Error::domain(format!("at least 100 rollouts are required, got {n}")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let mut batch = RolloutBatch::new(model, ctrl, x0, n, seed)?;
    let mut trace = Vec::new();
    let cvar_now = |batch: &RolloutBatch<'_>| empirical_cvar(&EmpiricalDistribution::new(batch.costs())?, alpha);
    match horizon {
        Horizon::Fixed(t) => {
            if t < 1 {
                return Err(Error::domain("horizon must be at least 1"));
            }
            batch.advance_to(t)?;
            trace.push((t, cvar_now(&batch)?));
        }
        Horizon::Adaptive { initial, max, tol } => {
            if initial < 1 || max < initial {
                return Err(Error::domain("adaptive horizon needs 1 <= initial <= max"));
            }
            let mut t = initial;
            batch.advance_to(t)?;
            let mut prev = cvar_now(&batch)?;
            trace.push((t, prev));
            while t * 2 <= max {
                t *= 2;
                batch.advance_to(t)?;
                let est = cvar_now(&batch)?;
                trace.push((t, est));
                if (est - prev).abs() < tol {
                    break;
                }
                prev = est;
            }
        }
    }
    let samples = batch.costs();
    let dist = EmpiricalDistribution::new(samples)?;
    let point = empirical_cvar(&dist, alpha)?;
    let (lo, hi) = bootstrap_ci(dist.samples(), alpha, seed)?;
    Ok(CvarEstimate {
        alpha,
        point,
        ci_low: lo.min(point),
        ci_high: hi.max(point),
        n_samples: n,
        horizon: batch.horizon(),
        seed,
        mean: dist.mean(),
        horizon_trace: trace,
    })
}

/// 2.5% and 97.5% percentiles of resampled CVaR estimates.
fn bootstrap_ci(samples: &[f64], alpha: f64, seed: u64) -> Result<(f64, f64)> {
    let n = samples.len();
    let mut rng = stream(seed, BOOTSTRAP_STREAM);
    let mut stats = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut resample = vec![0.0; n];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        for slot in resample.iter_mut() {
            *slot = samples[rng.random_range(0..n)];
        }
        stats.push(empirical_cvar(&EmpiricalDistribution::new(resample.clone())?, alpha)?);
    }
    stats.sort_by(f64::total_cmp);
    let pick = |q: f64| stats[((q * (BOOTSTRAP_RESAMPLES - 1) as f64).round() as usize).min(BOOTSTRAP_RESAMPLES - 1)];
    Ok((pick(0.025), pick(0.975)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridAxis;
    use crate::model::{Atom, DiscreteDistribution, FnSystem};
    use crate::policy::ConstantControl;

    fn walk_model(cost_scale: f64) -> MdpModel {
        let sys = FnSystem::new(
            |x, u, w, next| next[0] = x[0] + w[0] - 0.5 * u,
            move |x, _u| (cost_scale * x[0]).min(1.0),
            DiscreteDistribution::new(vec![
                Atom { value: vec![0.3], prob: 0.5 },
                Atom { value: vec![-0.1], prob: 0.5 },
            ])
            .unwrap(),
        );
        MdpModel::builder(sys)
            .state_axis(GridAxis::new(0.0, 2.0, 11).unwrap())
            .control_axis(GridAxis::new(0.0, 1.0, 3).unwrap())
            .cost_bound(1.0)
            .build()
            .unwrap()
    }

    #[test]
    fn z_tracks_running_max() {
        let m = walk_model(0.5);
        let t = rollout(&m, &ConstantControl(0.0), &[0.2], 40, 7).unwrap();
        let mut run = 0.0f64;
        for i in 0..40 {
            assert_eq!(t.z[i], run);
            run = run.max(t.costs[i]);
        }
        assert_eq!(t.y(), run);
        assert!(t.z.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn deterministic_model_ignores_seed() {
        let sys = FnSystem::new(
            |x, u, _w, next| next[0] = x[0] + 0.1 * u,
            |x, _u| 0.5 * x[0],
            DiscreteDistribution::dirac(vec![0.0]),
        );
        let m = MdpModel::builder(sys)
            .state_axis(GridAxis::new(0.0, 2.0, 5).unwrap())
            .control_axis(GridAxis::new(0.0, 1.0, 2).unwrap())
            .cost_bound(1.0)
            .build()
            .unwrap();
        let a = rollout(&m, &ConstantControl(1.0), &[0.0], 12, 1).unwrap();
        let b = rollout(&m, &ConstantControl(1.0), &[0.0], 12, 99).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.z, b.z);
    }

    #[test]
    fn longer_rollout_extends_shorter() {
        let m = walk_model(0.5);
        let short = rollout_indexed(&m, &ConstantControl(0.5), &[0.4], 10, 3, 5).unwrap();
        let long = rollout_indexed(&m, &ConstantControl(0.5), &[0.4], 30, 3, 5).unwrap();
        assert_eq!(short.states[..], long.states[..11]);
        assert!(long.y() >= short.y());
    }

    #[test]
    fn zero_cost_estimate_is_zero() {
        let m = walk_model(0.0);
        let e = estimate_cvar(&m, &ConstantControl(0.0), &[0.5], 0.05, 200, Horizon::Fixed(20), 11).unwrap();
        assert_eq!((e.point, e.ci_low, e.ci_high), (0.0, 0.0, 0.0));
    }

    #[test]
    fn alpha_one_is_the_mean() {
        let m = walk_model(0.5);
        let e = estimate_cvar(&m, &ConstantControl(0.5), &[0.2], 1.0, 300, Horizon::Fixed(15), 4).unwrap();
        assert!((e.point - e.mean).abs() < 1e-12);
        assert!(e.ci_low <= e.point && e.point <= e.ci_high);
    }

    #[test]
    fn estimate_is_reproducible() {
        let m = walk_model(0.5);
        let run = || estimate_cvar(&m, &ConstantControl(0.0), &[0.2], 0.1, 150, Horizon::adaptive(), 5).unwrap();
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_small_batches_and_bad_alpha() {
        let m = walk_model(0.5);
        let c = ConstantControl(0.0);
        assert!(estimate_cvar(&m, &c, &[0.2], 0.1, 50, Horizon::Fixed(5), 0).is_err());
        assert!(estimate_cvar(&m, &c, &[0.2], 0.0, 100, Horizon::Fixed(5), 0).is_err());
        assert!(rollout(&m, &c, &[0.2], 0, 0).is_err());
        assert!(rollout(&m, &c, &[3.0], 5, 0).is_err());
    }
}
