//! Risk-averse safe sets and optimal precommitment policies for the
//! Conditional Value-at-Risk of a supremum stage cost.
//!
//! The solver works on an augmented state `(x, z)` where `z` is the running
//! maximum of the stage cost. For each dual variable `s` it runs value
//! iteration for `E[max{Y - s, 0}]` ([`vi`]), then minimizes
//! `s + V_s(x) / alpha` over a grid of `s` values ([`risk`]) to obtain the
//! optimal CVaR `V*_alpha(x)`, the safe sets `{x : V*_alpha(x) <= r}`, and the
//! committed `s*` that turns a greedy selector into a precommitment policy
//! ([`policy`]). [`sim`] and [`oracle`] provide Monte Carlo and exact
//! finite-MDP checks of those quantities.

pub mod config;
pub mod error;
pub mod grid;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod policy;
pub mod risk;
pub mod sim;
pub mod store;
pub mod stormwater;
pub mod vi;

pub use error::{Error, Result};
pub use grid::{GridAxis, StateGrid};
pub use model::{AugmentedState, Atom, ControlSystem, DiscreteDistribution, FnSystem, MdpModel};
pub use vi::{BellmanOperator, ConvergenceReport, SelectorTable, ValueGrid, ViSolution};
