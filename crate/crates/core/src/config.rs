//! JSON model configs: grids, cost, dynamics and disturbance, validated with
//! field paths so errors point at the offending entry.

use std::borrow::Cow;
use std::path::Path;
use std::sync::Arc;

use evalexpr::{build_operator_tree, ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node, Value};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::GridAxis;
use crate::model::{Atom, ControlSystem, DiscreteDistribution, MdpModel};
use crate::stormwater::{RunoffSpec, Stormwater, StormwaterParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl AxisConfig {
    fn axis(&self, path: &str) -> Result<GridAxis> {
        GridAxis::new(self.lo, self.hi, self.n).map_err(|e| Error::validation(path, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZGridConfig {
    pub n: usize,
}

/// Either a named builtin cost or an arithmetic expression in `x1.., u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    /// Per-component thresholds for `max_excess`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    /// `stormwater` or `affine`.
    pub builtin: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<StormwaterParams>,
    /// State matrix of `x' = A x + b u + w`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atoms: Option<Vec<Atom>>,
    /// `stormwater_runoff`, parameterized by `runoff`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runoff: Option<RunoffSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub state_grid: Vec<AxisConfig>,
    pub z_grid: ZGridConfig,
    pub control_grid: AxisConfig,
    pub cost: CostConfig,
    pub dynamics: DynamicsConfig,
    pub disturbance: DisturbanceConfig,
    pub cost_bound: f64,
}

impl ModelConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::validation(if path == "." { String::from("<root>") } else { path }, e.inner().to_string())
        })
    }

    /// Compact JSON in field-declaration order; the basis of [`ModelConfig::hash`].
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Content hash of the config together with a cost shift.
    pub fn hash(&self, shift: f64) -> String {
        let mut h = Sha256::new();
        h.update(self.canonical_json().as_bytes());
        h.update(format!("|shift={shift:?}").as_bytes());
        format!("sha256:{}", hex::encode(h.finalize()))
    }

    pub fn build(&self, shift: f64) -> Result<MdpModel> {
        let axes = self
            .state_grid
            .iter()
            .enumerate()
            .map(|(i, a)| a.axis(&format!("state_grid[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let dim = axes.len();
        if dim == 0 {
            return Err(Error::validation("state_grid", "at least one state axis is required"));
        }
        let control = self.control_grid.axis("control_grid")?;
        let disturbance = self.disturbance(dim)?;
        let dynamics = self.dynamics_kind(dim, &disturbance)?;
        let cost = self.cost_kind(dim, &dynamics)?;
        let system: Arc<dyn ControlSystem> = Arc::new(ConfigSystem {
            dynamics,
            cost,
            disturbance,
        });
        MdpModel::builder_arc(system)
            .state_axes(axes)
            .z_nodes(self.z_grid.n)
            .control_axis(control)
            .cost_bound(self.cost_bound)
            .cost_shift(shift)
            .identity(self.hash(shift))
            .build()
    }

    fn disturbance(&self, dim: usize) -> Result<DiscreteDistribution> {
        let d = &self.disturbance;
        let prefix = |e: Error| match e {
            Error::Validation { path, message } if !path.starts_with("disturbance") => {
                Error::validation(format!("disturbance.{path}"), message)
            }
            other => other,
        };
        match (&d.atoms, d.builtin.as_deref()) {
            (Some(atoms), None) => {
                if d.runoff.is_some() {
                    return Err(Error::validation("disturbance.runoff", "only valid with a builtin law"));
                }
                for (i, a) in atoms.iter().enumerate() {
                    if a.value.len() != dim {
                        return Err(Error::validation(
                            format!("disturbance.atoms[{i}].value"),
                            format!("expected {dim} components, got {}", a.value.len()),
                        ));
                    }
                }
                DiscreteDistribution::new(atoms.clone()).map_err(prefix)
            }
            (None, Some("stormwater_runoff")) => d.runoff.unwrap_or_default().distribution().map_err(prefix),
            (None, Some(other)) => Err(Error::validation(
                "disturbance.builtin",
                format!("unknown disturbance `{other}`"),
            )),
            (Some(_), Some(_)) => Err(Error::validation("disturbance", "give either `atoms` or `builtin`, not both")),
            (None, None) => Err(Error::validation("disturbance", "give either `atoms` or `builtin`")),
        }
    }

    fn dynamics_kind(&self, dim: usize, dist: &DiscreteDistribution) -> Result<Dynamics> {
        let d = &self.dynamics;
        match d.builtin.as_str() {
            "stormwater" => {
                if d.a.is_some() || d.b.is_some() {
                    return Err(Error::validation("dynamics", "`a` and `b` belong to affine dynamics"));
                }
                if dim != 2 {
                    return Err(Error::validation("state_grid", "stormwater dynamics need two state axes"));
                }
                if dist.atoms()[0].value.len() != 1 {
                    return Err(Error::validation("disturbance", "stormwater dynamics take a scalar runoff"));
                }
                let params = d.params.unwrap_or_default();
                Ok(Dynamics::Stormwater(Stormwater::with_distribution(params, dist.clone())?))
            }
            "affine" => {
                if d.params.is_some() {
                    return Err(Error::validation("dynamics.params", "only valid for stormwater dynamics"));
                }
                let a = d.a.clone().ok_or_else(|| Error::validation("dynamics.a", "missing"))?;
                let b = d.b.clone().ok_or_else(|| Error::validation("dynamics.b", "missing"))?;
                if a.len() != dim || a.iter().any(|row| row.len() != dim) {
                    return Err(Error::validation("dynamics.a", format!("expected a {dim}x{dim} matrix")));
                }
                if b.len() != dim {
                    return Err(Error::validation("dynamics.b", format!("expected {dim} entries")));
                }
                if a.iter().flatten().chain(&b).any(|v| !v.is_finite()) {
                    return Err(Error::validation("dynamics", "coefficients must be finite"));
                }
                Ok(Dynamics::Affine { a, b })
            }
            other => Err(Error::validation(
                "dynamics.builtin",
                format!("unknown dynamics `{other}`"),
            )),
        }
    }

    fn cost_kind(&self, dim: usize, dynamics: &Dynamics) -> Result<Cost> {
        let c = &self.cost;
        match (c.builtin.as_deref(), &c.expression) {
            (Some(_), Some(_)) => Err(Error::validation("cost", "give either `builtin` or `expression`, not both")),
            (None, None) => Err(Error::validation("cost", "give either `builtin` or `expression`")),
            (Some("stormwater_overflow"), None) => match dynamics {
                Dynamics::Stormwater(sys) => Ok(Cost::Overflow(*sys.params())),
                _ => Err(Error::validation("cost.builtin", "stormwater_overflow needs stormwater dynamics")),
            },
            (Some("max_excess"), None) => {
                let t = c
                    .thresholds
                    .clone()
                    .ok_or_else(|| Error::validation("cost.thresholds", "missing"))?;
                if t.len() != dim || t.iter().any(|v| !v.is_finite()) {
                    return Err(Error::validation("cost.thresholds", format!("expected {dim} finite entries")));
                }
                Ok(Cost::MaxExcess(t))
            }
            (Some(other), None) => Err(Error::validation("cost.builtin", format!("unknown cost `{other}`"))),
            (None, Some(expr)) => {
                if c.thresholds.is_some() {
                    return Err(Error::validation("cost.thresholds", "only valid for max_excess"));
                }
                Ok(Cost::Expression(ExpressionCost::new(expr, dim)?))
            }
        }
    }
}

pub fn load_model(text: &str) -> Result<MdpModel> {
    load_model_with_shift(text, 0.0)
}

pub fn load_model_with_shift(text: &str, shift: f64) -> Result<MdpModel> {
    ModelConfig::parse(text)?.build(shift)
}

pub fn load_model_file(path: &Path, shift: f64) -> Result<MdpModel> {
    load_model_with_shift(&std::fs::read_to_string(path)?, shift)
}

/// A stage cost parsed once and evaluated against variables `x1, .., xd, u`.
#[derive(Debug, Clone)]
pub struct ExpressionCost {
    node: Node<DefaultNumericTypes>,
    names: Vec<String>,
}

impl ExpressionCost {
    pub fn new(expr: &str, dim: usize) -> Result<Self> {
        let node = build_operator_tree::<DefaultNumericTypes>(expr)
            .map_err(|e| Error::validation("cost.expression", e.to_string()))?;
        let names: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
        for var in node.iter_read_variable_identifiers() {
            if var != "u" && !names.iter().any(|n| n == var) {
                return Err(Error::validation(
                    "cost.expression",
                    format!("unknown variable `{var}`; expected x1..x{dim} or u"),
                ));
            }
        }
        Ok(Self { node, names })
    }

    /// NaN when the expression fails to evaluate, which the model's cost scan rejects.
    pub fn eval(&self, x: &[f64], u: f64) -> f64 {
        let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
        for (name, v) in self.names.iter().zip(x) {
            if ctx.set_value(name.clone(), Value::Float(*v)).is_err() {
                return f64::NAN;
            }
        }
        if ctx.set_value("u".into(), Value::Float(u)).is_err() {
            return f64::NAN;
        }
        self.node.eval_number_with_context(&ctx).unwrap_or(f64::NAN)
    }
}

enum Dynamics {
    Stormwater(Stormwater),
    Affine { a: Vec<Vec<f64>>, b: Vec<f64> },
}

enum Cost {
    Overflow(StormwaterParams),
    MaxExcess(Vec<f64>),
    Expression(ExpressionCost),
}

struct ConfigSystem {
    dynamics: Dynamics,
    cost: Cost,
    disturbance: DiscreteDistribution,
}

impl ControlSystem for ConfigSystem {
    fn dynamics(&self, x: &[f64], u: f64, w: &[f64], next: &mut [f64]) {
        match &self.dynamics {
            Dynamics::Stormwater(sys) => sys.dynamics(x, u, w, next),
            Dynamics::Affine { a, b } => {
                for (i, out) in next.iter_mut().enumerate() {
                    *out = a[i].iter().zip(x).map(|(aij, xj)| aij * xj).sum::<f64>() + b[i] * u + w[i];
                }
            }
        }
    }

    fn stage_cost(&self, x: &[f64], u: f64) -> f64 {
        match &self.cost {
            Cost::Overflow(p) => p.overflow_cost(x),
            Cost::MaxExcess(t) => x.iter().zip(t).map(|(xi, ti)| xi - ti).fold(0.0, f64::max),
            Cost::Expression(e) => e.eval(x, u),
        }
    }

    fn disturbance(&self, _x: &[f64], _u: f64) -> Cow<'_, DiscreteDistribution> {
        Cow::Borrowed(&self.disturbance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const AFFINE: &str = r#"{
        "state_grid": [{"lo": 0, "hi": 1, "n": 5}],
        "z_grid": {"n": 5},
        "control_grid": {"lo": 0, "hi": 1, "n": 3},
        "cost": {"expression": "max(x1 - 0.5, 0)"},
        "dynamics": {"builtin": "affine", "a": [[0.9]], "b": [-0.2]},
        "disturbance": {"atoms": [{"value": [0.0], "prob": 0.5}, {"value": [0.1], "prob": 0.5}]},
        "cost_bound": 0.5
    }"#;

    fn path_of(e: Error) -> String {
        match e {
            Error::Validation { path, .. } => path,
            other => panic!("expected a validation error, got {other}"),
        }
    }

    #[test]
    fn affine_expression_model_builds() {
        let m = load_model(AFFINE).unwrap();
        assert_eq!(m.state_grid().len(), 5);
        assert_eq!(m.evaluate_cost(&[1.0], 0.0).unwrap(), 0.5);
        let mut next = [0.0];
        m.next_state(&[0.5], 1.0, &[0.1], &mut next);
        assert!((next[0] - 0.35).abs() < 1e-12);
        assert!(m.identity().starts_with("sha256:"));
    }

    #[test]
    fn identity_tracks_content_and_shift() {
        let a = ModelConfig::parse(AFFINE).unwrap();
        let b = ModelConfig::parse(&AFFINE.replace("0.9", "0.8")).unwrap();
        assert_ne!(a.hash(0.0), b.hash(0.0));
        assert_ne!(a.hash(0.0), a.hash(1.0));
        assert_eq!(a.hash(0.0), ModelConfig::parse(&a.canonical_json()).unwrap().hash(0.0));
    }

    #[test]
    fn bad_probability_names_atom() {
        let text = AFFINE.replace(r#""prob": 0.5}, {"#, r#""prob": -0.5}, {"#);
        assert_eq!(path_of(load_model(&text).unwrap_err()), "disturbance.atoms[0].prob");
    }

    #[test]
    fn unknown_field_is_rejected_with_path() {
        let text = AFFINE.replace(r#""z_grid": {"n": 5}"#, r#""z_grid": {"n": 5, "m": 1}"#);
        assert!(path_of(load_model(&text).unwrap_err()).starts_with("z_grid"));
    }

    #[test]
    fn unknown_variable_in_expression() {
        let text = AFFINE.replace("max(x1 - 0.5, 0)", "x2 + 1");
        assert_eq!(path_of(load_model(&text).unwrap_err()), "cost.expression");
    }

    #[test]
    fn negative_cost_is_rejected() {
        let text = AFFINE.replace("max(x1 - 0.5, 0)", "x1 - 0.5");
        assert!(load_model(&text).is_err());
        assert!(load_model_with_shift(&text, 0.5).is_ok());
    }

    #[test]
    fn stormwater_builtin_matches_direct_model() {
        let text = r#"{
            "state_grid": [{"lo": 0, "hi": 5, "n": 6}, {"lo": 0, "hi": 6, "n": 7}],
            "z_grid": {"n": 5},
            "control_grid": {"lo": 0, "hi": 1, "n": 3},
            "cost": {"builtin": "stormwater_overflow"},
            "dynamics": {"builtin": "stormwater"},
            "disturbance": {"builtin": "stormwater_runoff"},
            "cost_bound": 2
        }"#;
        let m = load_model(text).unwrap();
        let sys = Stormwater::new(StormwaterParams::default(), RunoffSpec::default()).unwrap();
        let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
        m.next_state(&[2.0, 3.5], 0.5, &[2.0], &mut a);
        sys.dynamics(&[2.0, 3.5], 0.5, &[2.0], &mut b);
        assert_eq!(a, b);
        assert_eq!(m.evaluate_cost(&[4.0, 1.0], 0.0).unwrap(), 1.0);
    }

    #[test]
    fn overflow_cost_requires_stormwater_dynamics() {
        let text = AFFINE.replace(r#"{"expression": "max(x1 - 0.5, 0)"}"#, r#"{"builtin": "stormwater_overflow"}"#);
        assert_eq!(path_of(load_model(&text).unwrap_err()), "cost.builtin");
    }
}
