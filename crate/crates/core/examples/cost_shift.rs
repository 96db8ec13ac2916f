//! A stage cost that can go negative is made admissible by adding a constant
//! `b`; the risk values move by exactly `b` and are reported unshifted.

use cvar_reach::config::load_model_with_shift;
use cvar_reach::risk::{compute_v_alpha, compute_vs_family, s_grid};

const CONFIG: &str = r#"{
    "state_grid": [{"lo": -1.0, "hi": 1.0, "n": 21}],
    "z_grid": {"n": 11},
    "control_grid": {"lo": -1.0, "hi": 1.0, "n": 5},
    "cost": {"expression": "x1 - 0.2 * u * u"},
    "dynamics": {"builtin": "affine", "a": [[0.8]], "b": [0.2]},
    "disturbance": {"atoms": [{"value": [-0.1], "prob": 0.5}, {"value": [0.15], "prob": 0.5}]},
    "cost_bound": 1.0
}"#;

fn main() -> cvar_reach::Result<()> {
    match load_model_with_shift(CONFIG, 0.0) {
        Ok(_) => println!("unexpectedly accepted a negative cost"),
        Err(e) => println!("without a shift: {e}"),
    }
    let b = 1.2;
    let model = load_model_with_shift(CONFIG, b)?;
    println!("with b = {b}: cost bound {}", model.cost_bound());
    let family = compute_vs_family(&model, &s_grid(0.0, model.cost_bound(), 23), 1e-9, 10_000)?;
    let result = compute_v_alpha(&family, 0.1)?;
    let plain = result.unshifted_v_star();
    for k in [0, 5, 10, 15, 20] {
        let x = model.state_grid().node(k)[0];
        println!("  x = {x:>5.2}: shifted V* = {:.4}, original units = {:.4}", result.v_star[k], plain[k]);
    }
    Ok(())
}
