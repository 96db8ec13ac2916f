//! Solve a one-dimensional config, commit to `s*` at an initial state, and
//! check the solver value against Monte Carlo rollouts of the policy.

use std::path::PathBuf;

use cvar_reach::config::load_model_file;
use cvar_reach::policy::synthesize;
use cvar_reach::risk::{compute_v_alpha, compute_vs_family, s_grid};
use cvar_reach::sim::{estimate_cvar, rollout, Horizon};

fn main() -> cvar_reach::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/affine-1d.json");
    let model = load_model_file(&path, 0.0)?;
    let s_values = s_grid(0.0, model.cost_bound(), 21);
    let family = compute_vs_family(&model, &s_values, 1e-9, 10_000)?;

    let x0 = [1.3];
    for alpha in [0.5, 0.1] {
        let result = compute_v_alpha(&family, alpha)?;
        let policy = synthesize(&family, &result, &x0)?;
        let est = estimate_cvar(&model, &policy, &x0, alpha, 20_000, Horizon::adaptive(), 7)?;
        println!(
            "alpha {alpha}: solver {:.4} (+{:.3} quantization), simulated {:.4} [{:.4}, {:.4}] at T = {}",
            policy.v_star, result.quantization_bound, est.point, est.ci_low, est.ci_high, est.horizon
        );
    }

    let result = compute_v_alpha(&family, 0.1)?;
    let policy = synthesize(&family, &result, &x0)?;
    let traj = rollout(&model, &policy, &x0, 12, 7)?;
    println!("\none rollout, sup cost {:.3}:", traj.y());
    traj.write_csv(std::io::stdout().lock())?;
    Ok(())
}
