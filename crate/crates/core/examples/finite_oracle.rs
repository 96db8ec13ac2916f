//! Exact computations on a finite chain: the verification suite, then the
//! optimal CVaR of the supremum cost and the policy that attains it.

use cvar_reach::oracle::{
    exact_policy_cvar, finite_v_alpha, optimal_markov_policy, verification_suite, Depth, FiniteMdp,
};

fn main() -> cvar_reach::Result<()> {
    for check in verification_suite(17)? {
        println!("{} {}: {}", if check.passed { "PASS" } else { "FAIL" }, check.name, check.detail);
    }

    // two states, "wait" (0) or "repair" (1); waiting in state 1 is costly
    let mdp = FiniteMdp::new(
        vec![vec![0.0, 0.3], vec![1.0, 0.6]],
        vec![vec![vec![0, 1], vec![0, 0]], vec![vec![1, 1], vec![0, 1]]],
        vec![0.9, 0.1],
    )?;
    let horizon = 5;
    println!("\nT = {horizon} from state 0:");
    for alpha in [1.0, 0.5, 0.1] {
        let (v, s) = finite_v_alpha(&mdp, alpha, 0, Depth::Steps(horizon))?;
        let stages = optimal_markov_policy(&mdp, s, horizon);
        let attained = exact_policy_cvar(&mdp, &stages, 0, alpha)?;
        println!("  alpha {alpha:<4} V* = {v:.4} (s* = {s}), policy CVaR = {attained:.4}");
    }
    Ok(())
}
