//! VaR and CVaR of a sampled cost, and the minimizing `s` of the
//! `s + E[max(Y - s, 0)] / alpha` representation.

use cvar_reach::risk::{empirical_cvar, empirical_var, minimize_over_s, EmpiricalDistribution};

fn main() -> cvar_reach::Result<()> {
    let y = vec![0.0, 0.1, 0.1, 0.2, 0.3, 0.5, 0.8, 1.2, 1.5, 2.0];
    let dist = EmpiricalDistribution::new(y.clone())?;
    println!("{} samples, mean {:.3}", dist.len(), dist.mean());
    println!("{:>8} {:>8} {:>8}", "alpha", "VaR", "CVaR");
    for alpha in [0.9, 0.5, 0.2, 0.1, 0.05] {
        println!(
            "{alpha:>8} {:>8.3} {:>8.3}",
            empirical_var(&dist, alpha)?,
            empirical_cvar(&dist, alpha)?
        );
    }

    // the same number by brute force over candidate s values
    let alpha = 0.2;
    let candidates: Vec<f64> = (0..=200).map(|i| i as f64 * 0.01).collect();
    let excess = |i: usize| y.iter().map(|v| (v - candidates[i]).max(0.0)).sum::<f64>() / y.len() as f64;
    let (value, idx) = minimize_over_s(&candidates, alpha, excess);
    println!("alpha {alpha}: min over s grid = {value:.3} at s = {}", candidates[idx]);
    Ok(())
}
