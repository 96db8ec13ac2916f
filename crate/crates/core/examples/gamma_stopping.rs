//! Run every `s` in lockstep on the reduced stormwater grid and stop once
//! `V*_alpha` moves by at most 0.005 between checkpoints 20 sweeps apart.

use std::path::PathBuf;
use std::time::Instant;

use cvar_reach::config::load_model_file;
use cvar_reach::risk::{s_grid, solve_with_gamma_stopping, GammaOptions};

fn main() -> cvar_reach::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/stormwater-reduced.json");
    let model = load_model_file(&path, 0.0)?;
    let alphas = [0.05, 0.0005];
    let opts = GammaOptions {
        stride: 20,
        threshold: 0.005,
        max_iter: 600,
    };
    let t0 = Instant::now();
    let run = solve_with_gamma_stopping(&model, &s_grid(0.0, 2.0, 21), &alphas, &opts)?;
    println!("{:>10} {:>12} {:>12}", "N' -> N", "gamma_0.05", "gamma_0.0005");
    for rec in &run.history {
        println!(
            "{:>10} {:>12.5} {:>12.5}",
            format!("{}->{}", rec.earlier, rec.later),
            rec.gamma[0],
            rec.gamma[1]
        );
    }
    match run.stopped_at {
        Some(n) => println!("stopped at N = {n} after {:.1?}", t0.elapsed()),
        None => println!("criterion not met within {} sweeps", opts.max_iter),
    }
    Ok(())
}
