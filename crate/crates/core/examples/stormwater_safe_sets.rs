//! End-to-end run on the reduced stormwater grid through a run directory:
//! solve with checkpoint stopping, then write risk tables and safe-set masks.

use std::path::PathBuf;

use cvar_reach::pipeline::{self, SolveRequest, Stopping, DEFAULT_ALPHAS, DEFAULT_R_LEVELS};
use cvar_reach::risk::s_grid;

fn main() -> cvar_reach::Result<()> {
    let config = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/stormwater-reduced.json");
    let out = std::env::temp_dir().join("cvar-reach-stormwater");
    let outcome = pipeline::solve(
        &out,
        &SolveRequest {
            config_text: std::fs::read_to_string(config)?,
            s_values: s_grid(0.0, 2.0, 21),
            stopping: Stopping::Gamma {
                alphas: DEFAULT_ALPHAS.to_vec(),
                stride: 20,
                threshold: 0.005,
                max_iter: 600,
            },
            shift: 0.0,
        },
    )?;
    let stopped = outcome.manifest.gamma.as_ref().and_then(|g| g.stopped_at);
    println!("run in {} (stopped at {stopped:?})", out.display());

    for meta in pipeline::safesets(&out, &DEFAULT_ALPHAS, &DEFAULT_R_LEVELS)? {
        println!("alpha {}:", meta.alpha);
        for s in &meta.safe_sets {
            let rect = s.rectangularity.map_or("-".to_string(), |j| format!("{j:.3}"));
            println!("  r {:<4} {:>4} of 806 nodes, rectangularity {rect}", s.r, s.count);
        }
        if let Some(contour) = &meta.contour_file {
            println!("  contour table: {}", out.join(contour).display());
        }
    }
    Ok(())
}
