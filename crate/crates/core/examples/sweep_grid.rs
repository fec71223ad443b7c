//! Grounding sweeps: modulation strength × cut-off, and which network
//! stages receive the amplification.
//!
//! cargo run --release --example sweep_grid -- CHECKPOINT [SCENES]

use std::path::PathBuf;

use dav::cli::{sweep, SweepArgs, SweepGrid};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(checkpoint) = args.next().map(PathBuf::from) else {
        anyhow::bail!("usage: sweep_grid CHECKPOINT [SCENES]  (see the train_two_stage example)");
    };
    let scenes: usize = args.next().map_or(Ok(4), |s| s.parse())?;
    let out = std::env::temp_dir().join("dav-sweep");
    for (grid, lambda, tau) in [
        (SweepGrid::LambdaTau, vec![10.0, 25.0], vec![0.85, 0.95]),
        (SweepGrid::Placement, vec![25.0], vec![0.95]),
    ] {
        let report = sweep(&SweepArgs {
            checkpoint: checkpoint.clone(),
            out: out.clone(),
            scene: None,
            scenes,
            seed: 0,
            grid,
            lambda,
            tau,
            placement: None,
            steps: Some(20),
        })?;
        println!("{report}\n");
    }
    println!("tables and per-scene records in {}", out.display());
    Ok(())
}
