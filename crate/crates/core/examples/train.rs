//! Trains every seed of a run configuration and prints the per-seed
//! summaries. Defaults to the small two-room layout.
//!
//! ```bash
//! cargo run --release --example train
//! cargo run --release --example train -- examples/configs/grid8_dqnf.json
//! ```

use std::path::PathBuf;

use dqnf::harness::{run_experiment, RunConfig};

fn main() -> anyhow::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/grid5_dqnf.json"));
    let config = RunConfig::load(&path)?;
    println!(
        "{}: {} on {}, {} steps, seeds {:?}",
        config.name,
        if config.frontier.is_some() { "DQN-F" } else { "DQN" },
        config.env.name(),
        config.total_steps,
        config.seeds
    );
    for outcome in run_experiment(&config)? {
        let s = &outcome.manifest.summary;
        println!(
            "seed {}: {:?} after {:.0}s, {} episodes, {} forbidden actions, final success {:?}, Q-separation {:?}",
            outcome.seed,
            outcome.manifest.status,
            outcome.manifest.wall_clock_secs,
            s.episodes,
            s.cumulative_forbidden,
            s.final_window_success,
            s.q_separation
        );
        if let Some(h) = &s.holdout_classifier {
            println!("  classifier held-out accuracy {:.4} on {} samples", h.accuracy, h.samples);
        }
        println!("  outputs in {}", outcome.dir.display());
    }
    Ok(())
}
