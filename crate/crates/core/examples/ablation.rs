//! DQN-F against vanilla DQN on the small two-room layout, then a
//! side-by-side comparison of the two sets of seeds.
//!
//! ```bash
//! cargo run --release --example ablation
//! ```

use std::path::Path;

use dqnf::harness::{compare_dirs, run_experiment, RunConfig};

fn main() -> anyhow::Result<()> {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs");
    let out = scratch_dir()?;
    let mut frontier = RunConfig::load(&configs.join("grid5_dqnf.json"))?;
    frontier.seeds = vec![0, 1, 2];
    frontier.total_steps = 15_000;
    frontier.output_dir = out.join("dqnf");
    let mut vanilla = frontier.clone();
    vanilla.frontier = None;
    vanilla.output_dir = out.join("dqn");

    for config in [&frontier, &vanilla] {
        run_experiment(config)?;
    }
    let cmp = compare_dirs(&frontier.output_dir, &vanilla.output_dir, 2_500)?;
    println!("A = DQN-F, B = DQN\n{}", cmp.render());
    println!("runs kept in {}", out.display());
    Ok(())
}

fn scratch_dir() -> std::io::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join(format!("dqnf-ablation-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
