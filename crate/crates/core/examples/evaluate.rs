//! Trains briefly, reloads the saved Q-network from its checkpoint and
//! evaluates it, then reports how well forbidden Q-values are separated
//! from valid ones along an on-policy rollout.
//!
//! ```bash
//! cargo run --release --example evaluate
//! ```

use std::path::Path;

use dqnf::env::Environment;
use dqnf::harness::{evaluate, q_separation_report, run_experiment, RunConfig, QNET_FILE};
use dqnf::nn::{Checkpoint, Network};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut config = RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/grid5_dqnf.json"))?;
    config.seeds = vec![0];
    config.total_steps = 15_000;
    config.output_dir = std::env::temp_dir().join(format!("dqnf-evaluate-{}", std::process::id()));
    let outcome = run_experiment(&config)?.remove(0);

    let checkpoint = Checkpoint::load(&outcome.dir.join(QNET_FILE))?;
    println!("checkpoint holds {:?}", checkpoint.prefixes());
    let qnet: Network<f32> = checkpoint.network("online")?;
    let mut env = config.env.build()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for epsilon in [0.0, 0.05, 1.0] {
        let r = evaluate(&qnet, &mut env, 50, epsilon, &mut rng)?;
        println!(
            "epsilon {epsilon:.2}: success {:.2}, mean length {:.1}, forbidden per episode {:.2}",
            r.success_rate, r.mean_length, r.forbidden_per_episode
        );
    }

    let report = q_separation_report(&qnet, &mut env, 100, 0.05, 0)?;
    println!(
        "Q-separation: {:.2} of {} states, mean margin {:?}",
        report.fraction,
        report.rows.len(),
        report.mean_margin
    );
    println!("observation shape {:?}", env.spec().observation_shape);
    Ok(())
}
