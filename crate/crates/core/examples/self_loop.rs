//! Why vanilla DQN is slow to learn that an action is forbidden: the
//! rejected action's target is `γ · max Q(s, ·)` of the same state, so its
//! value shrinks only by a factor γ per target-network sync.
//!
//! ```bash
//! cargo run --example self_loop
//! ```

use dqnf::agent::{Agent, AgentConfig, Transition};
use dqnf::env::Feedback;
use dqnf::nn::{LayerSpec, Network, NetworkParams, Tensor};

fn main() -> anyhow::Result<()> {
    let config = AgentConfig {
        batch_size: 32,
        target_update: 500,
        learn_start: 32,
        lr_start: 1e-4,
        lr_end: 1e-4,
        weight_decay: 0.0,
        epsilon_start: 1.0,
        epsilon_end: 1.0,
        ..AgentConfig::default()
    };
    let params = NetworkParams {
        seed: 0,
        tensors: vec![Tensor::zeros(&[2, 2]), Tensor::from_slice(&[2], &[0.0f64, 1.0])?],
    };
    let online = Network::from_params(vec![LayerSpec::dense(2, 2)], params)?;
    let mut agent = Agent::with_networks(config.clone(), None, online, None, 20_000, 0)?;

    let s = Tensor::from_slice(&[2], &[1.0f32, 0.0])?;
    let end = Tensor::from_slice(&[2], &[0.0f32, 1.0])?;
    let mut syncs = 0;
    println!("sync  Q(s, rejected)  gamma^n");
    while syncs < 20 {
        let action = agent.act(&s)?;
        let (next, done, feedback) = if action == 0 {
            (end.clone(), true, Feedback::Valid)
        } else {
            (s.clone(), false, Feedback::Rejected)
        };
        let t = Transition {
            observation: s.clone(),
            action,
            reward: 0.0,
            next_observation: next,
            done,
            feedback,
        };
        if let Some(report) = agent.observe(t)? {
            if report.target_synced {
                syncs += 1;
                let q = agent.target().predict(&s.to_precision::<f64>().unsqueeze())?;
                println!("{syncs:>4}  {:>14.5}  {:>7.5}", q.row(0)[1], config.gamma.powi(syncs));
            }
        }
    }
    Ok(())
}
