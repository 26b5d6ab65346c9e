//! The frontier loss on a hand-made Q-vector, then frontier-only training
//! on one grid state until every forbidden action sits a margin below the
//! valid ones.
//!
//! ```bash
//! cargo run --example frontier_loss
//! ```

use dqnf::env::{Direction, Environment, GridLayout, GridRooms, ValidityOracle, DEFAULT_GRID_MAX_STEPS};
use dqnf::frontier::{frontier_loss, DEFAULT_MARGIN};
use dqnf::nn::{conv_q_chain, rmsprop_step, Network, OptState, Tensor};

fn main() -> anyhow::Result<()> {
    let q = [0.5, 0.4, 0.45];
    let l = frontier_loss(&q, 2, &[0, 1], DEFAULT_MARGIN);
    println!("Q = {q:?}, rejected action 2, valid {{0, 1}}: loss {:.4}, gradient {:?}\n", l.loss, l.gradient);

    let mut env = GridRooms::new(GridLayout::default_8x8(), DEFAULT_GRID_MAX_STEPS)?;
    let obs = env.start_at((1, 1), Direction::East)?.to_precision::<f64>();
    let spec = env.spec();
    let valid = env.valid_actions();
    let forbidden: Vec<usize> = (0..spec.action_count).filter(|a| !valid.contains(a)).collect();
    let mut net = Network::<f64>::new(conv_q_chain(&spec.observation_shape, spec.action_count)?, 3);
    let mut opt = OptState::new(net.params());
    let batch = Tensor::stack(std::iter::repeat_n(&obs, forbidden.len()))?;

    for step in 0..=300 {
        let (q, trace) = net.forward(&batch)?;
        let row = q.row(0);
        let min_valid = valid.iter().map(|&a| row[a]).fold(f64::INFINITY, f64::min);
        let max_forbidden = forbidden.iter().map(|&a| row[a]).fold(f64::NEG_INFINITY, f64::max);
        if step % 50 == 0 {
            println!("step {step:>3}: min valid Q {min_valid:+.4}, max forbidden Q {max_forbidden:+.4}");
        }
        let mut grad = Tensor::zeros(q.shape());
        for (i, &a) in forbidden.iter().enumerate() {
            for (k, g) in frontier_loss(q.row(i), a, &valid, DEFAULT_MARGIN).gradient {
                grad.row_mut(i)[k] += g / forbidden.len() as f64;
            }
        }
        let grads = net.backward(&trace, &grad)?;
        rmsprop_step(net.params_mut(), &grads, &mut opt, 1e-4, 0.0)?;
    }
    Ok(())
}
