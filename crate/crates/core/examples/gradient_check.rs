//! Compares backpropagated gradients with central finite differences for
//! the default grid Q-network and its classifier twin.
//!
//! ```bash
//! cargo run --example gradient_check
//! ```

use dqnf::env::{Environment, GridLayout, GridRooms, DEFAULT_GRID_MAX_STEPS};
use dqnf::nn::{conv_q_chain, grad_check, parameter_count, with_sigmoid_heads};

fn main() -> anyhow::Result<()> {
    let spec = GridRooms::new(GridLayout::default_8x8(), DEFAULT_GRID_MAX_STEPS)?.spec();
    let q_chain = conv_q_chain(&spec.observation_shape, spec.action_count)?;
    for (name, chain) in [("Q-network", q_chain.clone()), ("classifier", with_sigmoid_heads(&q_chain))] {
        let report = grad_check(&chain, &spec.observation_shape, 0, 100)?;
        println!(
            "{name:<10} {} parameters: max relative error {:.2e} over {} coordinates ({} redrawn at kinks)",
            parameter_count(&chain),
            report.max_rel_error,
            report.coords_checked,
            report.coords_redrawn
        );
    }
    Ok(())
}
