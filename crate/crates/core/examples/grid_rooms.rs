//! Walks the default eight-by-eight layout with random actions and shows how
//! the environment answers: rejected actions leave the agent where it was.
//!
//! ```bash
//! cargo run --example grid_rooms
//! ```

use dqnf::env::{Environment, GridLayout, GridRooms, Move, ValidityOracle, DEFAULT_GRID_MAX_STEPS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let layout = GridLayout::default_8x8();
    println!("{layout}");
    let mut env = GridRooms::new(layout, DEFAULT_GRID_MAX_STEPS)?;
    let spec = env.spec();
    println!(
        "{} actions, observation {:?}, at most {} steps per episode\n",
        spec.action_count, spec.observation_shape, spec.max_steps
    );

    env.reset(1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..12 {
        let s = env.state().clone();
        let action = rng.gen_range(0..spec.action_count);
        let step = env.step(action)?;
        println!(
            "at {:?} facing {:?} in room {}: action {:>2} (room {} {:?}) -> {:?}, now at {:?}",
            s.pos,
            s.dir,
            env.current_room(),
            action,
            action / 3,
            Move::from_index(action % 3),
            step.feedback,
            env.state().pos,
        );
    }
    println!("\nvalid actions here: {:?}", env.valid_actions());
    println!("rejections so far: {}", env.rejection_count());
    Ok(())
}
