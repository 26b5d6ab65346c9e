//! Solves a grid layout exactly by value iteration and checks that the
//! greedy policy of the table walks shortest paths.
//!
//! ```bash
//! cargo run --example oracle
//! cargo run --example oracle -- crates/core/data/grid_rooms_8x8.txt
//! ```

use dqnf::env::GridLayout;
use dqnf::harness::{optimal_path_lengths, table_path_length, value_iteration_oracle};

fn main() -> anyhow::Result<()> {
    let layout = match std::env::args().nth(1) {
        Some(path) => GridLayout::load(path.as_ref())?,
        None => GridLayout::small_5x5(),
    };
    println!("{layout}");
    let table = value_iteration_oracle(&layout, 0.99)?;
    let lengths = optimal_path_lengths(&layout);
    println!("{} poses, converged after {} sweeps", table.states.len(), table.sweeps);
    let mut agree = 0;
    for &pose in &table.states {
        let j = layout.room_at(pose.0).expect("poses are on floor cells");
        let row = table.row(table.state_index(pose).expect("pose is in the table"));
        let best = row[3 * j..3 * j + 3].iter().cloned().fold(f64::MIN, f64::max);
        let walked = table_path_length(&layout, &table, pose, 500);
        if walked == Some(lengths[&pose]) {
            agree += 1;
        }
        println!(
            "{:?} facing {:<5?}  V* {best:.5}  shortest {:>2}  greedy {:?}",
            pose.0, pose.1, lengths[&pose], walked
        );
    }
    println!("greedy table paths optimal from {agree}/{} poses", table.states.len());
    Ok(())
}
