//! Plays the built-in text game with a fixed command list that solves it
//! wherever the key starts, printing what the player sees and whether each
//! command was accepted.
//!
//! ```bash
//! cargo run --example micro_text
//! ```

use dqnf::env::{Environment, MicroText, ValidityOracle};

fn main() -> anyhow::Result<()> {
    let mut env = MicroText::builtin();
    let spec = env.spec();
    println!("{}: {} actions, {} vocabulary words\n", env.def().name, spec.action_count, env.vocabulary_size());

    env.reset(0);
    let script = [
        "open chest",
        "take key",
        "go north",
        "go east",
        "open chest",
        "take key",
        "open door",
        "unlock door",
        "open door",
        "go north",
    ];
    for command in script {
        println!("{} | {}", env.room_text(), env.inventory_text());
        let valid: Vec<String> = env.valid_actions().iter().map(|&a| env.action_name(a)).collect();
        println!("  valid: {}", valid.join(", "));
        let action = env.action_by_name(command).expect("command exists in the action space");
        let step = env.step(action)?;
        println!("> {command:<12} {:?}  reward {}  {}", step.feedback, step.reward, env.state().last_result);
        if step.done {
            println!("\nquest finished after {} steps", env.state().steps);
            break;
        }
    }
    Ok(())
}
