use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dqnf::env::{EnvConfig, Environment};
use dqnf::harness::{
    compare_dirs, emit_plot_data, evaluate, load_env_file, optimal_path_lengths, q_separation_report, run_experiment,
    value_iteration_oracle, HarnessError, RunConfig,
};
use dqnf::nn::{Checkpoint, Network};

#[derive(Parser)]
#[command(name = "dqnf", version, about = "Train and analyse DQN / DQN-F agents on environments that reject actions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Train only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a saved Q-network.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: u64,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Environment file; defaults to the one recorded in the checkpoint.
        #[arg(long)]
        env: Option<PathBuf>,
    },
    /// Report how well forbidden Q-values are separated from valid ones.
    InspectQ {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Map file, game definition or environment config.
        #[arg(long)]
        env: PathBuf,
        #[arg(long, default_value_t = 200)]
        states: usize,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the per-state Q dump here.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Compare two sets of runs (mean ± std over seeds).
    Compare {
        dir_a: PathBuf,
        dir_b: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        stride: u64,
        /// Write the full comparison grid as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write whitespace-separated plot series for one metric.
    Plot {
        #[arg(long)]
        metric: String,
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        stride: u64,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
    /// Solve a grid layout exactly by value iteration.
    Oracle {
        #[arg(long)]
        env: PathBuf,
        #[arg(long, default_value_t = 0.99)]
        gamma: f64,
    },
}

enum Failure {
    Config(anyhow::Error),
    Diverged(String),
    Other(anyhow::Error),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_config_error() {
            Failure::Config(e.into())
        } else {
            Failure::Other(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) | Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Diverged(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train { config, seed } => train(&config, seed),
        Command::Eval {
            checkpoint,
            episodes,
            epsilon,
            seed,
            env,
        } => Ok(eval(&checkpoint, episodes, epsilon, seed, env.as_deref())?),
        Command::InspectQ {
            checkpoint,
            env,
            states,
            epsilon,
            seed,
            dump,
        } => inspect_q(&checkpoint, &env, states, epsilon, seed, dump.as_deref()),
        Command::Compare {
            dir_a,
            dir_b,
            stride,
            csv,
        } => {
            let cmp = compare_dirs(&dir_a, &dir_b, stride)?;
            write_stdout(&cmp.render())?;
            if let Some(path) = csv {
                cmp.write_csv(&path)?;
            }
            Ok(())
        }
        Command::Plot {
            metric,
            dirs,
            stride,
            out,
        } => {
            for path in emit_plot_data(&dirs, &metric, stride, &out)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Oracle { env, gamma } => oracle(&env, gamma),
    }
}

fn train(path: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let mut config = RunConfig::load(path)?;
    if let Some(s) = seed {
        config.seeds = vec![s];
    }
    let outcomes = run_experiment(&config)?;
    let mut diverged = Vec::new();
    for o in &outcomes {
        let s = &o.manifest.summary;
        println!(
            "seed {:>4}  {:?}  steps {}  episodes {}  forbidden {}  final success {}  separation {}  ({:.1}s)",
            o.seed,
            o.manifest.status,
            s.env_steps,
            s.episodes,
            s.cumulative_forbidden,
            s.final_window_success.map_or("-".into(), |v| format!("{v:.3}")),
            s.q_separation.map_or("-".into(), |v| format!("{v:.3}")),
            o.manifest.wall_clock_secs
        );
        if o.diverged() {
            diverged.push(format!(
                "seed {}: {}",
                o.seed,
                o.manifest.error.as_deref().unwrap_or("diverged")
            ));
        }
    }
    if !diverged.is_empty() {
        return Err(Failure::Diverged(format!("run diverged ({})", diverged.join("; "))));
    }
    Ok(())
}

fn checkpoint_env(ckpt: &Checkpoint) -> Result<EnvConfig> {
    let env = ckpt
        .metadata
        .as_ref()
        .and_then(|m| m.get("env"))
        .context("checkpoint does not record its environment; pass --env")?;
    Ok(serde_json::from_value(env.clone())?)
}

fn eval(path: &Path, episodes: u64, epsilon: f64, seed: u64, env_file: Option<&Path>) -> Result<()> {
    let ckpt = Checkpoint::load(path)?;
    let qnet: Network<f64> = ckpt.network("online")?;
    let env_config = match env_file {
        Some(f) => load_env_file(f)?,
        None => checkpoint_env(&ckpt)?,
    };
    let mut env = env_config.build()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = evaluate(&qnet, &mut env, episodes, epsilon, &mut rng)?;
    println!("episodes              {}", r.episodes);
    println!("success rate          {:.4}", r.success_rate);
    println!("mean return           {:.4}", r.mean_return);
    println!("mean length           {:.2}", r.mean_length);
    println!("forbidden per episode {:.3}", r.forbidden_per_episode);
    Ok(())
}

fn inspect_q(
    path: &Path,
    env_file: &Path,
    states: usize,
    epsilon: f64,
    seed: u64,
    dump: Option<&Path>,
) -> Result<(), Failure> {
    let ckpt = Checkpoint::load(path).map_err(|e| Failure::Config(e.into()))?;
    let qnet: Network<f64> = ckpt.network("online").map_err(|e| Failure::Config(e.into()))?;
    let mut env = load_env_file(env_file)?.build().map_err(HarnessError::from)?;
    let out = qnet
        .output_shape(&env.spec().observation_shape)
        .map_err(|e| Failure::Config(anyhow::anyhow!("checkpoint does not fit this environment: {e}")))?;
    if out != [env.spec().action_count] {
        return Err(Failure::Config(anyhow::anyhow!(
            "checkpoint has {out:?} outputs, environment has {} actions",
            env.spec().action_count
        )));
    }
    let report = q_separation_report(&qnet, &mut env, states, epsilon, seed)?;
    println!("states      {}", report.rows.len());
    println!("separated   {:.4}", report.fraction);
    if let Some(m) = report.mean_margin {
        println!("mean margin {m:.5}");
    }
    if let Some(p) = dump {
        report.write_csv(p)?;
        println!("dump        {}", p.display());
    }
    Ok(())
}

fn oracle(env_file: &Path, gamma: f64) -> Result<(), Failure> {
    let env = load_env_file(env_file)?.build().map_err(HarnessError::from)?;
    let Some(grid) = env.as_grid() else {
        return Err(Failure::Config(anyhow::anyhow!(
            "the tabular oracle only supports grid layouts"
        )));
    };
    if !(0.0..1.0).contains(&gamma) {
        return Err(Failure::Config(anyhow::anyhow!("gamma must lie in [0, 1)")));
    }
    let layout = grid.layout();
    let table = value_iteration_oracle(layout, gamma)?;
    let lengths = optimal_path_lengths(layout);
    let mut out = format!(
        "{} states x {} actions, converged after {} sweeps\n",
        table.states.len(),
        table.action_count,
        table.sweeps
    );
    out += &format!("{:>3} {:>3} {:<6} {:>6} {:>10} {:>14}\n", "x", "y", "facing", "length", "V*", "forbidden Q*");
    for (s, &(pos, dir)) in table.states.iter().enumerate() {
        let row = table.row(s);
        let j = layout.room_at(pos).expect("floor cell");
        let v = row[3 * j..3 * j + 3].iter().cloned().fold(f64::MIN, f64::max);
        let forbidden = row.iter().enumerate().find(|(a, _)| a / 3 != j).map(|(_, q)| *q);
        out += &format!(
            "{:>3} {:>3} {:<6} {:>6} {:>10.6} {:>14}\n",
            pos.0,
            pos.1,
            format!("{dir:?}"),
            lengths.get(&(pos, dir)).map_or("-".into(), |l| l.to_string()),
            v,
            forbidden.map_or("-".into(), |q| format!("{q:.6}"))
        );
    }
    write_stdout(&out)
}

/// Writes to stdout, treating a closed pipe (`dqnf oracle | head`) as success.
fn write_stdout(text: &str) -> Result<(), Failure> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::Other(e.into())),
        _ => Ok(()),
    }
}
