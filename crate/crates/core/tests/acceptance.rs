//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails. Pass criterion numbers as arguments to
//! run a subset, e.g. `cargo test --test acceptance -- 1 2 3`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dqnf::agent::{Agent, AgentConfig, Transition};
use dqnf::env::{Direction, Environment, Feedback, GridLayout, GridRooms, MicroText, ValidityOracle, DEFAULT_GRID_MAX_STEPS};
use dqnf::frontier::frontier_loss;
use dqnf::harness::{
    greedy_path_length, optimal_path_lengths, run_experiment, RunConfig, RunOutcome, RunStatus, EVAL_FILE,
    METRICS_FILE, QNET_FILE,
};
use dqnf::nn::{
    conv_q_chain, grad_check, rmsprop_step, with_sigmoid_heads, Checkpoint, LayerSpec, Network, NetworkParams, OptState,
    Precision, Tensor,
};

const GAMMA: f64 = 0.99;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { pass, detail })
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs").join(name)
}

fn load_config(name: &str, out: &Path) -> Result<RunConfig> {
    let mut config = RunConfig::load(&config_path(name))?;
    config.output_dir = out.join(name.trim_end_matches(".json"));
    config.seeds = SEEDS.to_vec();
    Ok(config)
}

/// Criterion 1: Analytic gradients against central differences on the default grid
/// Q-network and on the classifier.
fn gradients() -> Result<Verdict> {
    let started = Instant::now();
    let env = GridRooms::new(GridLayout::default_8x8(), DEFAULT_GRID_MAX_STEPS)?;
    let spec = env.spec();
    let q_chain = conv_q_chain(&spec.observation_shape, spec.action_count)?;
    let q = grad_check(&q_chain, &spec.observation_shape, 1, 100)?;
    let c = grad_check(&with_sigmoid_heads(&q_chain), &spec.observation_shape, 2, 100)?;
    let secs = started.elapsed().as_secs_f64();
    let worst = q.max_rel_error.max(c.max_rel_error);
    verdict(
        worst < 1e-4 && q.coords_checked == 100 && c.coords_checked == 100 && secs < 60.0,
        format!(
            "max relative error {:.2e} (Q-network {:.2e}, classifier {:.2e}), {} + {} coordinates, {secs:.1}s",
            worst, q.max_rel_error, c.max_rel_error, q.coords_checked, c.coords_checked
        ),
    )
}

/// Squared hinge written out directly from its definition.
fn hinge_by_hand(q: &[f64], forbidden: usize, valid: &[usize], margin: f64) -> f64 {
    if valid.is_empty() {
        return 0.0;
    }
    let mut smallest = f64::INFINITY;
    for &a in valid {
        if q[a] < smallest {
            smallest = q[a];
        }
    }
    let gap = q[forbidden] - (smallest - margin);
    if gap > 0.0 {
        gap * gap
    } else {
        0.0
    }
}

/// Criterion 2: Frontier loss against the hand transcription on random instances.
fn frontier_oracle() -> Result<Verdict> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut active = 0;
    for _ in 0..1_000 {
        let n = rng.gen_range(2..=20);
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let forbidden = rng.gen_range(0..n);
        let valid: Vec<usize> = (0..n).filter(|&a| a != forbidden && rng.gen_bool(0.5)).collect();
        let margin = rng.gen_range(0.0..0.5);
        let expected = hinge_by_hand(&q, forbidden, &valid, margin);
        let got = frontier_loss(&q, forbidden, &valid, margin).loss;
        if expected > 0.0 {
            active += 1;
        }
        worst = worst.max((got - expected).abs());
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-6 && secs < 10.0,
        format!("max abs difference {worst:.2e} over 1000 instances ({active} with an active hinge), {secs:.3}s"),
    )
}

#[derive(Default)]
struct RolloutTally {
    steps: usize,
    rejected: usize,
    oracle_mismatches: usize,
    state_changes: usize,
    nonzero_rewards: usize,
}

fn random_rollout<E, S, F>(env: &mut E, snapshot: F, steps: usize, seed: u64) -> Result<RolloutTally>
where
    E: Environment + ValidityOracle,
    S: PartialEq,
    F: Fn(&E) -> S,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actions = env.spec().action_count;
    let mut tally = RolloutTally::default();
    env.reset(rng.gen());
    for _ in 0..steps {
        let a = rng.gen_range(0..actions);
        let valid = env.valid_actions().contains(&a);
        let before = (env.observation(), snapshot(env));
        let step = env.step(a)?;
        tally.steps += 1;
        if step.feedback.is_rejected() == valid {
            tally.oracle_mismatches += 1;
        }
        if step.feedback == Feedback::Rejected {
            tally.rejected += 1;
            if step.observation != before.0 || snapshot(env) != before.1 {
                tally.state_changes += 1;
            }
            if step.reward != 0.0 {
                tally.nonzero_rewards += 1;
            }
        }
        if step.done {
            env.reset(rng.gen());
        }
    }
    Ok(tally)
}

/// Criterion 3: Rejected steps are zero-reward no-ops and feedback matches the
/// validity oracle, in both environments.
fn rejection_semantics() -> Result<Verdict> {
    let mut grid = GridRooms::new(GridLayout::default_8x8(), DEFAULT_GRID_MAX_STEPS)?;
    let g = random_rollout(
        &mut grid,
        |e: &GridRooms| {
            let s = e.state();
            (s.pos, s.dir, s.frames.clone())
        },
        10_000,
        3,
    )?;
    let mut text = MicroText::builtin();
    let t = random_rollout(
        &mut text,
        |e: &MicroText| {
            let s = e.state();
            (s.room, s.objects.clone(), s.progress, s.last_result.clone())
        },
        10_000,
        3,
    )?;
    let ok = |r: &RolloutTally| r.oracle_mismatches == 0 && r.state_changes == 0 && r.nonzero_rewards == 0 && r.rejected > 0;
    let describe = |name: &str, r: &RolloutTally| {
        format!(
            "{name}: {} steps, {} rejected, {} oracle mismatches, {} state changes, {} non-zero rewards",
            r.steps, r.rejected, r.oracle_mismatches, r.state_changes, r.nonzero_rewards
        )
    };
    verdict(ok(&g) && ok(&t), format!("{}; {}", describe("grid", &g), describe("text", &t)))
}

/// Criterion 4: Vanilla DQN on a two-state MDP-F: state `s` has a valid action that
/// ends the episode with reward 0 and a rejected action that loops. The
/// rejected action's value can only shrink by a factor γ per target sync.
fn self_loop_decay() -> Result<Verdict> {
    let syncs = 50u64;
    let sync_every = 500u64;
    let config = AgentConfig {
        gamma: GAMMA,
        batch_size: 32,
        target_update: sync_every,
        learn_start: 32,
        train_every: 1,
        replay_capacity: 1_000,
        lr_start: 1e-4,
        lr_end: 1e-4,
        weight_decay: 0.0,
        epsilon_start: 1.0,
        epsilon_end: 1.0,
        epsilon_fraction: 0.0,
        network: None,
    };
    let chain = vec![LayerSpec::dense(2, 2)];
    let params = NetworkParams {
        seed: 0,
        tensors: vec![Tensor::zeros(&[2, 2]), Tensor::from_slice(&[2], &[0.0f64, 1.0])?],
    };
    let online = Network::from_params(chain, params)?;
    let total = syncs * sync_every + 32;
    let mut agent = Agent::with_networks(config, None, online, None, total, 7)?;

    let s = Tensor::from_slice(&[2], &[1.0f32, 0.0])?;
    let end = Tensor::from_slice(&[2], &[0.0f32, 1.0])?;
    let q_target = |agent: &Agent<f64>| -> Result<f64> {
        Ok(agent.target().predict(&s.to_precision::<f64>().unsqueeze())?.row(0)[1])
    };
    let q0 = q_target(&agent)?;
    let mut history = vec![q0];
    while agent.grad_steps() < syncs * sync_every {
        let a = agent.act(&s)?;
        let t = if a == 0 {
            Transition {
                observation: s.clone(),
                action: 0,
                reward: 0.0,
                next_observation: end.clone(),
                done: true,
                feedback: Feedback::Valid,
            }
        } else {
            Transition {
                observation: s.clone(),
                action: 1,
                reward: 0.0,
                next_observation: s.clone(),
                done: false,
                feedback: Feedback::Rejected,
            }
        };
        if let Some(report) = agent.observe(t)? {
            if report.target_synced {
                history.push(q_target(&agent)?);
            }
        }
    }
    let worst = history
        .iter()
        .enumerate()
        .map(|(n, q)| {
            let predicted = GAMMA.powi(n as i32) * q0;
            (q - predicted).abs() / predicted
        })
        .fold(0.0, f64::max);
    let n = history.len() - 1;
    let rate = (history[n] / q0).powf(1.0 / n as f64);
    let rate_error = (rate - GAMMA).abs() / GAMMA;
    verdict(
        n == syncs as usize && worst <= 0.05 && rate_error <= 0.05,
        format!(
            "Q(s,a-) after {n} syncs: {:.4} (predicted {:.4}); max deviation from gamma^n {:.3}%, fitted rate {rate:.5}",
            history[n],
            GAMMA.powi(n as i32) * q0,
            100.0 * worst
        ),
    )
}

/// Criterion 5: Frontier-loss-only RMSprop on one fixed grid state, with every
/// forbidden action in the batch.
fn synthetic_separation() -> Result<Verdict> {
    let margin = 0.1;
    let mut env = GridRooms::new(GridLayout::default_8x8(), DEFAULT_GRID_MAX_STEPS)?;
    let obs = env.start_at((1, 1), Direction::East)?;
    let spec = env.spec();
    let valid = env.valid_actions();
    let forbidden: Vec<usize> = (0..spec.action_count).filter(|a| !valid.contains(a)).collect();
    let mut net = Network::<f64>::new(conv_q_chain(&spec.observation_shape, spec.action_count)?, 5);
    let mut opt = OptState::new(net.params());
    let batch = Tensor::stack(std::iter::repeat_n(&obs.to_precision::<f64>(), forbidden.len()))?;
    let worst_violation = |q: &[f64]| {
        let g = valid.iter().map(|&a| q[a]).fold(f64::INFINITY, f64::min);
        forbidden.iter().map(|&a| q[a] - (g - margin)).fold(f64::NEG_INFINITY, f64::max)
    };
    let initial = worst_violation(net.predict(&batch)?.row(0));
    let mut reached = None;
    for step in 0..=500 {
        let (q, trace) = net.forward(&batch)?;
        if worst_violation(q.row(0)) <= 1e-3 {
            reached = Some(step);
            break;
        }
        if step == 500 {
            break;
        }
        let mut grad = Tensor::zeros(q.shape());
        for (i, &a) in forbidden.iter().enumerate() {
            for (k, g) in frontier_loss(q.row(i), a, &valid, margin).gradient {
                grad.row_mut(i)[k] += g / forbidden.len() as f64;
            }
        }
        let grads = net.backward(&trace, &grad)?;
        rmsprop_step(net.params_mut(), &grads, &mut opt, 1e-4, 0.0)?;
    }
    let last = worst_violation(net.predict(&batch)?.row(0));
    verdict(
        reached.is_some(),
        match reached {
            Some(s) => format!("worst violation {initial:.4} -> {last:.2e} after {s} steps"),
            None => format!("worst violation {initial:.4} -> {last:.2e}, not below 1e-3 after 500 steps"),
        },
    )
}

struct Ablation {
    frontier: Vec<RunOutcome>,
    vanilla: Vec<RunOutcome>,
    secs: f64,
}

fn run_ablation(out: &Path) -> Result<Ablation> {
    let started = Instant::now();
    let f = load_config("grid8_dqnf.json", out)?;
    let v = load_config("grid8_dqn.json", out)?;
    let frontier = run_experiment(&f)?;
    let vanilla = run_experiment(&v)?;
    for o in frontier.iter().chain(&vanilla) {
        ensure!(
            o.manifest.status == RunStatus::Completed,
            "seed {} in {} diverged: {:?}",
            o.seed,
            o.dir.display(),
            o.manifest.error
        );
    }
    Ok(Ablation {
        frontier,
        vanilla,
        secs: started.elapsed().as_secs_f64(),
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn list(v: &[f64], digits: usize) -> String {
    v.iter().map(|x| format!("{x:.digits$}")).collect::<Vec<_>>().join(", ")
}

fn summary_values(runs: &[RunOutcome], f: impl Fn(&RunOutcome) -> Option<f64>) -> Result<Vec<f64>> {
    runs.iter()
        .map(|o| f(o).with_context(|| format!("seed {} has no value", o.seed)))
        .collect()
}

/// Criterion 6: Cumulative forbidden actions, DQN-F against vanilla DQN.
fn ablation_forbidden(ab: &Ablation) -> Result<Verdict> {
    let f = summary_values(&ab.frontier, |o| Some(o.manifest.summary.cumulative_forbidden as f64))?;
    let v = summary_values(&ab.vanilla, |o| Some(o.manifest.summary.cumulative_forbidden as f64))?;
    let ratio = mean(&f) / mean(&v);
    verdict(
        ratio <= 0.5,
        format!(
            "mean forbidden DQN-F {:.0} / DQN {:.0} = {ratio:.3} (DQN-F [{}], DQN [{}]); both sets took {:.1} min",
            mean(&f),
            mean(&v),
            list(&f, 0),
            list(&v, 0),
            ab.secs / 60.0
        ),
    )
}

/// Criterion 7: Final-window success, DQN-F against vanilla DQN.
fn ablation_success(ab: &Ablation) -> Result<Verdict> {
    let f = summary_values(&ab.frontier, |o| o.manifest.summary.final_window_success)?;
    let v = summary_values(&ab.vanilla, |o| o.manifest.summary.final_window_success)?;
    let wins = f.iter().zip(&v).filter(|(a, b)| a > b).count();
    verdict(
        mean(&f) >= 0.8 && wins >= 4,
        format!(
            "mean success DQN-F {:.3}, DQN {:.3}; DQN-F ahead in {wins}/5 seeds (DQN-F [{}], DQN [{}])",
            mean(&f),
            mean(&v),
            list(&f, 3),
            list(&v, 3)
        ),
    )
}

/// Criterion 8: Fraction of on-policy states whose forbidden Q-values all sit below
/// every valid one.
fn q_separation(ab: &Ablation) -> Result<Verdict> {
    let f = summary_values(&ab.frontier, |o| o.manifest.summary.q_separation)?;
    let v = summary_values(&ab.vanilla, |o| o.manifest.summary.q_separation)?;
    let all_high = f.iter().all(|&x| x >= 0.9);
    let all_lower = f.iter().zip(&v).all(|(a, b)| b < a);
    verdict(
        all_high && all_lower,
        format!("separated fraction DQN-F [{}], DQN [{}]", list(&f, 3), list(&v, 3)),
    )
}

/// Criterion 10: Classifier accuracy on fresh rollout samples after training.
fn classifier_accuracy(ab: &Ablation) -> Result<Verdict> {
    let acc = summary_values(&ab.frontier, |o| o.manifest.summary.holdout_classifier.as_ref().map(|h| h.accuracy))?;
    let rejected = summary_values(&ab.frontier, |o| {
        o.manifest.summary.holdout_classifier.as_ref().and_then(|h| h.rejected_accuracy)
    })
    .unwrap_or_default();
    verdict(
        acc.iter().all(|&a| a > 0.95),
        format!("held-out accuracy [{}]; on rejected samples [{}]", list(&acc, 4), list(&rejected, 4)),
    )
}

/// Criterion 9: Greedy DQN-F paths on the small layout match value-iteration optimal
/// path lengths from every start pose.
fn oracle_equivalence(out: &Path) -> Result<Verdict> {
    let started = Instant::now();
    let config = load_config("grid5_dqnf.json", out)?;
    let layout = match &config.env {
        dqnf::env::EnvConfig::GridRooms { map: Some(map), .. } => GridLayout::load(map)?,
        other => anyhow::bail!("grid5 config does not name a map: {other:?}"),
    };
    ensure!(layout.room_types() == 2, "expected two room types");
    let optimal = optimal_path_lengths(&layout);
    let outcomes = run_experiment(&config)?;
    let mut matching = Vec::new();
    for o in &outcomes {
        let qnet: Network<f32> = Checkpoint::load(&o.dir.join(QNET_FILE))?.network("online")?;
        let mut env = GridRooms::new(layout.clone(), DEFAULT_GRID_MAX_STEPS)?;
        let mut ok = 0;
        for (&pose, &best) in &optimal {
            if greedy_path_length(&qnet, &mut env, pose)? == Some(best) {
                ok += 1;
            }
        }
        matching.push(ok);
    }
    let secs = started.elapsed().as_secs_f64();
    let seeds_ok = matching.iter().filter(|&&m| m == optimal.len()).count();
    verdict(
        seeds_ok >= 4 && secs < 600.0,
        format!(
            "{seeds_ok}/5 seeds optimal from all {} start poses (per seed: {}), {:.1} min",
            optimal.len(),
            matching.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(", "),
            secs / 60.0
        ),
    )
}

/// Criterion 11: Two 64-bit runs of the same seed and config write identical logs.
fn determinism(out: &Path) -> Result<Verdict> {
    let mut config = load_config("grid5_dqnf.json", out)?;
    config.precision = Precision::F64;
    config.total_steps = 5_000;
    config.seeds = vec![11];
    let mut files = Vec::new();
    for copy in ["a", "b"] {
        config.output_dir = out.join("determinism").join(copy);
        let o = run_experiment(&config)?.remove(0);
        files.push((fs::read(o.dir.join(METRICS_FILE))?, fs::read(o.dir.join(EVAL_FILE))?));
    }
    let same_metrics = files[0].0 == files[1].0;
    let same_eval = files[0].1 == files[1].1;
    verdict(
        same_metrics && same_eval && !files[0].0.is_empty(),
        format!(
            "metrics.csv {} ({} bytes), eval.csv {} ({} bytes)",
            if same_metrics { "identical" } else { "differs" },
            files[0].0.len(),
            if same_eval { "identical" } else { "differs" },
            files[0].1.len()
        ),
    )
}

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: u32| selected.is_empty() || selected.contains(&n);
    let out = tempfile::tempdir().expect("temporary directory");

    let mut results: Vec<(u32, &str, Result<Verdict>)> = Vec::new();
    let mut record = |n: u32, name: &'static str, f: &dyn Fn() -> Result<Verdict>| {
        if wanted(n) {
            let r = f();
            report(n, name, &r);
            results.push((n, name, r));
        }
    };
    record(1, "gradient correctness", &gradients);
    record(2, "frontier-loss oracle", &frontier_oracle);
    record(3, "rejection semantics", &rejection_semantics);
    record(4, "self-loop decay", &self_loop_decay);
    record(5, "synthetic separation", &synthetic_separation);
    if [6, 7, 8, 10].into_iter().any(wanted) {
        match run_ablation(out.path()) {
            Ok(ab) => {
                record(6, "ablation, forbidden actions", &|| ablation_forbidden(&ab));
                record(7, "ablation, success", &|| ablation_success(&ab));
                record(8, "Q-separation", &|| q_separation(&ab));
                record(10, "classifier accuracy", &|| classifier_accuracy(&ab));
            }
            Err(e) => {
                let msg = format!("{e:#}");
                record(6, "ablation, forbidden actions", &|| Err(anyhow::anyhow!("{msg}")));
                record(7, "ablation, success", &|| Err(anyhow::anyhow!("{msg}")));
                record(8, "Q-separation", &|| Err(anyhow::anyhow!("{msg}")));
                record(10, "classifier accuracy", &|| Err(anyhow::anyhow!("{msg}")));
            }
        }
    }
    record(9, "oracle equivalence", &|| oracle_equivalence(out.path()));
    record(11, "determinism", &|| determinism(out.path()));

    results.sort_by_key(|r| r.0);
    println!("\nacceptance summary");
    let mut failed = 0;
    for (n, name, r) in &results {
        let pass = matches!(r, Ok(v) if v.pass);
        if !pass {
            failed += 1;
        }
        println!("  criterion {n:>2} {:<28} {}", name, if pass { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", results.len());
        ExitCode::FAILURE
    } else {
        println!("all {} criteria passed", results.len());
        ExitCode::SUCCESS
    }
}

fn report(n: u32, name: &str, r: &Result<Verdict>) {
    match r {
        Ok(v) => println!("criterion {n:>2} {:<28} {}  {}", name, if v.pass { "PASS" } else { "FAIL" }, v.detail),
        Err(e) => println!("criterion {n:>2} {name:<28} FAIL  error: {e:#}"),
    }
}
