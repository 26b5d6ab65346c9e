use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::run::{read_eval, read_metrics, EvalRow, MetricsRow, EVAL_FILE, METRICS_FILE};
use super::HarnessError;
use crate::agent::select_action;
use crate::env::{Environment, ValidityOracle};
use crate::nn::{Network, Real};

/// Column names of `metrics.csv`, in order.
pub const METRICS_HEADER: [&str; 10] = [
    "episode",
    "env_steps",
    "return",
    "success",
    "forbidden_count",
    "dqn_loss",
    "frontier_loss",
    "classifier_acc",
    "epsilon",
    "lr",
];

/// Metrics that can be compared or plotted. `cumulative_forbidden` is the
/// running total of `forbidden_count`.
pub const METRIC_NAMES: [&str; 9] = [
    "return",
    "success",
    "forbidden_count",
    "cumulative_forbidden",
    "dqn_loss",
    "frontier_loss",
    "classifier_acc",
    "epsilon",
    "lr",
];

/// Trailing fraction of a run used for the final success figure.
pub const FINAL_WINDOW: f64 = 0.1;


#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparationRow {
    pub state: usize,
    pub min_valid: f64,
    /// `None` when every action is valid in this state.
    pub max_forbidden: Option<f64>,
    pub margin: Option<f64>,
    pub separated: bool,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparationReport {
    pub rows: Vec<SeparationRow>,
    /// Fraction of states with `max forbidden Q < min valid Q`.
    pub fraction: f64,
    pub mean_margin: Option<f64>,
}

impl SeparationReport {
    /// Per-state margins followed by the full Q-vector.
    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
        let actions = self.rows.first().map_or(0, |r| r.q.len());
        let mut header = vec![
            "state".to_string(),
            "min_valid".into(),
            "max_forbidden".into(),
            "margin".into(),
            "separated".into(),
        ];
        header.extend((0..actions).map(|a| format!("q_{a}")));
        w.write_record(&header).map_err(|e| HarnessError::csv(path, e))?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let mut rec = vec![
                r.state.to_string(),
                r.min_valid.to_string(),
                opt(r.max_forbidden),
                opt(r.margin),
                (r.separated as u8).to_string(),
            ];
            rec.extend(r.q.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| HarnessError::csv(path, e))?;
        }
        w.flush().map_err(|e| HarnessError::io(path, e))
    }
}

/// Rolls out the ε-greedy policy of `qnet` and, for the first `n_states`
/// visited states, compares forbidden and valid Q-values using the
/// environment's ground-truth validity.
pub fn q_separation_report<T: Real, E: Environment + ValidityOracle>(
    qnet: &Network<T>,
    env: &mut E,
    n_states: usize,
    epsilon: f64,
    seed: u64,
) -> Result<SeparationReport, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n_states);
    let mut obs = env.reset(rng.gen());
    while rows.len() < n_states {
        let q: Vec<f64> = qnet
            .predict(&obs.to_precision::<T>().unsqueeze())?
            .data()
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let valid = env.valid_actions();
        let min_valid = valid.iter().map(|&a| q[a]).fold(f64::INFINITY, f64::min);
        let max_forbidden = (0..q.len())
            .filter(|a| !valid.contains(a))
            .map(|a| q[a])
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
        let margin = max_forbidden.map(|f| min_valid - f);
        rows.push(SeparationRow {
            state: rows.len(),
            min_valid,
            max_forbidden,
            margin,
            separated: margin.is_none_or(|m| m > 0.0),
            q,
        });
        let a = select_action(qnet, &obs.to_precision::<T>(), epsilon, &mut rng)?;
        let step = env.step(a)?;
        obs = if step.done { env.reset(rng.gen()) } else { step.observation };
    }
    let fraction = rows.iter().filter(|r| r.separated).count() as f64 / n_states.max(1) as f64;
    let margins: Vec<f64> = rows.iter().filter_map(|r| r.margin).collect();
    let mean_margin = (!margins.is_empty()).then(|| margins.iter().sum::<f64>() / margins.len() as f64);
    Ok(SeparationReport {
        rows,
        fraction,
        mean_margin,
    })
}


/// The logged output of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub name: String,
    pub metrics: Vec<MetricsRow>,
    pub eval: Option<Vec<EvalRow>>,
}

impl SeedRun {
    pub fn total_steps(&self) -> u64 {
        self.metrics.last().map_or(0, |r| r.env_steps)
    }

    /// Mean evaluation success over the last [`FINAL_WINDOW`] of the run,
    /// falling back to training-episode success without an eval log.
    pub fn final_window_success(&self) -> Option<f64> {
        let start = ((1.0 - FINAL_WINDOW) * self.total_steps() as f64).floor() as u64;
        let values: Vec<f64> = match &self.eval {
            Some(rows) if !rows.is_empty() => rows
                .iter()
                .filter(|r| r.env_steps >= start)
                .map(|r| r.success_rate)
                .collect(),
            _ => self
                .metrics
                .iter()
                .filter(|r| r.env_steps >= start)
                .map(|r| r.success as f64)
                .collect(),
        };
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }

    pub fn cumulative_forbidden(&self) -> u64 {
        self.metrics.iter().map(|r| r.forbidden_count).sum()
    }
}

fn check_header(path: &Path) -> Result<(), HarnessError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
    let header = reader.headers().map_err(|e| HarnessError::csv(path, e))?;
    if header.iter().ne(METRICS_HEADER.iter().copied()) {
        return Err(HarnessError::Schema(format!(
            "{}: expected columns {}, found {}",
            path.display(),
            METRICS_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn load_seed(dir: &Path, name: String) -> Result<SeedRun, HarnessError> {
    let metrics_path = dir.join(METRICS_FILE);
    check_header(&metrics_path)?;
    let metrics = read_metrics(&metrics_path)?;
    let eval_path = dir.join(EVAL_FILE);
    let eval = if eval_path.is_file() { Some(read_eval(&eval_path)?) } else { None };
    Ok(SeedRun { name, metrics, eval })
}

/// Loads a directory holding either one `metrics.csv` or one sub-directory
/// per seed, each with its own `metrics.csv`.
pub fn load_run_set(dir: &Path) -> Result<Vec<SeedRun>, HarnessError> {
    if dir.join(METRICS_FILE).is_file() {
        let name = dir.file_name().map_or("run".into(), |n| n.to_string_lossy().into_owned());
        return Ok(vec![load_seed(dir, name)?]);
    }
    let entries = fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut subdirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(METRICS_FILE).is_file())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(HarnessError::Config(format!("no {METRICS_FILE} under {}", dir.display())));
    }
    subdirs
        .iter()
        .map(|p| load_seed(p, p.file_name().unwrap().to_string_lossy().into_owned()))
        .collect()
}


fn check_metric(metric: &str) -> Result<(), HarnessError> {
    if METRIC_NAMES.contains(&metric) {
        Ok(())
    } else {
        Err(HarnessError::UnknownMetric {
            name: metric.to_string(),
            valid: METRIC_NAMES.join(", "),
        })
    }
}

fn metric_value(row: &MetricsRow, metric: &str) -> Option<f64> {
    match metric {
        "return" => Some(row.episode_return),
        "success" => Some(row.success as f64),
        "forbidden_count" => Some(row.forbidden_count as f64),
        "dqn_loss" => row.dqn_loss,
        "frontier_loss" => row.frontier_loss,
        "classifier_acc" => row.classifier_acc,
        "epsilon" => Some(row.epsilon),
        "lr" => Some(row.lr),
        _ => None,
    }
}

/// Grid points `0, stride, 2·stride, ...` up to `max_step`.
pub fn step_grid(max_step: u64, stride: u64) -> Vec<u64> {
    (0..=max_step / stride.max(1)).map(|i| i * stride.max(1)).collect()
}

/// Value of `metric` for one seed at each grid point: the mean over
/// episodes that ended in `(g - stride, g]`, carrying the previous value
/// forward through empty windows. `cumulative_forbidden` is the running
/// total at `g`.
pub fn seed_series(run: &SeedRun, metric: &str, grid: &[u64], stride: u64) -> Result<Vec<Option<f64>>, HarnessError> {
    check_metric(metric)?;
    let mut out = Vec::with_capacity(grid.len());
    let mut carry = None;
    for &g in grid {
        let value = if metric == "cumulative_forbidden" {
            Some(
                run.metrics
                    .iter()
                    .filter(|r| r.env_steps <= g)
                    .map(|r| r.forbidden_count as f64)
                    .sum(),
            )
        } else {
            let lo = g.saturating_sub(stride);
            let vals: Vec<f64> = run
                .metrics
                .iter()
                .filter(|r| r.env_steps <= g && (r.env_steps > lo || g == 0))
                .filter_map(|r| metric_value(r, metric))
                .collect();
            if vals.is_empty() {
                carry
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        };
        carry = value;
        out.push(value);
    }
    Ok(out)
}

/// Mean and sample standard deviation across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Band {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Band {
    pub fn of(values: &[f64]) -> Option<Band> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Band { mean, std, n })
    }
}

fn set_bands(runs: &[SeedRun], metric: &str, grid: &[u64], stride: u64) -> Result<Vec<Option<Band>>, HarnessError> {
    let series: Vec<Vec<Option<f64>>> = runs
        .iter()
        .map(|r| seed_series(r, metric, grid, stride))
        .collect::<Result<_, _>>()?;
    Ok((0..grid.len())
        .map(|i| {
            let vals: Vec<f64> = series.iter().filter_map(|s| s[i]).collect();
            Band::of(&vals)
        })
        .collect())
}

fn require_seeds(runs: &[SeedRun], label: &str) -> Result<(), HarnessError> {
    if runs.len() < 2 {
        return Err(HarnessError::Config(format!(
            "{label} has {} seed(s); at least 2 are needed for a standard deviation",
            runs.len()
        )));
    }
    Ok(())
}


#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricComparison {
    pub metric: String,
    pub a: Vec<Option<Band>>,
    pub b: Vec<Option<Band>>,
}

impl MetricComparison {
    /// `mean_a - mean_b` at each grid point.
    pub fn difference(&self) -> Vec<Option<f64>> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(a, b)| Some(a.as_ref()?.mean - b.as_ref()?.mean))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetSummary {
    pub seeds: usize,
    pub final_window_success: Option<Band>,
    pub cumulative_forbidden: Option<Band>,
}

fn set_summary(runs: &[SeedRun]) -> SetSummary {
    let success: Vec<f64> = runs.iter().filter_map(|r| r.final_window_success()).collect();
    let forbidden: Vec<f64> = runs.iter().map(|r| r.cumulative_forbidden() as f64).collect();
    SetSummary {
        seeds: runs.len(),
        final_window_success: Band::of(&success),
        cumulative_forbidden: Band::of(&forbidden),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub stride: u64,
    pub grid: Vec<u64>,
    pub metrics: Vec<MetricComparison>,
    pub a: SetSummary,
    pub b: SetSummary,
}

impl Comparison {
    pub fn metric(&self, name: &str) -> Option<&MetricComparison> {
        self.metrics.iter().find(|m| m.metric == name)
    }

    /// Plain-text table: the summaries, then each metric at the last grid
    /// point.
    pub fn render(&self) -> String {
        let band = |b: &Option<Band>| b.map_or("-".to_string(), |b| format!("{:.4} ± {:.4}", b.mean, b.std));
        let mut out = String::new();
        let last = self.grid.len().saturating_sub(1);
        let _ = writeln!(out, "{:<22} {:>24} {:>24} {:>12}", "metric", "A", "B", "A - B");
        let summary_rows = [
            ("final_window_success", &self.a.final_window_success, &self.b.final_window_success),
            ("total_forbidden", &self.a.cumulative_forbidden, &self.b.cumulative_forbidden),
        ];
        for (name, a, b) in summary_rows {
            let diff = match (a, b) {
                (Some(a), Some(b)) => format!("{:.4}", a.mean - b.mean),
                _ => "-".into(),
            };
            let _ = writeln!(out, "{name:<22} {:>24} {:>24} {diff:>12}", band(a), band(b));
        }
        let _ = writeln!(out, "-- at env step {} --", self.grid.get(last).copied().unwrap_or(0));
        for m in &self.metrics {
            let diff = m.difference()[last].map_or("-".into(), |d| format!("{d:.4}"));
            let _ = writeln!(out, "{:<22} {:>24} {:>24} {diff:>12}", m.metric, band(&m.a[last]), band(&m.b[last]));
        }
        out
    }

    /// Full grid as CSV: `env_steps,metric,mean_a,std_a,mean_b,std_b,diff`.
    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
        w.write_record(["env_steps", "metric", "mean_a", "std_a", "mean_b", "std_b", "diff"])
            .map_err(|e| HarnessError::csv(path, e))?;
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for m in &self.metrics {
            let diff = m.difference();
            for (i, g) in self.grid.iter().enumerate() {
                w.write_record([
                    g.to_string(),
                    m.metric.clone(),
                    f(m.a[i].map(|b| b.mean)),
                    f(m.a[i].map(|b| b.std)),
                    f(m.b[i].map(|b| b.mean)),
                    f(m.b[i].map(|b| b.std)),
                    f(diff[i]),
                ])
                .map_err(|e| HarnessError::csv(path, e))?;
            }
        }
        w.flush().map_err(|e| HarnessError::io(path, e))
    }
}

/// Mean ± one standard deviation per metric for two sets of seeds on the
/// grid `0, stride, ...` up to the shortest run.
pub fn compare_runs(a: &[SeedRun], b: &[SeedRun], stride: u64) -> Result<Comparison, HarnessError> {
    require_seeds(a, "set A")?;
    require_seeds(b, "set B")?;
    if stride == 0 {
        return Err(HarnessError::Config("stride must be positive".into()));
    }
    let min_total = a.iter().chain(b).map(SeedRun::total_steps).min().unwrap_or(0);
    let grid = step_grid(min_total, stride);
    let metrics = METRIC_NAMES
        .iter()
        .map(|m| {
            Ok(MetricComparison {
                metric: m.to_string(),
                a: set_bands(a, m, &grid, stride)?,
                b: set_bands(b, m, &grid, stride)?,
            })
        })
        .collect::<Result<_, HarnessError>>()?;
    Ok(Comparison {
        stride,
        grid,
        metrics,
        a: set_summary(a),
        b: set_summary(b),
    })
}

/// Convenience wrapper loading both directories first.
pub fn compare_dirs(a: &Path, b: &Path, stride: u64) -> Result<Comparison, HarnessError> {
    compare_runs(&load_run_set(a)?, &load_run_set(b)?, stride)
}


/// One row of a plot series: mean with a ±1 std band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlotPoint {
    pub env_steps: u64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotSeries {
    pub label: String,
    pub metric: String,
    /// One entry per grid point; `None` before any episode has finished.
    pub points: Vec<(u64, Option<PlotPoint>)>,
}

fn is_rate(metric: &str) -> bool {
    matches!(metric, "success" | "classifier_acc")
}

/// Mean and band of `metric` for each run set on a shared grid.
pub fn plot_series(sets: &[(String, Vec<SeedRun>)], metric: &str, stride: u64) -> Result<Vec<PlotSeries>, HarnessError> {
    check_metric(metric)?;
    if stride == 0 {
        return Err(HarnessError::Config("stride must be positive".into()));
    }
    for (label, runs) in sets {
        require_seeds(runs, label)?;
    }
    let min_total = sets
        .iter()
        .flat_map(|(_, runs)| runs.iter().map(SeedRun::total_steps))
        .min()
        .unwrap_or(0);
    let grid = step_grid(min_total, stride);
    sets.iter()
        .map(|(label, runs)| {
            let bands = set_bands(runs, metric, &grid, stride)?;
            let points = grid
                .iter()
                .zip(bands)
                .map(|(&g, b)| {
                    let p = b.map(|b| {
                        let (mut lower, mut upper) = (b.mean - b.std, b.mean + b.std);
                        if is_rate(metric) {
                            lower = lower.max(0.0);
                            upper = upper.min(1.0);
                        }
                        PlotPoint {
                            env_steps: g,
                            mean: b.mean,
                            lower,
                            upper,
                        }
                    });
                    (g, p)
                })
                .collect();
            Ok(PlotSeries {
                label: label.clone(),
                metric: metric.to_string(),
                points,
            })
        })
        .collect()
}

/// Writes one whitespace-separated `env_steps mean lower upper` file per
/// directory into `out_dir`, named `<dir name>.<metric>.dat`. Missing
/// values are written as `nan`.
pub fn emit_plot_data(dirs: &[PathBuf], metric: &str, stride: u64, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    check_metric(metric)?;
    let sets = dirs
        .iter()
        .map(|d| {
            let label = d
                .file_name()
                .map_or_else(|| d.display().to_string(), |n| n.to_string_lossy().into_owned());
            Ok((label, load_run_set(d)?))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let series = plot_series(&sets, metric, stride)?;
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let mut written = Vec::new();
    for s in series {
        let mut text = format!("# {} {}\n# env_steps mean lower upper\n", s.label, s.metric);
        for (g, p) in &s.points {
            match p {
                Some(p) => {
                    let _ = writeln!(text, "{g} {} {} {}", p.mean, p.lower, p.upper);
                }
                None => {
                    let _ = writeln!(text, "{g} nan nan nan");
                }
            }
        }
        let path = out_dir.join(format!("{}.{}.dat", s.label, s.metric));
        fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
