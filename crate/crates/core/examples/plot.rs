//! Writes mean ± std plot series for one metric from one or more run
//! directories, e.g. the outputs of the `ablation` example.
//!
//! ```bash
//! cargo run --example plot -- success /tmp/dqnf-ablation-1234/dqnf /tmp/dqnf-ablation-1234/dqn
//! ```

use std::path::PathBuf;

use dqnf::harness::{emit_plot_data, METRIC_NAMES};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(metric) = args.next() else {
        anyhow::bail!("usage: plot <metric> <run dir>...; metrics: {}", METRIC_NAMES.join(", "));
    };
    let dirs: Vec<PathBuf> = args.map(PathBuf::from).collect();
    anyhow::ensure!(!dirs.is_empty(), "give at least one run directory");
    let out = std::env::temp_dir().join("dqnf-plots");
    for path in emit_plot_data(&dirs, &metric, 2_500, &out)? {
        println!("{}", path.display());
        print!("{}", std::fs::read_to_string(&path)?);
    }
    Ok(())
}
