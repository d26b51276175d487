//! Runs a small network-autocorrelation experiment and prints test R² per
//! method.
//!
//! ```text
//! cargo run --release --example simulate -- [omega] [replicates]
//! ```

use std::env;
use std::time::Instant;

use nerfplus::sim::{run_experiment, EffectModel, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = env::args().skip(1);
    let omega: f64 = args.next().map_or(Ok(0.9), |s| s.parse())?;
    let replicates: usize = args.next().map_or(Ok(2), |s| s.parse())?;
    let config = SimConfig {
        name: format!("autocorrelation omega={omega}"),
        effect_model: EffectModel::Autocorrelation { omega },
        n_replicates: replicates,
        ..Default::default()
    };
    let start = Instant::now();
    let report = run_experiment(&config)?;
    for row in report.summary.iter().filter(|r| r.metric == "test_r2") {
        println!("{:<10} R2 = {:.3} (se {:.3})", row.method, row.mean, row.stderr);
    }
    println!("{} replicates in {:.1?}", replicates, start.elapsed());
    Ok(())
}
