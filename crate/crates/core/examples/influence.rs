//! Plants an outlier in the training response and ranks training samples by
//! their leave-one-out influence on test predictions.
//!
//! ```text
//! cargo run --release --example influence -- [kappa]
//! ```

use std::env;

use nerfplus::influence::{sample_influence, InfluenceOptions};
use nerfplus::sim::{generate, inject_outlier, EffectModel, SimConfig};
use nerfplus::{fit, Dataset, NerfPlusConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kappa: f64 = env::args().nth(1).map_or(Ok(4.0), |s| s.parse())?;
    let sim = SimConfig {
        effect_model: EffectModel::Autocorrelation { omega: 0.5 },
        ..Default::default()
    };
    let data = generate(&sim, 0, None)?;
    let y_train = data.response.select_rows(&data.train);
    let outlier = 7;
    let y_train = inject_outlier(&y_train, outlier, kappa);
    let train = Dataset::new(data.features.select_rows(&data.train), y_train)?;
    let config = NerfPlusConfig {
        n_trees: 50,
        ..Default::default()
    };
    let model = fit(&train, &data.network.induced(&data.train)?, &config)?;

    let report = sample_influence(
        &model,
        &data.features.select_rows(&data.test),
        &data.network,
        &data.train,
        InfluenceOptions::default(),
    )?;
    let mut order: Vec<usize> = (0..report.ranks.len()).collect();
    order.sort_by_key(|&i| report.ranks[i]);
    println!("outlier is training sample {outlier} (rank {})", report.ranks[outlier]);
    for &i in order.iter().take(5) {
        println!("rank {:>3}: sample {:>3} score {:.4}", report.ranks[i], i, report.scores[i]);
    }
    Ok(())
}
