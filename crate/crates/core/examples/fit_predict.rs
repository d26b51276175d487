//! Fits NeRF+ on the training nodes of a simulated network and predicts the
//! held-out nodes, printing test R² and the split of each prediction into
//! feature, cohesion and embedding parts.
//!
//! ```text
//! cargo run --release --example fit_predict -- [omega] [n_trees]
//! ```

use std::env;

use nerfplus::interpret::r_squared;
use nerfplus::sim::{generate, EffectModel, SimConfig};
use nerfplus::{fit, Dataset, NerfPlusConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = env::args().skip(1);
    let omega: f64 = args.next().map_or(Ok(0.7), |s| s.parse())?;
    let n_trees: usize = args.next().map_or(Ok(50), |s| s.parse())?;
    let sim = SimConfig {
        effect_model: EffectModel::Autocorrelation { omega },
        ..Default::default()
    };
    let data = generate(&sim, 0, None)?;

    let rows = |idx: &[usize]| data.features.select_rows(idx);
    let train = Dataset::new(rows(&data.train), data.response.select_rows(&data.train))?;
    let train_network = data.network.induced(&data.train)?;
    let config = NerfPlusConfig {
        n_trees,
        ..Default::default()
    };
    let model = fit(&train, &train_network, &config)?;

    let pred = model.predict(&rows(&data.test), &data.network, &data.train)?;
    let y_test = data.response.select_rows(&data.test);
    println!("test R2 = {:.3}", r_squared(&y_test, &pred.predictions, train.response.mean()));
    println!("{:>6} {:>9} {:>9} {:>9} {:>9}", "node", "pred", "features", "cohesion", "embedding");
    for k in 0..5.min(data.test.len()) {
        println!(
            "{:>6} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
            data.test[k], pred.predictions[k], pred.feature_part[k], pred.cohesion_part[k], pred.embedding_part[k]
        );
    }
    Ok(())
}
