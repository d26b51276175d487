//! Compares NeRF+ with its two special cases on one simulated network:
//! RF+ (no node effects or embedding) and regression with network cohesion
//! (no trees).
//!
//! ```text
//! cargo run --release --example rnc_rfplus -- [omega]
//! ```

use std::env;

use nerfplus::interpret::r_squared;
use nerfplus::sim::{generate, EffectModel, SimConfig};
use nerfplus::{fit, Dataset, NerfPlusConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let omega: f64 = env::args().nth(1).map_or(Ok(0.7), |s| s.parse())?;
    let sim = SimConfig {
        effect_model: EffectModel::Autocorrelation { omega },
        ..Default::default()
    };
    let data = generate(&sim, 0, None)?;
    let train = Dataset::new(data.features.select_rows(&data.train), data.response.select_rows(&data.train))?;
    let train_network = data.network.induced(&data.train)?;
    let x_test = data.features.select_rows(&data.test);
    let y_test = data.response.select_rows(&data.test);

    let configs = [
        ("NeRF+", NerfPlusConfig { n_trees: 50, ..Default::default() }),
        ("RF+", NerfPlusConfig { n_trees: 50, ..NerfPlusConfig::rf_plus() }),
        ("RNC", NerfPlusConfig::rnc(2)),
    ];
    for (name, config) in configs {
        let model = fit(&train, &train_network, &config)?;
        let pred = model.predict(&x_test, &data.network, &data.train)?;
        println!("{name:<6} test R2 = {:.3}", r_squared(&y_test, &pred.predictions, train.response.mean()));
    }
    Ok(())
}
