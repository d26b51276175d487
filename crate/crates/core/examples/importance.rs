//! Feature and network importances on a blockwise-effect simulation: global
//! permutation and MDI+ scores on test nodes, plus the local contributions
//! of a few nodes.
//!
//! ```text
//! cargo run --release --example importance -- [eta]
//! ```

use std::env;

use nerfplus::interpret::{local_importance, mdi_plus, permutation_importance, Metric, Target};
use nerfplus::sim::{generate, EffectModel, FunctionalForm, SimConfig};
use nerfplus::{fit, Dataset, NerfPlusConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let eta: f64 = env::args().nth(1).map_or(Ok(1.5), |s| s.parse())?;
    let sim = SimConfig {
        effect_model: EffectModel::Blockwise { eta },
        functional_form: FunctionalForm::Linear,
        p: 6,
        ..Default::default()
    };
    let data = generate(&sim, 0, None)?;
    let train = Dataset::new(data.features.select_rows(&data.train), data.response.select_rows(&data.train))?;
    let config = NerfPlusConfig {
        n_trees: 50,
        ..Default::default()
    };
    let model = fit(&train, &data.network.induced(&data.train)?, &config)?;

    let blocks = model.transform_nodes(&data.features.select_rows(&data.test), &data.network, &data.train)?;
    let y_test = data.response.select_rows(&data.test);
    let targets = Target::all(model.n_features());
    let perm = permutation_importance(&model, &blocks, &y_test, &targets, 50, Metric::R2, 0)?;
    let mdi = mdi_plus(&model, &blocks, &y_test, &targets)?;
    println!("{:<10} {:>12} {:>8}", "target", "permutation", "MDI+");
    for (a, b) in perm.targets.iter().zip(&mdi.targets) {
        println!("{:<10} {:>12.3} {:>8.3}", a.name, a.score, b.score);
    }

    let local = local_importance(&model, &blocks)?;
    println!("\nlocal contributions");
    println!("{:>6} {}", "node", local.names.join(" "));
    for i in 0..3 {
        let row: Vec<String> = local.scores.row(i).iter().map(|v| format!("{v:.2}")).collect();
        println!("{:>6} {}", local.node_indices[i], row.join(" "));
    }
    Ok(())
}
