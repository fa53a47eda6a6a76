//! Train the frozen-kernel model next to the network and compare, on the
//! training points and on held-out pairs.

use barlow_ntk::data::synthetic_pairs;
use barlow_ntk::network::{forward_batch, init_gaussian};
use barlow_ntk::{linear_model, trainer, Activation, TrainConfig};

fn main() -> anyhow::Result<()> {
    let dataset = synthetic_pairs(10, 100, 0.1, 5)?;
    let held_out = synthetic_pairs(4, 100, 0.1, 99)?;
    let config = TrainConfig::default();
    for m in [100, 2000] {
        let params = init_gaussian(m, 2, 100, Activation::Tanh, 1.0, 1.0, 5)?;
        let net = trainer::train(&params, &dataset, &config)?;
        let linear = linear_model::train_function_space(linear_model::frozen_state(&params, &dataset)?, &config)?;
        let train_gap = linear_model::rep_difference(&net.final_reps, &linear.reps())?;

        let cross = linear_model::cross_kernel(&params, &dataset, held_out.points())?;
        let predicted = linear_model::predict(&cross, linear.state.dual())?;
        let actual = forward_batch(&net.final_params, held_out.points())?;
        let test_gap = linear_model::rep_difference(&actual, &predicted)?;
        println!(
            "M={m}: net {} epochs, kernel model {} epochs, train gap {train_gap:.3e}, held-out gap {test_gap:.3e}",
            net.epochs, linear.epochs
        );
    }
    Ok(())
}
