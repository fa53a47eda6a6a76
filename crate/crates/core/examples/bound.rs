//! Generalization slack from the trace kernel of a trained network.

use barlow_ntk::data::synthetic_pairs;
use barlow_ntk::network::init_gaussian;
use barlow_ntk::{harness, linear_model, trainer, Activation, TrainConfig};

fn main() -> anyhow::Result<()> {
    let dataset = synthetic_pairs(20, 784, 0.1, 2)?;
    let params = init_gaussian(1000, 1, 784, Activation::Tanh, 1.0, 1.0, 2)?;
    let config = TrainConfig::default();
    let run = trainer::train(&params, &dataset, &config)?;
    let linear = linear_model::train_function_space(linear_model::frozen_state(&params, &dataset)?, &config)?;
    let report = harness::run_bound_report(&dataset, &params, &run, &linear, config.delta, 0.1, dataset.len())?;
    harness::write_bound_csv(&report, std::io::stdout().lock())?;
    Ok(())
}
