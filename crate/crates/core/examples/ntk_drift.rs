//! Relative NTK movement ‖K_T − K_0‖/‖K_0‖ shrinks as the hidden width grows.

use barlow_ntk::data::synthetic_pairs;
use barlow_ntk::network::init_gaussian;
use barlow_ntk::{trainer, Activation, TrainConfig};

fn main() -> anyhow::Result<()> {
    let dataset = synthetic_pairs(10, 784, 0.1, 3)?;
    println!("M,epochs,drift_rel,lambda_min_K0,eta");
    for m in [50, 200, 1000] {
        let params = init_gaussian(m, 3, 784, Activation::Tanh, 1.0, 1.0, 3)?;
        let run = trainer::train(&params, &dataset, &TrainConfig::default())?;
        let report = trainer::ntk_report(&params, &run.final_params, &dataset, run.initial_loss, dataset.len())?;
        println!(
            "{m},{},{:.4e},{:.4e},{}",
            run.epochs,
            report.drift.relative,
            report.lambda_min_k0,
            trainer::fmt_opt(report.eta)
        );
    }
    Ok(())
}
