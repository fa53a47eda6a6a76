//! Full-batch gradient descent; prints the per-epoch trajectory as CSV.

use barlow_ntk::data::synthetic_pairs;
use barlow_ntk::network::init_gaussian;
use barlow_ntk::{trainer, Activation, TrainConfig};

fn main() -> anyhow::Result<()> {
    let dataset = synthetic_pairs(20, 784, 0.1, 0)?;
    let params = init_gaussian(500, 2, 784, Activation::Tanh, 1.0, 1.0, 0)?;
    let config = TrainConfig { record_every: 10, ..TrainConfig::default() };
    let run = trainer::train(&params, &dataset, &config)?;
    run.trajectory.write_csv(std::io::stdout().lock())?;
    eprintln!(
        "converged={} epochs={} L(0)={:.4} L(T)={:.3e} ‖θ_T−θ_0‖={:.4}",
        run.converged,
        run.epochs,
        run.initial_loss,
        run.final_loss,
        run.theta_drift()
    );
    Ok(())
}
