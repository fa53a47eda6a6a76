//! Choose the relu first-layer scale so that L(0) < 1 is likely at large width.

use barlow_ntk::data::synthetic_pairs;
use barlow_ntk::network::{forward_batch, init_gaussian};
use barlow_ntk::{bounds, bt_loss, Activation};

fn main() -> anyhow::Result<()> {
    let dataset = synthetic_pairs(50, 784, 0.1, 0)?;
    for k in [1, 5] {
        let cal = bounds::calibrate_first_layer_scale(&dataset, k, None, 1.0, 100_000, 0)?;
        let params = init_gaussian(10_000, k, 784, Activation::Relu, 1.0, cal.scale, 0)?;
        let c = bt_loss::cross_moment_of(&forward_batch(&params, dataset.points())?)?;
        println!(
            "K={k}: s={:.4} target E[C_kk]={:.4} estimate={:.4} -> L(0)={:.4}",
            cal.scale,
            cal.target,
            cal.estimate_scaled,
            bt_loss::loss(&c)
        );
    }
    Ok(())
}
