//! Parameter-gradient norm equals the NTK quadratic form of the representation gradient.

use barlow_ntk::data::synthetic_pairs;
use barlow_ntk::network::init_gaussian;
use barlow_ntk::{bt_loss, ntk, Activation};

fn main() -> anyhow::Result<()> {
    let dataset = synthetic_pairs(8, 20, 0.2, 1)?;
    for act in [Activation::Tanh, Activation::Relu] {
        let params = init_gaussian(64, 3, 20, act, 1.0, 1.0, 1)?;
        let eval = bt_loss::evaluate(&params, &dataset)?;
        let grad = bt_loss::param_gradient_from(&params, &dataset, &eval).norm_squared();
        let kernel = ntk::assemble(&params, &dataset)?;
        let qform = kernel.quadratic_form(eval.rep_grad.vector())?;
        println!("{act:?}: loss {:.6}  ‖∇θL‖² {grad:.12e}  uᵀKu {qform:.12e}  rel {:.2e}", eval.loss, (grad - qform).abs() / qform);
    }
    Ok(())
}
