//! Linearized gradient flow dW/dt = 4(I − WΓWᵀ)WΓ against its exponential envelope.

use barlow_ntk::lindyn;

fn main() -> anyhow::Result<()> {
    let state = lindyn::random_instance(3, 6, 1, 0.05, 0.95, 11)?;
    let h = lindyn::default_step(&state);
    let traj = lindyn::integrate(&state, 5.0, h)?;
    println!("η = {:?}, h = {h:.3e}, {} records", traj.eta, traj.records.len());
    let stride = traj.records.len() / 10;
    for r in traj.records.iter().step_by(stride.max(1)) {
        println!(
            "t={:.3}  L={:.4e}  envelope={:.4e}  spec(C)=[{:.4}, {:.4}]",
            r.t,
            r.loss,
            traj.envelope(r.t).unwrap_or(f64::NAN),
            r.lambda_min(),
            r.lambda_max()
        );
    }
    println!(
        "within envelope: {:?}, spectrum monotone: {}",
        traj.within_envelope(1e-6),
        lindyn::eigen_monotonicity_check(&traj)
    );
    Ok(())
}
