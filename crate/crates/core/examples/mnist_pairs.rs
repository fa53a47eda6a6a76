//! Positive pairs from an IDX image file.
//!
//! Pass the path of `train-images-idx3-ubyte`; without an argument a small
//! synthetic IDX file is written to the temp directory and used instead.

use barlow_ntk::data::{idx, load_mnist_pairs};
use barlow_ntk::AugmentSpec;

fn main() -> anyhow::Result<()> {
    let path = match std::env::args().nth(1) {
        Some(p) => p.into(),
        None => {
            let p = std::env::temp_dir().join("bt_ntk_demo-images-idx3-ubyte");
            let pixels: Vec<u8> = (0..16 * 28 * 28).map(|i| ((i * 37) % 256) as u8).collect();
            idx::write_idx_images(&p, 28, 28, &pixels)?;
            p
        }
    };
    let pairs = load_mnist_pairs(&path, 8, AugmentSpec::new(0.1)?, 0)?;
    println!("{} pairs of dimension {} from {}", pairs.len(), pairs.dim(), path.display());
    println!("max |‖x‖ − 1| = {:.2e}", pairs.max_norm_deviation());
    for n in 0..pairs.len() {
        println!("pair {n}: ⟨x, x⁺⟩ = {:.4}", pairs.anchor(n).dot(&pairs.augment(n)));
    }
    Ok(())
}
