mod common;

use barlow_ntk::bounds::{self, ScalarKernelGram};
use barlow_ntk::bt_loss::{self, cross_moment, rep_gradient};
use barlow_ntk::data::{self, idx, AugmentSpec};
use barlow_ntk::linear_model::{self, FrozenKernelState};
use barlow_ntk::network::{self, gradient_norm_bound_check, init_gaussian};
use barlow_ntk::trainer::TrainConfig;
use barlow_ntk::{lindyn, linalg, ntk, Activation, NetworkParams, PairedDataset};
use common::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};

const ACTS: [Activation; 2] = [Activation::Tanh, Activation::Relu];

#[test]
fn forward_matches_per_neuron_loop() {
    for seed in 0..20 {
        for act in ACTS {
            let (ds, p) = instance(seed, 3, 17, 4, 6, act);
            for i in 0..6 {
                let x: Vec<f64> = ds.point(i).iter().copied().collect();
                let fast = network::forward(&p, ds.point(i)).unwrap();
                let slow = naive_forward(&p, &x);
                for k in 0..4 {
                    assert!((fast[k] - slow[k]).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn jacobian_matches_finite_differences_tanh() {
    for seed in 0..100u64 {
        let (n, m, k, d) = (1, 3 + (seed as usize % 5), 1 + (seed as usize % 3), 2 + (seed as usize % 4));
        let (ds, p) = instance(seed, n, m, k, d, Activation::Tanh);
        let x = ds.anchor(0);
        let jac = network::output_jacobian(&p, x).unwrap();
        let theta = p.flatten();
        for kk in 0..k {
            let fd = fd_gradient(&theta, 1e-6, |t| {
                let q = NetworkParams::unflatten(t.as_slice(), m, k, d, Activation::Tanh).unwrap();
                network::forward(&q, x).unwrap()[kk]
            });
            let row = DVector::from_iterator(jac.ncols(), jac.row(kk).iter().copied());
            assert!(rel_err_vec(&row, &fd) <= 1e-5, "seed {seed} k {kk}: {}", rel_err_vec(&row, &fd));
        }
    }
}

#[test]
fn ntk_entry_matches_jacobian_product() {
    for seed in 0..20 {
        for act in ACTS {
            let (ds, p) = instance(seed, 2, 9, 3, 5, act);
            for i in 0..4 {
                for j in 0..4 {
                    let ja = network::output_jacobian(&p, ds.point(i)).unwrap();
                    let jb = network::output_jacobian(&p, ds.point(j)).unwrap();
                    let e = ntk::ntk_entry(&p, ds.point(i), ds.point(j)).unwrap();
                    assert!(rel_err(&e, &(&ja * jb.transpose())) <= 1e-10);
                }
            }
        }
    }
}

#[test]
fn assembled_ntk_is_stacked_jacobian_gram() {
    for seed in 0..10 {
        for act in ACTS {
            let (ds, p) = instance(seed, 4, 8, 2, 5, act);
            let j = stacked_jacobian(&p, &ds);
            let k = ntk::assemble(&p, &ds).unwrap();
            assert!(rel_err(k.matrix(), &(&j * j.transpose())) <= 1e-10);
        }
    }
}

#[test]
fn cross_moment_matches_naive_loop() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let fa = DMatrix::from_fn(4, 7, |_, _| rng.random_range(-2.0..2.0));
        let fb = DMatrix::from_fn(4, 7, |_, _| rng.random_range(-2.0..2.0));
        let c = cross_moment(&fa, &fb).unwrap();
        assert!((c.matrix() - naive_cross_moment(&fa, &fb)).amax() < 1e-12);
        assert!((bt_loss::loss(&c) - naive_loss(&fa, &fb)).abs() < 1e-12);
    }
}

#[test]
fn rep_gradient_matches_finite_differences() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..30 {
        let (k, n) = (rng.random_range(1..5), rng.random_range(1..6));
        let fa = DMatrix::from_fn(k, n, |_, _| rng.random_range(-1.5..1.5));
        let fb = DMatrix::from_fn(k, n, |_, _| rng.random_range(-1.5..1.5));
        let c = cross_moment(&fa, &fb).unwrap();
        let u = rep_gradient(&c, &fa, &fb).unwrap();
        let mut all = DMatrix::zeros(k, 2 * n);
        all.columns_mut(0, n).copy_from(&fa);
        all.columns_mut(n, n).copy_from(&fb);
        let flat = DVector::from_column_slice(all.as_slice());
        let fd = fd_gradient(&flat, 1e-6, |v| {
            let m = DMatrix::from_column_slice(k, 2 * n, v.as_slice());
            naive_loss(&m.columns(0, n).into_owned(), &m.columns(n, n).into_owned())
        });
        assert!(rel_err_vec(u.vector(), &fd) <= 1e-6, "{}", rel_err_vec(u.vector(), &fd));
    }
}

#[test]
fn rep_gradient_scalar_case_against_finite_differences() {
    let fa = DMatrix::from_element(1, 1, 2.0);
    let fb = DMatrix::from_element(1, 1, 3.0);
    let u = rep_gradient(&cross_moment(&fa, &fb).unwrap(), &fa, &fb).unwrap();
    let fd = (naive_loss(&DMatrix::from_element(1, 1, 2.0 + 1e-6), &fb) - naive_loss(&DMatrix::from_element(1, 1, 2.0 - 1e-6), &fb)) / 2e-6;
    assert_eq!(u.vector()[0], 30.0);
    assert!((fd - 30.0).abs() / 30.0 < 1e-6);
}

#[test]
fn param_gradient_matches_explicit_jacobian_transpose_u() {
    for seed in 0..20u64 {
        for act in ACTS {
            let n = 1 + seed as usize % 5;
            let (ds, p) = instance(seed, n, 3 + seed as usize % 8, 1 + seed as usize % 4, 4, act);
            let eval = bt_loss::evaluate(&p, &ds).unwrap();
            let j = stacked_jacobian(&p, &ds);
            let explicit = j.transpose() * eval.rep_grad.vector();
            let fast = bt_loss::param_gradient(&p, &ds).unwrap();
            assert!(rel_err_vec(&fast, &explicit) <= 1e-10);
        }
    }
}

#[test]
fn param_gradient_matches_finite_differences() {
    for seed in 0..15u64 {
        let (ds, p) = instance(seed, 3, 6, 2, 4, Activation::Tanh);
        let fast = bt_loss::param_gradient(&p, &ds).unwrap();
        let fd = fd_gradient(&p.flatten(), 1e-6, |t| loss_at_theta(t, &p, &ds));
        assert!(rel_err_vec(&fast, &fd) <= 1e-5, "seed {seed}: {}", rel_err_vec(&fast, &fd));
    }
}

#[test]
fn ntk_eigenvalues_match_jacobi_oracle() {
    for seed in 0..8 {
        for act in ACTS {
            let (ds, p) = instance(seed, 5, 12, 3, 6, act);
            let k = ntk::assemble(&p, &ds).unwrap();
            let reference = jacobi_eigenvalues(k.matrix());
            let ours = linalg::sym_eigenvalues(k.matrix()).unwrap();
            let scale = reference.last().unwrap().abs().max(1.0);
            for (a, b) in ours.iter().zip(&reference) {
                assert!((a - b).abs() <= 1e-8 * scale);
            }
            assert!((ntk::min_eigenvalue(&k).unwrap() - reference[0]).abs() <= 1e-8 * scale);
        }
    }
}

#[test]
fn jacobi_oracle_sanity() {
    let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0]);
    let e = jacobi_eigenvalues(&a);
    assert!((e[0] - 1.0).abs() < 1e-14 && (e[1] - 3.0).abs() < 1e-14 && (e[2] - 5.0).abs() < 1e-14);
}

fn explicit_hs_distance(feat: &dyn Fn(&[f64]) -> Vec<f64>, ds: &PairedDataset, i: usize, j: usize) -> f64 {
    let (a, b) = columns(ds);
    let gi = gamma_operator(&feat(&a[i]), &feat(&b[i]));
    let gj = gamma_operator(&feat(&a[j]), &feat(&b[j]));
    (gi - gj).norm_squared()
}

#[test]
fn hs_distance_matches_explicit_features() {
    let lin = |x: &[f64]| x.to_vec();
    for seed in 0..10u64 {
        let d = 1 + seed as usize % 5;
        let n = 2 + (seed as usize * 7) % 19;
        let ds = data::synthetic_pairs(n, d, 0.4, seed).unwrap();
        let g_lin = ScalarKernelGram::from_kernel(&ds, linear_kernel).unwrap();
        let g_poly = ScalarKernelGram::from_kernel(&ds, poly2_kernel).unwrap();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let ours = bounds::gamma_hs_distance(&g_lin, i, j).unwrap();
                let oracle = explicit_hs_distance(&lin, &ds, i, j);
                assert!((ours - oracle).abs() <= 1e-10 * oracle.max(1.0));
                assert!(ours >= -1e-10);
                let ours = bounds::gamma_hs_distance(&g_poly, i, j).unwrap();
                let oracle = explicit_hs_distance(&poly2_features, &ds, i, j);
                assert!((ours - oracle).abs() <= 1e-10 * oracle.max(1.0));
            }
        }
    }
}

#[test]
fn v_hat_matches_brute_force() {
    for seed in 0..5 {
        let ds = data::synthetic_pairs(9, 4, 0.3, seed).unwrap();
        let gram = ScalarKernelGram::from_kernel(&ds, poly2_kernel).unwrap();
        let n_prime = 6;
        let mut sum = 0.0;
        for i in 0..n_prime {
            for j in i + 1..n_prime {
                sum += explicit_hs_distance(&poly2_features, &ds, i, j);
            }
        }
        let oracle = sum / (n_prime * (n_prime - 1)) as f64;
        let ours = bounds::v_hat(&gram, n_prime).unwrap();
        assert!((ours - oracle).abs() <= 1e-10 * oracle.max(1.0));
    }
    let ds = data::synthetic_pairs(2, 3, 0.3, 1).unwrap();
    let gram = ScalarKernelGram::from_kernel(&ds, linear_kernel).unwrap();
    assert_eq!(bounds::v_hat(&gram, 2).unwrap(), bounds::gamma_hs_distance(&gram, 0, 1).unwrap() / 2.0);
}

#[test]
fn slack_and_bound_direct_arithmetic() {
    let inp = bounds::BoundInputs { n: 200, n_prime: 50, eps: 0.2, delta: 1e-3, b: 2.0, s: 1.5, v_hat: 0.3, zeta: 0.01, k: 3 };
    let var = 0.3 + (-(49.0f64).powi(2) * 0.04 / (8.0 * 1.5f64.powi(8) * 50.0)).exp();
    let nu = 3e-3 + 3.0 * 16.0 / 200.0 * var + 3.0 * (-200.0 * 0.04 / (16.0 * 1.5f64.powi(4))).exp();
    let sl = bounds::slack(&inp).unwrap();
    assert!((sl.nu_full - nu).abs() < 1e-14 * nu);
    let nn = 2.0 * nu + 8.0 * 9.0 * 1e-4 * (2.0 * 2.0 * 1.5 + 0.01f64).powi(2);
    assert!((bounds::nn_population_bound(&inp).unwrap() - nn).abs() < 1e-13 * nn);
}

#[test]
fn rep_difference_matches_loop() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let a: DMatrix<f64> = DMatrix::from_fn(3, 8, |_, _| rng.random_range(-1.0..1.0));
    let b = DMatrix::from_fn(3, 8, |_, _| rng.random_range(-1.0..1.0));
    let mut s = 0.0_f64;
    for p in 0..8 {
        for k in 0..3 {
            s += (a[(k, p)] - b[(k, p)]).powi(2);
        }
    }
    assert!((linear_model::rep_difference(&a, &b).unwrap() - s / 8.0).abs() < 1e-12);
}

/// Parameter-space gradient descent on the explicit linear model `g = f₀ + J₀(θ − θ₀)`.
fn linear_param_steps(j0: &DMatrix<f64>, f0: &DVector<f64>, k: usize, lr: f64, steps: usize) -> Vec<(DVector<f64>, DVector<f64>)> {
    let two_n = f0.len() / k;
    let mut dtheta = DVector::zeros(j0.ncols());
    let mut out = Vec::new();
    for _ in 0..steps {
        let g = f0 + j0 * &dtheta;
        let (_, u) = bt_loss::rep_gradient_of(&DMatrix::from_column_slice(k, two_n, g.as_slice())).unwrap();
        dtheta -= j0.transpose() * u.vector() * lr;
        out.push((f0 + j0 * &dtheta, dtheta.clone()));
    }
    out
}

#[test]
fn function_space_training_matches_parameter_space_linear_model() {
    for seed in 0..6 {
        for act in ACTS {
            let (ds, p) = instance(seed, 3, 7, 2, 4, act);
            let j0 = stacked_jacobian(&p, &ds);
            let f0m = network::forward_batch(&p, ds.points()).unwrap();
            let f0 = DVector::from_column_slice(f0m.as_slice());
            let lr = 0.05;
            let param = linear_param_steps(&j0, &f0, 2, lr, 20);
            let mut state = linear_model::frozen_state(&p, &ds).unwrap();
            for (step, (g, _)) in param.iter().enumerate() {
                state.step(lr).unwrap();
                let ours = DVector::from_column_slice(state.reps().as_slice());
                let tol = if step == 0 { 1e-10 } else { 1e-8 };
                assert!(rel_err_vec(&ours, g) <= tol, "step {step}: {}", rel_err_vec(&ours, g));
            }
        }
    }
}

#[test]
fn held_out_prediction_matches_parameter_space_linear_model() {
    for seed in 0..6 {
        let (ds, p) = instance(seed, 3, 7, 2, 4, Activation::Tanh);
        let held = data::synthetic_pairs(2, 4, 0.0, seed + 100).unwrap();
        let test = held.points().columns(0, 2).into_owned();
        let j0 = stacked_jacobian(&p, &ds);
        let f0m = network::forward_batch(&p, ds.points()).unwrap();
        let f0 = DVector::from_column_slice(f0m.as_slice());
        let lr = 0.1;
        let (_, dtheta) = linear_param_steps(&j0, &f0, 2, lr, 15).pop().unwrap();
        let cfg = TrainConfig { lr, max_epochs: 15, delta: 1e-300, ..TrainConfig::default() };
        let run = linear_model::train_function_space(linear_model::frozen_state(&p, &ds).unwrap(), &cfg).unwrap();
        assert_eq!(run.epochs, 15);
        let cross = linear_model::cross_kernel(&p, &ds, &test).unwrap();
        let g = linear_model::predict(&cross, run.state.dual()).unwrap();
        for t in 0..2 {
            let jt = network::output_jacobian(&p, test.column(t)).unwrap();
            let expect = network::forward(&p, test.column(t)).unwrap() + jt * &dtheta;
            for k in 0..2 {
                assert!((g[(k, t)] - expect[k]).abs() <= 1e-10 * expect[k].abs().max(1.0));
            }
        }
    }
}

#[test]
fn cross_kernel_with_zero_second_layer_is_block_diagonal() {
    let (ds, mut p) = instance(1, 3, 6, 3, 4, Activation::Tanh);
    p.w.fill(0.0);
    let test = data::synthetic_pairs(2, 4, 0.1, 9).unwrap();
    let cross = linear_model::cross_kernel(&p, &ds, test.points()).unwrap();
    for r in 0..cross.matrix.nrows() {
        for c in 0..cross.matrix.ncols() {
            if r % 3 != c % 3 {
                assert_eq!(cross.matrix[(r, c)], 0.0);
            }
        }
    }
}

#[test]
fn frozen_state_rejects_mismatched_reps() {
    let (ds, p) = instance(1, 3, 6, 2, 4, Activation::Tanh);
    let k0 = ntk::assemble(&p, &ds).unwrap();
    assert!(FrozenKernelState::new(k0, &DMatrix::zeros(2, 5)).is_err());
}

#[test]
fn gradient_norm_bound_holds_within_radius() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    for seed in 0..20 {
        let (ds, p0) = instance(seed, 2, 30, 3, 6, Activation::Tanh);
        let dir = DVector::from_fn(p0.num_params(), |_, _| rng.random_range(-1.0..1.0));
        let radius = 3.0;
        let theta = p0.flatten() + dir.normalize() * rng.random_range(0.0..radius);
        let p = NetworkParams::unflatten(theta.as_slice(), 30, 3, 6, Activation::Tanh).unwrap();
        for i in 0..4 {
            let rep = gradient_norm_bound_check(&p, &p0, ds.point(i), radius).unwrap();
            assert!(rep.within_bound, "{:?}", rep);
        }
    }
    let zero = init_gaussian(5, 2, 3, Activation::Tanh, 0.0, 1.0, 0).unwrap();
    let x = DVector::from_vec(vec![1.0, 0.0, 0.0]);
    let rep = gradient_norm_bound_check(&zero, &zero, x.as_view(), 0.0).unwrap();
    assert!(rep.actual.iter().all(|&a| a == 0.0) && rep.within_bound);
}

#[test]
fn lindyn_rhs_is_negative_loss_gradient() {
    for seed in 0..10 {
        let s = lindyn::random_instance(3, 6, 1, 0.1, 0.9, seed).unwrap();
        let rhs = lindyn::lindyn_rhs(&s.w, &s.gamma);
        let flat = DVector::from_column_slice(s.w.as_slice());
        let fd = fd_gradient(&flat, 1e-6, |v| lindyn::loss_at(&DMatrix::from_column_slice(3, 6, v.as_slice()), &s.gamma));
        let rhs_flat = DVector::from_column_slice(rhs.as_slice());
        assert!(rel_err_vec(&rhs_flat, &(-fd)) <= 1e-6);
    }
}

#[test]
fn lindyn_scalar_envelope_at_fine_step() {
    let s = lindyn::LinearState::new(DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 1.0)).unwrap();
    let traj = lindyn::integrate(&s, 1.0, 1e-4).unwrap();
    for r in &traj.records {
        assert!(r.loss <= 0.5625 * (-4.0 * r.t).exp() * (1.0 + 1e-6));
    }
}

/// Byte-level reader kept deliberately separate from the library parser.
fn raw_pixel_sums(bytes: &[u8], count: usize) -> Vec<u64> {
    let be = |o: usize| u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize;
    let (rows, cols) = (be(8), be(12));
    (0..count).map(|i| bytes[16 + i * rows * cols..16 + (i + 1) * rows * cols].iter().map(|&b| b as u64).sum()).collect()
}

#[test]
fn idx_full_size_file_against_byte_reader() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("images.idx");
    let count = 60_000;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let pixels: Vec<u8> = (0..count * 784).map(|_| rng.random()).collect();
    idx::write_idx_images(&path, 28, 28, &pixels).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
    let parsed = idx::read_idx(&path).unwrap();
    let sums = raw_pixel_sums(&bytes, 50);
    for (i, s) in sums.iter().enumerate() {
        let ours: u64 = parsed.image(i).unwrap().iter().map(|&b| b as u64).sum();
        assert_eq!(ours, *s);
    }
    let ds = data::load_mnist_pairs(&path, 50, AugmentSpec::new(0.0).unwrap(), 0).unwrap();
    assert_eq!((ds.len(), ds.dim()), (50, 784));
    assert_eq!(ds.anchor(7), ds.augment(7));
    // Zero-noise anchors are the normalized raw pixels.
    let raw: Vec<f64> = bytes[16 + 3 * 784..16 + 4 * 784].iter().map(|&b| b as f64 / 255.0).collect();
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    for r in 0..784 {
        assert!((ds.anchor(3)[r] - raw[r] / norm).abs() < 1e-15);
    }
}
