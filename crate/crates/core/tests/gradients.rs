mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seismda::adapt::{total_objective, Group};
use seismda::autodiff::{Graph, Tensor};

const SEEDS: u64 = 20;

fn check(name: &str, f: impl Fn(&mut ChaCha8Rng, u64) -> f64) {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let err = f(&mut rng, seed);
        assert!(err < FD_TOL, "{name} seed {seed}: relative error {err:e}");
    }
}

#[test]
fn conv1d_matches_finite_differences() {
    check("conv1d", |rng, seed| {
        let b = rng.random_range(1..3);
        let c_in = rng.random_range(1..4);
        let c_out = rng.random_range(1..4);
        let k = rng.random_range(1..5);
        let stride = rng.random_range(1..3);
        let len = k + rng.random_range(0..8);
        let inputs = vec![
            random_tensor(rng, &[b, c_in, len]),
            random_tensor(rng, &[c_out, c_in, k]),
            random_tensor(rng, &[c_out]),
        ];
        op_gradient_error(inputs, seed, |g, v| g.conv1d(v[0], v[1], v[2], stride))
    });
}

#[test]
fn dense_matches_finite_differences() {
    check("dense", |rng, seed| {
        let b = rng.random_range(1..4);
        let n_in = rng.random_range(1..6);
        let n_out = rng.random_range(1..4);
        let inputs = vec![
            random_tensor(rng, &[b, n_in]),
            random_tensor(rng, &[n_out, n_in]),
            random_tensor(rng, &[n_out]),
        ];
        op_gradient_error(inputs, seed, |g, v| g.dense(v[0], v[1], v[2]))
    });
}

#[test]
fn leaky_relu_matches_finite_differences() {
    check("leaky_relu", |rng, seed| {
        let slope = rng.random_range(0.01..0.5);
        let x = kink_free_tensor(rng, &[2, 3, 4]);
        op_gradient_error(vec![x], seed, |g, v| Ok(g.leaky_relu(v[0], slope)))
    });
}

#[test]
fn flatten_and_reshape_ops_match_finite_differences() {
    check("flatten", |rng, seed| {
        let x = random_tensor(rng, &[2, 3, 4]);
        op_gradient_error(vec![x], seed, |g, v| {
            let a = g.flatten_batch(v[0]);
            let b = g.flatten(v[0]);
            let sa = g.sum(a);
            let sb = g.sum(b);
            let m = g.mul(sa, sb)?;
            let f = g.flatten(m);
            Ok(f)
        })
    });
}

#[test]
fn grad_reverse_negates_and_scales() {
    check("grad_reverse", |rng, seed| {
        let lambda = rng.random_range(0.0..3.0);
        let x = random_tensor(rng, &[3, 4]);
        let mut g = Graph::new();
        let v = g.variable(x.clone());
        let r = g.grad_reverse(v, lambda).unwrap();
        assert_eq!(g.value(r), &x);
        let s = g.sum(r);
        let adj = g.backward(s).unwrap();
        let worst = adj
            .wrt(v)
            .data()
            .iter()
            .map(|d| (d + lambda).abs())
            .fold(0.0, f64::max);
        // Forward identity means its own finite difference is the plain
        // gradient, which is what composition with a second reversal
        // recovers.
        let inner = op_gradient_error(vec![x], seed, |g, v| {
            let a = g.grad_reverse(v[0], 1.0)?;
            g.grad_reverse(a, 1.0)
        });
        worst.max(inner)
    });
}

#[test]
fn softmax_cross_entropy_matches_finite_differences() {
    check("softmax_cross_entropy", |rng, seed| {
        let b = rng.random_range(1..5);
        let k = rng.random_range(2..6);
        let mut logits = random_tensor(rng, &[b, k]);
        for v in logits.data_mut() {
            *v *= 5.0;
        }
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        op_gradient_error(vec![logits], seed, move |g, v| {
            g.softmax_cross_entropy(v[0], &labels)
        })
    });
}

#[test]
fn row_ops_match_finite_differences() {
    check("slice_rows/concat_rows", |rng, seed| {
        let a = random_tensor(rng, &[3, 2, 2]);
        let b = random_tensor(rng, &[2, 2, 2]);
        op_gradient_error(vec![a, b], seed, |g, v| {
            let s = g.slice_rows(v[0], 1, 3)?;
            g.concat_rows(&[s, v[1], v[0]])
        })
    });
}

#[test]
fn arithmetic_ops_match_finite_differences() {
    check("add/mul/scale/sum/add_all", |rng, seed| {
        let factor = rng.random_range(-2.0..2.0);
        let a = random_tensor(rng, &[2, 3]);
        let b = random_tensor(rng, &[2, 3]);
        op_gradient_error(vec![a, b], seed, move |g, v| {
            let s = g.add(v[0], v[1])?;
            let p = g.mul(s, v[0])?;
            let q = g.scale(p, factor);
            let t = g.sum(v[1]);
            let u = g.sum(q);
            let w = g.add_all(&[t, u, t])?.unwrap();
            let x = g.mul(w, w)?;
            let y = g.flatten(x);
            let z = g.scale(y, 0.5);
            Ok(z)
        })
    });
}

#[test]
fn two_domain_objective_matches_finite_differences() {
    for seed in 0..SEEDS {
        let err = objective_gradient_error(seed);
        assert!(
            err < FD_TOL,
            "objective seed {seed}: relative error {err:e}"
        );
    }
}

#[test]
fn reversal_flips_only_the_extractor_domain_gradient() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = tiny_model(2, seed);
        let mut batches = random_batches(&mut rng, 2, 3);
        let lambda = rng.random_range(0.1..2.0);
        let weights = [0.3, 0.7];

        // Domain-only gradients: objective with and without predictor terms
        // differ by the predictor part, which does not depend on lambda.
        let with = total_objective(&model, &batches, &weights, lambda).unwrap();
        let zero = total_objective(&model, &batches, &weights, 0.0).unwrap();
        let target = batches.target.take();
        let plain = total_objective(&model, &batches, &weights, lambda).unwrap();
        batches.target = target;
        let unit = total_objective(&model, &batches, &weights, 1.0).unwrap();

        for id in model.store.ids() {
            let g_with = with.grads.get(id).data();
            let g_plain = plain.grads.get(id).data();
            match model.group_of(id) {
                Group::Extractor => {
                    // With the reversal, the domain part equals -λ times the
                    // domain part taken at unit strength with no reversal.
                    for j in 0..g_with.len() {
                        let domain = g_with[j] - g_plain[j];
                        let unit_domain = unit.grads.get(id).data()[j] - g_plain[j];
                        assert!(
                            (domain - lambda * unit_domain).abs() < 1e-12 * (1.0 + domain.abs()),
                            "seed {seed} {}[{j}]",
                            model.store.name(id)
                        );
                    }
                }
                Group::Predictor => {
                    // No discriminator term reaches the predictor.
                    for j in 0..g_with.len() {
                        assert!(
                            (g_with[j] - g_plain[j]).abs() < 1e-12,
                            "seed {seed} predictor"
                        );
                    }
                }
                Group::Discriminator(_) => {
                    // Without a target batch, and at lambda zero, the
                    // discriminators receive nothing.
                    assert!(g_plain.iter().all(|&v| v == 0.0));
                    assert!(zero.grads.get(id).data().iter().all(|&v| v == 0.0));
                }
            }
        }
    }
}

#[test]
fn extractor_domain_gradient_opposes_discriminator_descent() {
    // The extractor's domain gradient is the negative of the one the
    // discriminator loss alone would give it.
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = tiny_model(1, seed);
        let batches = random_batches(&mut rng, 1, 4);
        let obj = total_objective(&model, &batches, &[1.0], 1.0).unwrap();
        let mut nodomain = batches.clone();
        nodomain.target = None;
        let plain = total_objective(&model, &nodomain, &[1.0], 1.0).unwrap();
        let id = model.store.find("extractor.conv1.weight").unwrap();
        for j in 0..model.store.get(id).len() {
            let mut ld = |delta: f64| {
                let orig = model.store.get(id).data()[j];
                model.store.get_mut(id).data_mut()[j] = orig + delta;
                let o = total_objective(&model, &batches, &[1.0], 1.0).unwrap();
                model.store.get_mut(id).data_mut()[j] = orig;
                o.discriminator_losses[0]
            };
            let fd = (ld(FD_STEP) - ld(-FD_STEP)) / (2.0 * FD_STEP);
            let domain = obj.grads.get(id).data()[j] - plain.grads.get(id).data()[j];
            assert!(
                rel_err(domain, -fd) < FD_TOL,
                "seed {seed} entry {j}: {domain} vs {}",
                -fd
            );
        }
    }
}

#[test]
fn tensor_shapes_are_checked() {
    assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    let mut g = Graph::new();
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[3, 2]));
    assert!(g.add(a, b).is_err());
    assert!(g.mul(a, b).is_err());
    assert!(g.slice_rows(a, 1, 3).is_err());
    assert!(g.softmax_cross_entropy(a, &[0, 3]).is_err());
}
