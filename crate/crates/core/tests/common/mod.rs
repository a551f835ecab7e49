#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seismda::adapt::{total_objective, ArchSpec, Batches, PhyMdanModel, SourceBatch};
use seismda::autodiff::{Graph, Tensor, Var};
use seismda::sigprep::{Dataset, Sample, Window};
use seismda::{Result, Task};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Relative error with a floor on the scale so that gradients that are
/// zero up to rounding compare as equal.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Entries bounded away from zero, so finite differences never cross the
/// LeakyReLU kink.
pub fn kink_free_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = random_tensor(rng, shape);
    for v in t.data_mut() {
        *v = v.signum() * (0.05 + v.abs());
    }
    t
}

/// Scalar loss `Σ op(inputs) ∘ r` for a fixed random projection `r`.
fn projected(
    op: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>,
    inputs: &[Tensor],
    projection: &mut Option<Tensor>,
    seed: u64,
) -> (Graph, Vec<Var>, Var) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = op(&mut g, &vars).unwrap();
    let shape = g.value(out).shape().to_vec();
    let r = projection
        .get_or_insert_with(|| random_tensor(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xfeed), &shape))
        .clone();
    let rv = g.input(r);
    let p = g.mul(out, rv).unwrap();
    let loss = g.sum(p);
    (g, vars, loss)
}

/// Largest relative error between reverse-mode gradients of the
/// projected output of `op` and central differences, over every input
/// entry.
pub fn op_gradient_error(
    inputs: Vec<Tensor>,
    seed: u64,
    op: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> f64 {
    let mut projection = None;
    let (g, vars, loss) = projected(&op, &inputs, &mut projection, seed);
    let adj = g.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = adj.wrt(*v);
        for j in 0..inputs[k].len() {
            let eval = |delta: f64| {
                let mut shifted = inputs.clone();
                shifted[k].data_mut()[j] += delta;
                let (g, _, loss) = projected(&op, &shifted, &mut projection.clone(), seed);
                g.value(loss).data()[0]
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

/// Tiny network with the full extractor / predictor / discriminator
/// layout, for exhaustive finite-difference checks.
pub const TINY_L: usize = 100;

pub fn tiny_model(n_domains: usize, seed: u64) -> PhyMdanModel {
    PhyMdanModel::new(ArchSpec::compact(2), 2, n_domains, TINY_L, seed).unwrap()
}

pub fn random_batches(rng: &mut ChaCha8Rng, n_sources: usize, batch: usize) -> Batches {
    let sources = (0..n_sources)
        .map(|_| SourceBatch {
            inputs: random_tensor(rng, &[batch, 3, TINY_L]),
            labels: (0..batch).map(|_| rng.random_range(0..2)).collect(),
        })
        .collect();
    Batches {
        sources,
        target: Some(random_tensor(rng, &[batch, 3, TINY_L])),
    }
}

/// Synthetic domain whose class is the position of a spectral bump and
/// whose domain identity is a smooth offset and scale.
pub fn toy_domain(name: &str, n: usize, l: usize, shift: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let label = i % 2;
            let centre = if label == 0 { 0.3 } else { 0.6 } + rng.random_range(-0.03..0.03);
            let mut input = Vec::with_capacity(3 * l);
            for c in 0..3 {
                for j in 0..l {
                    let x = j as f64 / l as f64;
                    let bump = (-((x - centre) / 0.05).powi(2)).exp();
                    let noise: f64 = rng.random_range(-0.05..0.05);
                    input.push(bump * (1.0 - 0.2 * c as f64) + shift * x + noise);
                }
            }
            Sample::new(
                input,
                label,
                name.into(),
                1,
                format!("{name}-{i}"),
                Window {
                    start: 0.0,
                    length: 1.0,
                },
            )
        })
        .collect();
    Dataset::new(name, Task::Detection, l, samples).unwrap()
}

/// Full-objective gradient check for one seed. Predictor and
/// discriminator gradients are compared with differences of the
/// objective value; extractor gradients, which pass through the
/// reversal layers, with differences of `Σ w L_M - λ Σ w L_D`.
///
/// Central differences are meaningless when a LeakyReLU input sits
/// within the step of its kink, so instances where differences at two
/// step sizes disagree are redrawn.
pub fn objective_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..20 {
        if let Some(err) = objective_instance_error(&mut rng, seed) {
            return err;
        }
    }
    panic!("seed {seed}: no kink-free instance");
}

fn objective_instance_error(rng: &mut ChaCha8Rng, seed: u64) -> Option<f64> {
    let mut model = tiny_model(2, seed);
    let batches = random_batches(rng, 2, 3);
    let a: f64 = rng.random_range(0.1..0.9);
    let weights = [a, 1.0 - a];
    let lambda: f64 = rng.random_range(0.05..2.0);
    let obj = total_objective(&model, &batches, &weights, lambda).unwrap();
    let ids: Vec<_> = model.store.ids().collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        let extractor = model.store.name(id).starts_with("extractor");
        for j in 0..model.store.get(id).len() {
            let mut eval = |delta: f64| {
                let orig = model.store.get(id).data()[j];
                model.store.get_mut(id).data_mut()[j] = orig + delta;
                let o = total_objective(&model, &batches, &weights, lambda).unwrap();
                model.store.get_mut(id).data_mut()[j] = orig;
                if extractor {
                    let lm: f64 = o
                        .predictor_losses
                        .iter()
                        .zip(&weights)
                        .map(|(l, w)| l * w)
                        .sum();
                    let ld: f64 = o
                        .discriminator_losses
                        .iter()
                        .zip(&weights)
                        .map(|(l, w)| l * w)
                        .sum();
                    lm - lambda * ld
                } else {
                    o.value
                }
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            let fine = (eval(FD_STEP / 4.0) - eval(-FD_STEP / 4.0)) / (FD_STEP / 2.0);
            if (numeric - fine).abs() > 1e-7 {
                return None;
            }
            worst = worst.max(rel_err(obj.grads.get(id).data()[j], numeric));
        }
    }
    Some(worst)
}
