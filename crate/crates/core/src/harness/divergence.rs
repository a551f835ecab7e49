use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{fan_in_uniform, AdamConfig, AdamState, Graph, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Fixed settings of the domain probe.
pub const PROBE_EPOCHS: usize = 30;
const PROBE_BATCH: usize = 32;
const PROBE_LR: f64 = 1e-3;
const PROBE_TRAIN_FRACTION: f64 = 0.8;

/// Proxy A-distance `2 (1 - 2 err)` between two feature sets, clipped to
/// `[0, 2]`.
///
/// The larger set is subsampled to the size of the smaller one. A linear
/// probe (dense layer to 2 logits, on features standardized with training
/// statistics) is trained on 80% of the pooled samples and `err` is its
/// error on the remaining 20%.
pub fn proxy_a_distance(source: &[&[f64]], target: &[&[f64]], seed: u64) -> Result<f64> {
    let m = source.len().min(target.len());
    if m < 5 {
        return Err(Error::arg(format!(
            "proxy A-distance needs at least 5 samples per side, got {} and {}",
            source.len(),
            target.len()
        )));
    }
    let d = source[0].len();
    if source.iter().chain(target).any(|x| x.len() != d) || d == 0 {
        return Err(Error::dim("feature vectors must share one nonzero length"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |set: &[&[f64]], rng: &mut ChaCha8Rng| {
        let mut idx: Vec<usize> = (0..set.len()).collect();
        idx.shuffle(rng);
        idx.truncate(m);
        idx
    };
    let si = pick(source, &mut rng);
    let ti = pick(target, &mut rng);
    let mut pool: Vec<(&[f64], usize)> = si
        .iter()
        .map(|&i| (source[i], 1))
        .chain(ti.iter().map(|&i| (target[i], 0)))
        .collect();
    pool.shuffle(&mut rng);
    let n_train =
        ((pool.len() as f64 * PROBE_TRAIN_FRACTION).round() as usize).clamp(1, pool.len() - 1);
    let (train, test) = pool.split_at(n_train);

    let mut mean = vec![0.0; d];
    for (x, _) in train {
        for (m, v) in mean.iter_mut().zip(x.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= train.len() as f64);
    let mut sd = vec![0.0; d];
    for (x, _) in train {
        for ((s, v), m) in sd.iter_mut().zip(x.iter()).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    sd.iter_mut()
        .for_each(|s| *s = (*s / train.len() as f64).sqrt().max(1e-8));
    let standardize = |rows: &[(&[f64], usize)]| -> Tensor {
        let data = rows
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&mean).zip(&sd).map(|((v, m), s)| (v - m) / s))
            .collect();
        Tensor::new(vec![rows.len(), d], data).expect("sized above")
    };

    let mut store = ParamStore::new();
    let w = store.add("probe.weight", fan_in_uniform(&[2, d], d, &mut rng));
    let b = store.add("probe.bias", Tensor::zeros(&[2]));
    let mut adam = AdamState::new(&store, AdamConfig::default());
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..PROBE_EPOCHS {
        order.shuffle(&mut rng);
        for chunk in order.chunks(PROBE_BATCH) {
            let rows: Vec<(&[f64], usize)> = chunk.iter().map(|&i| train[i]).collect();
            let labels: Vec<usize> = rows.iter().map(|r| r.1).collect();
            let mut g = Graph::new();
            let x = g.input(standardize(&rows));
            let wv = g.param(&store, w);
            let bv = g.param(&store, b);
            let z = g.dense(x, wv, bv)?;
            let loss = g.softmax_cross_entropy(z, &labels)?;
            let adj = g.backward(loss)?;
            let grads = g.param_grads(&adj, &store);
            adam.step(&mut store, &grads, PROBE_LR)?;
        }
    }
    let mut g = Graph::new();
    let x = g.input(standardize(test));
    let wv = g.param(&store, w);
    let bv = g.param(&store, b);
    let z = g.dense(x, wv, bv)?;
    let wrong = g
        .value(z)
        .data()
        .chunks(2)
        .zip(test)
        .filter(|(row, (_, y))| usize::from(row[1] > row[0]) != *y)
        .count();
    let err = wrong as f64 / test.len() as f64;
    Ok((2.0 * (1.0 - 2.0 * err)).clamp(0.0, 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_constants_give_two() {
        let a = vec![vec![1.0; 4]; 100];
        let b = vec![vec![-1.0; 4]; 100];
        let ar: Vec<&[f64]> = a.iter().map(Vec::as_slice).collect();
        let br: Vec<&[f64]> = b.iter().map(Vec::as_slice).collect();
        let d = proxy_a_distance(&ar, &br, 3).unwrap();
        assert!((d - 2.0).abs() < 0.1, "{d}");
    }

    #[test]
    fn one_distribution_gives_near_zero() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut draw = || {
            (0..200)
                .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect::<Vec<Vec<f64>>>()
        };
        let (a, b) = (draw(), draw());
        let ar: Vec<&[f64]> = a.iter().map(Vec::as_slice).collect();
        let br: Vec<&[f64]> = b.iter().map(Vec::as_slice).collect();
        let d = proxy_a_distance(&ar, &br, 1).unwrap();
        assert!(d < 0.5, "{d}");
    }

    #[test]
    fn too_few_samples() {
        let a = [[0.0].as_slice(); 3];
        assert!(proxy_a_distance(&a, &a, 0).is_err());
    }
}
