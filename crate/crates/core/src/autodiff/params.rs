use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total scalar count over all tensors.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Writes the versioned text checkpoint format.
    ///
    /// ```text
    /// seismda-params 1 <count>
    /// <name>\t<d0,d1,...>\t<v0 v1 ...>
    /// ```
    ///
    /// Values use shortest round-trip exponent notation, so a load
    /// reproduces every bit.
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "seismda-params 1 {}", self.tensors.len())?;
        for (name, t) in self.names.iter().zip(&self.tensors) {
            if name.contains(['\t', '\n']) {
                return Err(Error::Format(format!(
                    "parameter name {name:?} has a tab or newline"
                )));
            }
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let vals: Vec<String> = t.data().iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{name}\t{}\t{}", dims.join(","), vals.join(" "))?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty checkpoint".into()))??;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("seismda-params") || parts.next() != Some("1") {
            return Err(Error::Format(format!(
                "unrecognized checkpoint header {header:?}"
            )));
        }
        let count: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("missing parameter count".into()))?;
        let mut store = ParamStore::new();
        for line in lines.take(count) {
            let line = line?;
            let mut fields = line.splitn(3, '\t');
            let (name, dims, vals) = match (fields.next(), fields.next(), fields.next()) {
                (Some(n), Some(d), Some(v)) => (n, d, v),
                _ => return Err(Error::Format(format!("malformed parameter line {line:?}"))),
            };
            let shape = dims
                .split(',')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("bad shape for {name}: {e}")))?;
            let data = vals
                .split(' ')
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("bad value for {name}: {e}")))?;
            store.add(name, Tensor::new(shape, data)?);
        }
        if store.len() != count {
            return Err(Error::Format(format!(
                "checkpoint declares {count} parameters but holds {}",
                store.len()
            )));
        }
        Ok(store)
    }
}

/// Uniform fan-in initialization, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
pub fn fan_in_uniform<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/product agree")
}

/// Per-parameter gradients aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            grads: store
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
        }
    }

    pub(crate) fn from_vec(grads: Vec<Tensor>) -> Self {
        Gradients { grads }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn scale_param(&mut self, id: ParamId, factor: f64) {
        self.grads[id.0].scale(factor);
    }

    /// Largest absolute entry across all gradients.
    pub fn max_abs(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data().iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        store.add("conv.w", fan_in_uniform(&[4, 3, 5], 15, &mut rng));
        store.add(
            "odd",
            Tensor::vector(vec![-0.0, 1e-308, f64::MAX, 0.1 + 0.2, -7.25e-12]),
        );
        let mut buf = Vec::new();
        store.save(&mut buf).unwrap();
        let back = ParamStore::load(&buf[..]).unwrap();
        assert_eq!(back.len(), 2);
        for id in store.ids() {
            assert_eq!(store.name(id), back.name(id));
            let a: Vec<u64> = store.get(id).data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.get(id).data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let text = "seismda-params 1 2\nw\t2\t1e0 2e0\n";
        assert!(matches!(
            ParamStore::load(text.as_bytes()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn fan_in_bound_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = fan_in_uniform(&[100, 6], 6, &mut rng);
        assert!(t.data().iter().all(|v| v.abs() <= 1.0));
    }
}
