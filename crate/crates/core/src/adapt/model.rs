use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    conv_out_len, fan_in_uniform, softmax_rows, Graph, ParamId, ParamStore, Tensor, Var,
};
use crate::error::{Error, Result};
use crate::Task;

/// One convolution layer: output channels, kernel width, stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

const fn conv(out_channels: usize, kernel: usize, stride: usize) -> ConvSpec {
    ConvSpec {
        out_channels,
        kernel,
        stride,
    }
}

/// `(channels, length)` per layer.
pub type LayerShapes = Vec<(usize, usize)>;

/// Layer layout of the extractor and predictor. The last extractor
/// convolution is linear; every other convolution is followed by
/// LeakyReLU. The predictor ends with flatten and a dense layer to `K`
/// logits, each discriminator is flatten and a dense layer to 2 logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub extractor: Vec<ConvSpec>,
    pub predictor: Vec<ConvSpec>,
    pub leaky_slope: f64,
}

impl ArchSpec {
    /// Four-layer extractor and three-layer predictor used for
    /// five-class quantification.
    pub fn quantification() -> Self {
        ArchSpec {
            extractor: vec![
                conv(81, 5, 2),
                conv(81, 5, 2),
                conv(81, 3, 2),
                conv(81, 3, 2),
            ],
            predictor: vec![conv(243, 3, 2), conv(81, 3, 1), conv(27, 3, 1)],
            leaky_slope: 0.2,
        }
    }

    /// Reduced stack for binary detection: three extractor and two
    /// predictor convolutions.
    pub fn detection() -> Self {
        ArchSpec {
            extractor: vec![conv(81, 5, 2), conv(81, 5, 2), conv(81, 3, 2)],
            predictor: vec![conv(81, 3, 2), conv(27, 3, 1)],
            leaky_slope: 0.2,
        }
    }

    /// Narrow detection-shaped network for quick runs on small machines.
    pub fn compact(width: usize) -> Self {
        let w = width.max(1);
        ArchSpec {
            extractor: vec![conv(w, 5, 2), conv(w, 5, 2), conv(w, 3, 2)],
            predictor: vec![conv(w, 3, 2), conv(w.div_ceil(2), 3, 1)],
            leaky_slope: 0.2,
        }
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Detection => Self::detection(),
            Task::Quantification => Self::quantification(),
        }
    }

    /// `(channels, length)` after each extractor and predictor layer for
    /// input length `l`.
    pub fn shapes(&self, l: usize) -> Result<(LayerShapes, LayerShapes)> {
        if self.extractor.is_empty() {
            return Err(Error::Architecture(
                "extractor needs at least one convolution".into(),
            ));
        }
        let mut cur = (3, l);
        let mut walk = |layers: &[ConvSpec], part: &str| -> Result<Vec<(usize, usize)>> {
            let mut out = Vec::new();
            for (i, c) in layers.iter().enumerate() {
                if c.kernel == 0 || c.stride == 0 || c.out_channels == 0 {
                    return Err(Error::Architecture(format!(
                        "{part} conv{} has a zero size",
                        i + 1
                    )));
                }
                if c.kernel > cur.1 {
                    return Err(Error::Architecture(format!(
                        "{part} conv{}: kernel {} longer than its input ({} samples) for l = {l}",
                        i + 1,
                        c.kernel,
                        cur.1
                    )));
                }
                cur = (c.out_channels, conv_out_len(cur.1, c.kernel, c.stride));
                out.push(cur);
            }
            Ok(out)
        };
        let ext = walk(&self.extractor, "extractor")?;
        let pred = walk(&self.predictor, "predictor")?;
        Ok((ext, pred))
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    w: ParamId,
    b: ParamId,
    stride: usize,
}

/// Which parameter group a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Extractor,
    Predictor,
    Discriminator(usize),
}

/// Extractor, predictor and per-source discriminators sharing one
/// parameter store.
#[derive(Debug, Clone)]
pub struct PhyMdanModel {
    pub arch: ArchSpec,
    pub num_classes: usize,
    pub num_domains: usize,
    pub input_len: usize,
    pub store: ParamStore,
    extractor: Vec<Layer>,
    predictor: Vec<Layer>,
    head: Layer,
    discriminators: Vec<Layer>,
    feature_shape: (usize, usize),
    groups: Vec<Group>,
}

impl PhyMdanModel {
    /// Builds and initializes a model; weights are fan-in uniform, biases
    /// zero, drawn from a generator seeded with `seed`.
    pub fn new(
        arch: ArchSpec,
        num_classes: usize,
        num_domains: usize,
        l: usize,
        seed: u64,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Architecture(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if !(arch.leaky_slope > 0.0 && arch.leaky_slope < 1.0) {
            return Err(Error::Architecture(format!(
                "leaky slope {} outside (0, 1)",
                arch.leaky_slope
            )));
        }
        let (ext_shapes, pred_shapes) = arch.shapes(l)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut groups = Vec::new();
        let add_conv = |store: &mut ParamStore,
                        groups: &mut Vec<Group>,
                        name: String,
                        c_in: usize,
                        c: &ConvSpec,
                        g: Group,
                        rng: &mut ChaCha8Rng| {
            let fan_in = c_in * c.kernel;
            let w = store.add(
                format!("{name}.weight"),
                fan_in_uniform(&[c.out_channels, c_in, c.kernel], fan_in, rng),
            );
            let b = store.add(format!("{name}.bias"), Tensor::zeros(&[c.out_channels]));
            groups.extend([g, g]);
            Layer {
                w,
                b,
                stride: c.stride,
            }
        };
        let mut c_in = 3;
        let mut extractor = Vec::new();
        for (i, c) in arch.extractor.iter().enumerate() {
            extractor.push(add_conv(
                &mut store,
                &mut groups,
                format!("extractor.conv{}", i + 1),
                c_in,
                c,
                Group::Extractor,
                &mut rng,
            ));
            c_in = c.out_channels;
        }
        let feature_shape = *ext_shapes.last().unwrap();
        let mut predictor = Vec::new();
        for (i, c) in arch.predictor.iter().enumerate() {
            predictor.push(add_conv(
                &mut store,
                &mut groups,
                format!("predictor.conv{}", i + 1),
                c_in,
                c,
                Group::Predictor,
                &mut rng,
            ));
            c_in = c.out_channels;
        }
        let (pc, pl) = pred_shapes.last().copied().unwrap_or(feature_shape);
        let add_dense = |store: &mut ParamStore,
                         groups: &mut Vec<Group>,
                         name: String,
                         n_in: usize,
                         n_out: usize,
                         g: Group,
                         rng: &mut ChaCha8Rng| {
            let w = store.add(
                format!("{name}.weight"),
                fan_in_uniform(&[n_out, n_in], n_in, rng),
            );
            let b = store.add(format!("{name}.bias"), Tensor::zeros(&[n_out]));
            groups.extend([g, g]);
            Layer { w, b, stride: 1 }
        };
        let head = add_dense(
            &mut store,
            &mut groups,
            "predictor.dense".into(),
            pc * pl,
            num_classes,
            Group::Predictor,
            &mut rng,
        );
        let width = feature_shape.0 * feature_shape.1;
        let discriminators = (0..num_domains)
            .map(|i| {
                add_dense(
                    &mut store,
                    &mut groups,
                    format!("discriminator{}.dense", i + 1),
                    width,
                    2,
                    Group::Discriminator(i),
                    &mut rng,
                )
            })
            .collect();
        Ok(PhyMdanModel {
            arch,
            num_classes,
            num_domains,
            input_len: l,
            store,
            extractor,
            predictor,
            head,
            discriminators,
            feature_shape,
            groups,
        })
    }

    /// `(channels, length)` of the extracted feature map.
    pub fn feature_shape(&self) -> (usize, usize) {
        self.feature_shape
    }

    /// Input width of every discriminator.
    pub fn discriminator_width(&self) -> usize {
        self.feature_shape.0 * self.feature_shape.1
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_values()
    }

    /// Parameter count excluding discriminators.
    pub fn num_classifier_parameters(&self) -> usize {
        self.store
            .ids()
            .filter(|id| !matches!(self.groups[id.index()], Group::Discriminator(_)))
            .map(|id| self.store.get(id).len())
            .sum()
    }

    pub fn group_of(&self, id: ParamId) -> Group {
        self.groups[id.index()]
    }

    /// Batch tensor `[B, 3, l]` from flat `3 x l` inputs.
    pub fn batch_tensor(&self, inputs: &[&[f64]]) -> Result<Tensor> {
        let l = self.input_len;
        let mut data = Vec::with_capacity(inputs.len() * 3 * l);
        for (i, x) in inputs.iter().enumerate() {
            if x.len() != 3 * l {
                return Err(Error::dim(format!(
                    "input {i} has {} values, model expects 3 x {l}",
                    x.len()
                )));
            }
            data.extend_from_slice(x);
        }
        if inputs.is_empty() {
            return Err(Error::arg("empty batch"));
        }
        Tensor::new(vec![inputs.len(), 3, l], data)
    }

    /// Extractor output `[B, C, L]` for a batch `[B, 3, l]`.
    pub fn features(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let last = self.extractor.len() - 1;
        let mut h = x;
        for (i, layer) in self.extractor.iter().enumerate() {
            h = self.conv(g, h, layer)?;
            if i != last {
                h = g.leaky_relu(h, self.arch.leaky_slope);
            }
        }
        Ok(h)
    }

    /// Predictor logits `[B, K]` from features `[B, C, L]`.
    pub fn predictor_logits(&self, g: &mut Graph, features: Var) -> Result<Var> {
        let mut h = features;
        for layer in &self.predictor {
            h = self.conv(g, h, layer)?;
            h = g.leaky_relu(h, self.arch.leaky_slope);
        }
        let flat = g.flatten_batch(h);
        let w = g.param(&self.store, self.head.w);
        let b = g.param(&self.store, self.head.b);
        g.dense(flat, w, b)
    }

    /// Logits `[B, 2]` of discriminator `i`; column 1 means "source".
    pub fn discriminator_logits(&self, g: &mut Graph, features: Var, i: usize) -> Result<Var> {
        let layer = self.discriminators.get(i).ok_or_else(|| {
            Error::arg(format!(
                "model has {} discriminators, asked for {}",
                self.num_domains,
                i + 1
            ))
        })?;
        let flat = g.flatten_batch(features);
        let w = g.param(&self.store, layer.w);
        let b = g.param(&self.store, layer.b);
        g.dense(flat, w, b)
    }

    fn conv(&self, g: &mut Graph, x: Var, layer: &Layer) -> Result<Var> {
        let w = g.param(&self.store, layer.w);
        let b = g.param(&self.store, layer.b);
        g.conv1d(x, w, b, layer.stride)
    }

    /// Class probabilities of each input.
    pub fn predict_proba(&self, inputs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(64) {
            let mut g = Graph::new();
            let x = g.input(self.batch_tensor(chunk)?);
            let f = self.features(&mut g, x)?;
            let z = self.predictor_logits(&mut g, f)?;
            out.extend(softmax_rows(g.value(z)));
        }
        Ok(out)
    }

    /// Flattened extractor features of each input.
    pub fn extract_features(&self, inputs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let width = self.discriminator_width();
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(64) {
            let mut g = Graph::new();
            let x = g.input(self.batch_tensor(chunk)?);
            let f = self.features(&mut g, x)?;
            out.extend(g.value(f).data().chunks(width).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    /// Discriminator `i`'s probability that each input is a source sample.
    pub fn discriminator_proba(&self, inputs: &[&[f64]], i: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(64) {
            let mut g = Graph::new();
            let x = g.input(self.batch_tensor(chunk)?);
            let f = self.features(&mut g, x)?;
            let z = self.discriminator_logits(&mut g, f, i)?;
            out.extend(softmax_rows(g.value(z)).into_iter().map(|p| p[1]));
        }
        Ok(out)
    }

    /// Writes a header naming the architecture followed by the parameter
    /// listing. Round-trips bit-exactly through [`Self::load`].
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        let header = CheckpointHeader {
            format: CHECKPOINT_TAG.into(),
            arch: self.arch.clone(),
            num_classes: self.num_classes,
            num_domains: self.num_domains,
            input_len: self.input_len,
        };
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
        self.store.save(out)
    }

    pub fn load<R: BufRead>(mut input: R) -> Result<Self> {
        let mut line = String::new();
        input.read_line(&mut line)?;
        let header: CheckpointHeader = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        if header.format != CHECKPOINT_TAG {
            return Err(Error::Format(format!(
                "unknown checkpoint format {:?}",
                header.format
            )));
        }
        let mut model = PhyMdanModel::new(
            header.arch,
            header.num_classes,
            header.num_domains,
            header.input_len,
            0,
        )?;
        let store = ParamStore::load(input)?;
        if store.len() != model.store.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, architecture needs {}",
                store.len(),
                model.store.len()
            )));
        }
        for id in model.store.ids() {
            let (want, got) = (model.store.get(id), store.get(id));
            if store.name(id) != model.store.name(id) || want.shape() != got.shape() {
                return Err(Error::Format(format!(
                    "checkpoint tensor {} {:?} does not match {} {:?}",
                    store.name(id),
                    got.shape(),
                    model.store.name(id),
                    want.shape()
                )));
            }
        }
        model.store = store;
        Ok(model)
    }
}

const CHECKPOINT_TAG: &str = "seismda-model-1";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    arch: ArchSpec,
    num_classes: usize,
    num_domains: usize,
    input_len: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantification_sizes() {
        let m = PhyMdanModel::new(ArchSpec::quantification(), 5, 4, 1000, 1).unwrap();
        assert_eq!(m.feature_shape(), (81, 61));
        assert_eq!(m.discriminator_width(), 4941);
        let n = m.num_parameters();
        assert!((1e5..5e5).contains(&(n as f64)), "{n}");
    }

    #[test]
    fn discriminator_count() {
        let m = PhyMdanModel::new(ArchSpec::compact(4), 2, 3, 200, 1).unwrap();
        let discs = m
            .store
            .ids()
            .filter(|&id| matches!(m.group_of(id), Group::Discriminator(_)))
            .count();
        assert_eq!(discs, 6);
    }

    #[test]
    fn too_short_input_names_layer() {
        let err = PhyMdanModel::new(ArchSpec::quantification(), 5, 1, 40, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("conv"), "{msg}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = PhyMdanModel::new(ArchSpec::compact(3), 2, 2, 100, 9).unwrap();
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        let back = PhyMdanModel::load(&buf[..]).unwrap();
        for id in m.store.ids() {
            let (a, b) = (m.store.get(id).data(), back.store.get(id).data());
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back.arch, m.arch);
    }
}
