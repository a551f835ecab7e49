use std::collections::HashMap;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{softmax, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param,
    Conv1d {
        input: usize,
        kernel: usize,
        bias: usize,
        stride: usize,
    },
    Dense {
        input: usize,
        weight: usize,
        bias: usize,
    },
    LeakyRelu {
        input: usize,
        slope: f64,
    },
    Reshape {
        input: usize,
    },
    GradReverse {
        input: usize,
        lambda: f64,
    },
    SoftmaxXent {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Slice {
        input: usize,
        start: usize,
    },
    Concat {
        inputs: Vec<usize>,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        input: usize,
        factor: f64,
    },
    Sum {
        input: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of recorded operations for one forward/backward pass.
///
/// Nodes are appended in evaluation order, so the node index is a
/// topological order and the reverse pass walks indices downward.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, usize>,
}

/// Adjoints of every node reached by a reverse pass.
#[derive(Debug)]
pub struct Adjoints {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Adjoints {
    /// Gradient of the loss with respect to `v`; zeros if `v` did not
    /// influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    /// Constant input; no gradient is propagated into it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Input whose gradient is tracked (used by gradient checks).
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, true)
    }

    /// Leaf bound to a stored parameter; repeated calls reuse one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&idx) = self.params.get(&id) {
            return Var(idx);
        }
        let v = self.push(store.get(id).clone(), Op::Param, true);
        self.params.insert(id, v.0);
        v
    }

    /// Valid (unpadded) 1-D convolution.
    ///
    /// `input` is `[C_in, L]` or batched `[B, C_in, L]`; `kernels` is
    /// `[C_out, C_in, k]`; `bias` is `[C_out]`. The output length is
    /// `floor((L - k) / stride) + 1`.
    pub fn conv1d(&mut self, input: Var, kernels: Var, bias: Var, stride: usize) -> Result<Var> {
        let x = &self.nodes[input.0].value;
        let w = &self.nodes[kernels.0].value;
        let b = &self.nodes[bias.0].value;
        let (batch, c_in, len) = match *x.shape() {
            [c, l] => (None, c, l),
            [n, c, l] => (Some(n), c, l),
            _ => {
                return Err(Error::dim(format!(
                    "conv1d input must be rank 2 or 3, got {:?}",
                    x.shape()
                )))
            }
        };
        let [c_out, w_in, k] = *w.shape() else {
            return Err(Error::dim(format!(
                "conv1d kernels must be rank 3, got {:?}",
                w.shape()
            )));
        };
        if w_in != c_in {
            return Err(Error::dim(format!(
                "conv1d kernels expect {w_in} input channels, input has {c_in}"
            )));
        }
        if b.shape() != [c_out] {
            return Err(Error::dim(format!(
                "conv1d bias shape {:?} != [{c_out}]",
                b.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::arg("conv1d stride must be >= 1"));
        }
        if k > len {
            return Err(Error::dim(format!(
                "conv1d kernel length {k} exceeds input length {len}"
            )));
        }
        let l_out = conv_out_len(len, k, stride);
        let nb = batch.unwrap_or(1);
        let rows = c_in * k;
        let mut out = vec![0.0; nb * c_out * l_out];
        let mut col = vec![0.0; rows * l_out];
        for bi in 0..nb {
            let xb = &x.data()[bi * c_in * len..(bi + 1) * c_in * len];
            im2col(xb, c_in, len, k, stride, l_out, &mut col);
            let ob = &mut out[bi * c_out * l_out..(bi + 1) * c_out * l_out];
            for (c, row) in ob.chunks_mut(l_out).enumerate() {
                row.fill(b.data()[c]);
            }
            gemm(
                c_out,
                rows,
                l_out,
                w.data(),
                rows as isize,
                1,
                &col,
                l_out as isize,
                1,
                1.0,
                ob,
                l_out as isize,
                1,
            );
        }
        let shape = match batch {
            Some(n) => vec![n, c_out, l_out],
            None => vec![c_out, l_out],
        };
        let rg = self.rg(input.0) || self.rg(kernels.0) || self.rg(bias.0);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Conv1d {
                input: input.0,
                kernel: kernels.0,
                bias: bias.0,
                stride,
            },
            rg,
        ))
    }

    /// Fully connected layer: `weights · input + bias` for `[n]` or
    /// batched `[B, n]` input with `weights` of shape `[m, n]`.
    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let x = &self.nodes[input.0].value;
        let w = &self.nodes[weights.0].value;
        let b = &self.nodes[bias.0].value;
        let (batch, n) = match *x.shape() {
            [n] => (None, n),
            [bsz, n] => (Some(bsz), n),
            _ => {
                return Err(Error::dim(format!(
                    "dense input must be rank 1 or 2, got {:?}",
                    x.shape()
                )))
            }
        };
        let [m, wn] = *w.shape() else {
            return Err(Error::dim(format!(
                "dense weights must be rank 2, got {:?}",
                w.shape()
            )));
        };
        if wn != n {
            return Err(Error::dim(format!(
                "dense weights have {wn} columns, input has length {n}"
            )));
        }
        if b.shape() != [m] {
            return Err(Error::dim(format!(
                "dense bias shape {:?} != [{m}]",
                b.shape()
            )));
        }
        let nb = batch.unwrap_or(1);
        let mut out = Vec::with_capacity(nb * m);
        for _ in 0..nb {
            out.extend_from_slice(b.data());
        }
        gemm(
            nb,
            n,
            m,
            x.data(),
            n as isize,
            1,
            w.data(),
            1,
            n as isize,
            1.0,
            &mut out,
            m as isize,
            1,
        );
        let shape = match batch {
            Some(bsz) => vec![bsz, m],
            None => vec![m],
        };
        let rg = self.rg(input.0) || self.rg(weights.0) || self.rg(bias.0);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Dense {
                input: input.0,
                weight: weights.0,
                bias: bias.0,
            },
            rg,
        ))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Var {
        let x = &self.nodes[input.0].value;
        let data = x
            .data()
            .iter()
            .map(|&v| if v >= 0.0 { v } else { slope * v })
            .collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(input.0);
        self.push(
            value,
            Op::LeakyRelu {
                input: input.0,
                slope,
            },
            rg,
        )
    }

    /// Row-major flatten of the whole tensor to rank 1.
    pub fn flatten(&mut self, input: Var) -> Var {
        let n = self.nodes[input.0].value.len();
        self.reshape(input, vec![n])
    }

    /// Flatten every axis except the leading batch axis.
    pub fn flatten_batch(&mut self, input: Var) -> Var {
        let x = &self.nodes[input.0].value;
        let b = x.shape()[0];
        let rest = x.len() / b;
        self.reshape(input, vec![b, rest])
    }

    fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Var {
        let value = self.nodes[input.0]
            .value
            .reshape(shape)
            .expect("size preserved");
        let rg = self.rg(input.0);
        self.push(value, Op::Reshape { input: input.0 }, rg)
    }

    /// Identity forward; the backward pass multiplies the incoming
    /// gradient by `-lambda`.
    pub fn grad_reverse(&mut self, input: Var, lambda: f64) -> Result<Var> {
        if !(lambda >= 0.0) {
            return Err(Error::arg(format!(
                "gradient reversal lambda must be >= 0, got {lambda}"
            )));
        }
        let value = self.nodes[input.0].value.clone();
        let rg = self.rg(input.0);
        Ok(self.push(
            value,
            Op::GradReverse {
                input: input.0,
                lambda,
            },
            rg,
        ))
    }

    /// Mean softmax cross-entropy over the rows of `logits` (`[K]` with one
    /// label, or `[B, K]` with `B` labels). Returns a scalar node.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = &self.nodes[logits.0].value;
        let (rows, k) = match *z.shape() {
            [k] => (1, k),
            [b, k] => (b, k),
            _ => {
                return Err(Error::dim(format!(
                    "logits must be rank 1 or 2, got {:?}",
                    z.shape()
                )))
            }
        };
        if k < 2 {
            return Err(Error::arg("cross-entropy needs at least two classes"));
        }
        if labels.len() != rows {
            return Err(Error::dim(format!(
                "{} labels for {rows} logit rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::arg(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let mut probs = Vec::with_capacity(rows * k);
        let mut total = 0.0;
        for (row, &y) in z.data().chunks(k).zip(labels) {
            total += xent_row(row, y);
            probs.extend(softmax(row));
        }
        let rg = self.rg(logits.0);
        Ok(self.push(
            Tensor::scalar(total / rows as f64),
            Op::SoftmaxXent {
                logits: logits.0,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Rows `start..end` along the leading axis.
    pub fn slice_rows(&mut self, input: Var, start: usize, end: usize) -> Result<Var> {
        let x = &self.nodes[input.0].value;
        let n = x.shape()[0];
        if x.rank() < 2 || start >= end || end > n {
            return Err(Error::dim(format!(
                "bad row slice {start}..{end} of shape {:?}",
                x.shape()
            )));
        }
        let row = x.len() / n;
        let mut shape = x.shape().to_vec();
        shape[0] = end - start;
        let value = Tensor::new(shape, x.data()[start * row..end * row].to_vec())?;
        let rg = self.rg(input.0);
        Ok(self.push(
            value,
            Op::Slice {
                input: input.0,
                start,
            },
            rg,
        ))
    }

    /// Concatenate along the leading axis.
    pub fn concat_rows(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::arg("concat of zero tensors"))?;
        let tail = self.nodes[first.0].value.shape()[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for v in inputs {
            let t = &self.nodes[v.0].value;
            if t.rank() < 2 || t.shape()[1..] != tail[..] {
                return Err(Error::dim(format!(
                    "concat shape mismatch: {:?} vs [_, {tail:?}]",
                    t.shape()
                )));
            }
            rows += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let rg = inputs.iter().any(|v| self.rg(v.0));
        let value = Tensor::new(shape, data)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.iter().map(|v| v.0).collect(),
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if x.shape() != y.shape() {
            return Err(Error::dim(format!(
                "add shapes {:?} and {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(value, Op::Add { a: a.0, b: b.0 }, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if x.shape() != y.shape() {
            return Err(Error::dim(format!(
                "mul shapes {:?} and {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(value, Op::Mul { a: a.0, b: b.0 }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let mut value = self.nodes[input.0].value.clone();
        value.scale(factor);
        let rg = self.rg(input.0);
        self.push(
            value,
            Op::Scale {
                input: input.0,
                factor,
            },
            rg,
        )
    }

    /// Sum of all entries, as a scalar node.
    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.nodes[input.0].value.data().iter().sum();
        let rg = self.rg(input.0);
        self.push(Tensor::scalar(s), Op::Sum { input: input.0 }, rg)
    }

    /// Sum of scalar nodes; `None` for an empty list.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Option<Var>> {
        let mut iter = terms.iter();
        let Some(&first) = iter.next() else {
            return Ok(None);
        };
        let mut acc = first;
        for &t in iter {
            acc = self.add(acc, t)?;
        }
        Ok(Some(acc))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Adjoints> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::arg(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Adjoints { grads, shapes })
    }

    /// Parameter gradients from a reverse pass; parameters that never
    /// entered this graph get zeros.
    pub fn param_grads(&self, adjoints: &Adjoints, store: &ParamStore) -> Gradients {
        let mut grads = Vec::with_capacity(store.len());
        for id in store.ids() {
            let g = self
                .params
                .get(&id)
                .and_then(|&idx| adjoints.grads.get(idx).and_then(Option::clone))
                .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
            grads.push(g);
        }
        Gradients::from_vec(grads)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], idx: usize, g: Tensor) {
        if !self.nodes[idx].requires_grad {
            return;
        }
        match &mut grads[idx] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn accumulate_with<F: FnOnce(&mut [f64])>(
        &self,
        grads: &mut [Option<Tensor>],
        idx: usize,
        f: F,
    ) {
        if !self.nodes[idx].requires_grad {
            return;
        }
        let slot = &mut grads[idx];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.nodes[idx].value.shape()));
        }
        f(slot.as_mut().unwrap().data_mut());
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[i].op {
            Op::Input | Op::Param => {}
            &Op::Conv1d {
                input,
                kernel,
                bias,
                stride,
            } => self.conv1d_backward(input, kernel, bias, stride, g, grads),
            &Op::Dense {
                input,
                weight,
                bias,
            } => self.dense_backward(input, weight, bias, g, grads),
            &Op::LeakyRelu { input, slope } => {
                let x = self.nodes[input].value.data();
                let data = x
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| if v >= 0.0 { gv } else { slope * gv })
                    .collect();
                let shape = self.nodes[input].value.shape().to_vec();
                self.accumulate(grads, input, Tensor::new(shape, data).unwrap());
            }
            &Op::Reshape { input } => {
                let shape = self.nodes[input].value.shape().to_vec();
                self.accumulate(grads, input, g.reshape(shape).unwrap());
            }
            &Op::GradReverse { input, lambda } => {
                let mut r = g.clone();
                r.scale(-lambda);
                self.accumulate(grads, input, r);
            }
            Op::SoftmaxXent {
                logits,
                labels,
                probs,
            } => {
                let gv = g.data()[0];
                let k = probs.len() / labels.len();
                let inv = gv / labels.len() as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * inv).collect();
                for (r, &y) in labels.iter().enumerate() {
                    d[r * k + y] -= inv;
                }
                let shape = self.nodes[*logits].value.shape().to_vec();
                self.accumulate(grads, *logits, Tensor::new(shape, d).unwrap());
            }
            &Op::Slice { input, start } => {
                let row = g.len() / g.shape()[0];
                let off = start * row;
                self.accumulate_with(grads, input, |acc| {
                    for (a, b) in acc[off..off + g.len()].iter_mut().zip(g.data()) {
                        *a += b;
                    }
                });
            }
            Op::Concat { inputs } => {
                let mut off = 0;
                for &idx in inputs {
                    let n = self.nodes[idx].value.len();
                    let part = &g.data()[off..off + n];
                    self.accumulate_with(grads, idx, |acc| {
                        for (a, b) in acc.iter_mut().zip(part) {
                            *a += b;
                        }
                    });
                    off += n;
                }
            }
            &Op::Add { a, b } => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::Mul { a, b } => {
                let (x, y) = (&self.nodes[a].value, &self.nodes[b].value);
                let ga = g.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
                let gb = g.data().iter().zip(x.data()).map(|(p, q)| p * q).collect();
                self.accumulate(grads, a, Tensor::new(x.shape().to_vec(), ga).unwrap());
                self.accumulate(grads, b, Tensor::new(y.shape().to_vec(), gb).unwrap());
            }
            &Op::Scale { input, factor } => {
                let mut r = g.clone();
                r.scale(factor);
                self.accumulate(grads, input, r);
            }
            &Op::Sum { input } => {
                let shape = self.nodes[input].value.shape();
                self.accumulate(grads, input, Tensor::filled(shape, g.data()[0]));
            }
        }
    }

    fn conv1d_backward(
        &self,
        input: usize,
        kernel: usize,
        bias: usize,
        stride: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let x = &self.nodes[input].value;
        let w = &self.nodes[kernel].value;
        let (nb, c_in, len) = match *x.shape() {
            [c, l] => (1, c, l),
            [n, c, l] => (n, c, l),
            _ => unreachable!("validated in forward"),
        };
        let [c_out, _, k] = *w.shape() else {
            unreachable!()
        };
        let l_out = conv_out_len(len, k, stride);
        let rows = c_in * k;
        let need_x = self.rg(input);
        let need_w = self.rg(kernel);
        let need_b = self.rg(bias);

        let mut dw = vec![0.0; c_out * rows];
        let mut db = vec![0.0; c_out];
        let mut dx = if need_x {
            vec![0.0; x.len()]
        } else {
            Vec::new()
        };
        let mut col = vec![0.0; rows * l_out];
        let mut dcol = vec![0.0; rows * l_out];
        for bi in 0..nb {
            let gb = &g.data()[bi * c_out * l_out..(bi + 1) * c_out * l_out];
            if need_b {
                for (c, row) in gb.chunks(l_out).enumerate() {
                    db[c] += row.iter().sum::<f64>();
                }
            }
            if need_w {
                let xb = &x.data()[bi * c_in * len..(bi + 1) * c_in * len];
                im2col(xb, c_in, len, k, stride, l_out, &mut col);
                gemm(
                    c_out,
                    l_out,
                    rows,
                    gb,
                    l_out as isize,
                    1,
                    &col,
                    1,
                    l_out as isize,
                    1.0,
                    &mut dw,
                    rows as isize,
                    1,
                );
            }
            if need_x {
                gemm(
                    rows,
                    c_out,
                    l_out,
                    w.data(),
                    1,
                    rows as isize,
                    gb,
                    l_out as isize,
                    1,
                    0.0,
                    &mut dcol,
                    l_out as isize,
                    1,
                );
                let dxb = &mut dx[bi * c_in * len..(bi + 1) * c_in * len];
                col2im(&dcol, c_in, len, k, stride, l_out, dxb);
            }
        }
        if need_x {
            self.accumulate(grads, input, Tensor::new(x.shape().to_vec(), dx).unwrap());
        }
        if need_w {
            self.accumulate(grads, kernel, Tensor::new(w.shape().to_vec(), dw).unwrap());
        }
        if need_b {
            self.accumulate(grads, bias, Tensor::new(vec![c_out], db).unwrap());
        }
    }

    fn dense_backward(
        &self,
        input: usize,
        weight: usize,
        bias: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let x = &self.nodes[input].value;
        let w = &self.nodes[weight].value;
        let [m, n] = *w.shape() else { unreachable!() };
        let nb = x.len() / n;
        if self.rg(input) {
            let mut dx = vec![0.0; x.len()];
            gemm(
                nb,
                m,
                n,
                g.data(),
                m as isize,
                1,
                w.data(),
                n as isize,
                1,
                0.0,
                &mut dx,
                n as isize,
                1,
            );
            self.accumulate(grads, input, Tensor::new(x.shape().to_vec(), dx).unwrap());
        }
        if self.rg(weight) {
            let mut dw = vec![0.0; m * n];
            gemm(
                m,
                nb,
                n,
                g.data(),
                1,
                m as isize,
                x.data(),
                n as isize,
                1,
                0.0,
                &mut dw,
                n as isize,
                1,
            );
            self.accumulate(grads, weight, Tensor::new(vec![m, n], dw).unwrap());
        }
        if self.rg(bias) {
            let mut db = vec![0.0; m];
            for row in g.data().chunks(m) {
                for (d, v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
            self.accumulate(grads, bias, Tensor::new(vec![m], db).unwrap());
        }
    }
}

/// `log_sum_exp(row) - row[y]` without cancellation when `row[y]` is
/// the dominant logit.
fn xent_row(row: &[f64], y: usize) -> f64 {
    let (top, max) = row
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        });
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, &z)| (z - max).exp())
        .sum();
    rest.ln_1p() - (row[y] - max)
}

/// Output length of a valid convolution.
pub fn conv_out_len(len: usize, k: usize, stride: usize) -> usize {
    (len - k) / stride + 1
}

fn im2col(
    x: &[f64],
    c_in: usize,
    len: usize,
    k: usize,
    stride: usize,
    l_out: usize,
    col: &mut [f64],
) {
    for ci in 0..c_in {
        let xc = &x[ci * len..(ci + 1) * len];
        for t in 0..k {
            let row = &mut col[(ci * k + t) * l_out..(ci * k + t + 1) * l_out];
            if stride == 1 {
                row.copy_from_slice(&xc[t..t + l_out]);
            } else {
                for (j, r) in row.iter_mut().enumerate() {
                    *r = xc[j * stride + t];
                }
            }
        }
    }
}

fn col2im(
    dcol: &[f64],
    c_in: usize,
    len: usize,
    k: usize,
    stride: usize,
    l_out: usize,
    dx: &mut [f64],
) {
    for ci in 0..c_in {
        let dxc = &mut dx[ci * len..(ci + 1) * len];
        for t in 0..k {
            let row = &dcol[(ci * k + t) * l_out..(ci * k + t + 1) * l_out];
            for (j, r) in row.iter().enumerate() {
                dxc[j * stride + t] += r;
            }
        }
    }
}

/// `c = a·b + beta·c` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
    rsc: isize,
    csc: isize,
) {
    let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
        (rows.saturating_sub(1)) as isize * rs + (cols.saturating_sub(1)) as isize * cs + 1
    };
    assert!(span(m, k, rsa, csa) as usize <= a.len());
    assert!(span(k, n, rsb, csb) as usize <= b.len());
    assert!(span(m, n, rsc, csc) as usize <= c.len());
    // SAFETY: the asserts above bound every index the kernel touches
    // within each slice, and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv1d_difference_kernel() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 5], &[1.0, 2.0, 3.0, 4.0, 5.0]));
        let w = g.input(t(&[1, 1, 3], &[1.0, 0.0, -1.0]));
        let b = g.input(t(&[1], &[0.0]));
        let y = g.conv1d(x, w, b, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 3]);
        assert_eq!(g.value(y).data(), &[-2.0, -2.0, -2.0]);
    }

    #[test]
    fn conv1d_output_lengths() {
        assert_eq!(conv_out_len(1000, 5, 2), 498);
        assert_eq!(conv_out_len(61, 3, 2), 30);
        assert_eq!(conv_out_len(123, 3, 2), 61);
    }

    #[test]
    fn conv1d_rejects_bad_shapes() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[2, 4]));
        let w = g.input(Tensor::zeros(&[1, 3, 3]));
        let b = g.input(Tensor::zeros(&[1]));
        assert!(matches!(g.conv1d(x, w, b, 1), Err(Error::Dimension(_))));
        let w5 = g.input(Tensor::zeros(&[1, 2, 5]));
        assert!(matches!(g.conv1d(x, w5, b, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn dense_examples() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![3.0, -1.0]));
        let w = g.input(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.input(Tensor::zeros(&[2]));
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, -1.0]);

        let x = g.input(Tensor::vector(vec![2.0, 3.0]));
        let w = g.input(t(&[1, 2], &[1.0, 1.0]));
        let b = g.input(Tensor::vector(vec![1.0]));
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[6.0]);

        let bad = g.input(Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert!(matches!(g.dense(bad, w, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn leaky_relu_forward_and_slope() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::vector(vec![1.0, -1.0, -2.0]));
        let y = g.leaky_relu(x, 0.2);
        assert_eq!(g.value(y).data(), &[1.0, -0.2, -0.4]);
        let s = g.sum(y);
        let adj = g.backward(s).unwrap();
        assert_eq!(adj.wrt(x).data(), &[1.0, 0.2, 0.2]);

        let z = g.input(Tensor::vector(vec![0.0, 2.5]));
        let out = g.leaky_relu(z, 0.2);
        assert_eq!(g.value(out).data(), &[0.0, 2.5]);
    }

    #[test]
    fn cross_entropy_examples() {
        let mut g = Graph::new();
        let z = g.input(Tensor::vector(vec![0.7; 5]));
        let l = g.softmax_cross_entropy(z, &[3]).unwrap();
        assert!((g.value(l).data()[0] - 5f64.ln()).abs() < 1e-12);

        let z = g.input(Tensor::vector(vec![10.0, -10.0]));
        let l = g.softmax_cross_entropy(z, &[0]).unwrap();
        // log(1 + e^-20)
        let want = (-20f64).exp().ln_1p();
        assert!((g.value(l).data()[0] - want).abs() < 1e-24);
        assert!((g.value(l).data()[0] - 2.061e-9).abs() < 1e-12);

        let z = g.variable(Tensor::vector(vec![0.0, 0.0]));
        let l = g.softmax_cross_entropy(z, &[0]).unwrap();
        let adj = g.backward(l).unwrap();
        assert_eq!(adj.wrt(z).data(), &[-0.5, 0.5]);

        assert!(matches!(
            g.softmax_cross_entropy(z, &[2]),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn flatten_keeps_row_order() {
        let mut g = Graph::new();
        let x = g.input(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let f = g.flatten(x);
        assert_eq!(g.value(f).shape(), &[6]);
        assert_eq!(g.value(f).data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let big = g.input(Tensor::zeros(&[81, 61]));
        let fb = g.flatten(big);
        assert_eq!(g.value(fb).shape(), &[4941]);
        let small = g.input(Tensor::zeros(&[27, 28]));
        let fs = g.flatten(small);
        assert_eq!(g.value(fs).shape(), &[756]);
    }

    #[test]
    fn grad_reverse_examples() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::vector(vec![1.5, -2.0]));
        let r = g.grad_reverse(x, 0.5).unwrap();
        assert_eq!(g.value(r).data(), &[1.5, -2.0]);
        let c = g.input(Tensor::vector(vec![1.0, -2.0]));
        let p = g.mul(r, c).unwrap();
        let s = g.sum(p);
        let adj = g.backward(s).unwrap();
        assert_eq!(adj.wrt(x).data(), &[-0.5, 1.0]);

        let mut g = Graph::new();
        let x = g.variable(Tensor::vector(vec![3.0]));
        let r = g.grad_reverse(x, 0.0).unwrap();
        let s = g.sum(r);
        let adj = g.backward(s).unwrap();
        assert_eq!(adj.wrt(x).data()[0], 0.0);
        assert!(g.grad_reverse(x, -1.0).is_err());
    }

    #[test]
    fn backward_of_weighted_sum_is_input() {
        let mut store = ParamStore::new();
        let wid = store.add("w", Tensor::vector(vec![0.3, -0.1, 2.0]));
        let unused = store.add("u", Tensor::vector(vec![1.0, 1.0]));
        let mut g = Graph::new();
        let w = g.param(&store, wid);
        let x = g.input(Tensor::vector(vec![4.0, 5.0, -6.0]));
        let p = g.mul(w, x).unwrap();
        let s = g.sum(p);
        let adj = g.backward(s).unwrap();
        let grads = g.param_grads(&adj, &store);
        assert_eq!(grads.get(wid).data(), &[4.0, 5.0, -6.0]);
        assert_eq!(grads.get(unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Argument(_))));
    }

    #[test]
    fn batched_conv_matches_per_sample() {
        let data: Vec<f64> = (0..2 * 2 * 9)
            .map(|i| ((i * 7) % 11) as f64 - 5.0)
            .collect();
        let kern: Vec<f64> = (0..3 * 2 * 3)
            .map(|i| ((i * 5) % 7) as f64 * 0.1 - 0.3)
            .collect();
        let mut g = Graph::new();
        let xb = g.input(t(&[2, 2, 9], &data));
        let w = g.input(t(&[3, 2, 3], &kern));
        let b = g.input(t(&[3], &[0.1, -0.2, 0.3]));
        let yb = g.conv1d(xb, w, b, 2).unwrap();
        for s in 0..2 {
            let xs = g.input(t(&[2, 9], &data[s * 18..(s + 1) * 18]));
            let ys = g.conv1d(xs, w, b, 2).unwrap();
            let n = g.value(ys).len();
            assert_eq!(g.value(ys).data(), &g.value(yb).data()[s * n..(s + 1) * n]);
        }
    }
}
