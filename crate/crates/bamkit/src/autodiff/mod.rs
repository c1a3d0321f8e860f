//! Reverse-mode automatic differentiation on a recorded operation tape.
//!
//! A [`Tape`] owns every tensor produced during a forward pass. Named leaves
//! hold parameters and inputs; taps mark intermediate activations whose
//! values (and, after [`Tape::backward`], gradients) must stay retrievable.
//! Backward replays the recorded ops in exact reverse order, so two
//! identical forward+backward runs produce bit-identical gradients.

mod adam;
mod kernels;

pub use adam::{adam_step, AdamConfig, AdamState};

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{DType, Element, Tensor};
use kernels::{ConvDims, PoolDims};

/// Handle to a node recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: usize,
        kernels: usize,
        bias: usize,
        stride: usize,
        padding: usize,
    },
    Relu {
        input: usize,
    },
    MaxPool2d {
        input: usize,
        argmax: Vec<u32>,
    },
    Dense {
        input: usize,
        weights: usize,
        bias: usize,
    },
    Softmax {
        input: usize,
    },
    CrossEntropy {
        probs: usize,
        label: usize,
    },
    Reshape {
        input: usize,
    },
    Dropout {
        input: usize,
        keep: Vec<u8>,
        rate: f64,
    },
    Select {
        input: usize,
        index: usize,
    },
    Sum {
        input: usize,
    },
    /// Per-channel mean over the spatial dims: [C,H,W] -> [C].
    MeanSpatial {
        input: usize,
    },
    Scale {
        input: usize,
        factor: f64,
    },
    /// Adds a constant at chosen flat indices; identity for gradients.
    /// Used to probe activation sensitivities with finite differences.
    Offset {
        input: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients keyed by leaf or tap name.
pub type GradMap = BTreeMap<String, Tensor>;

/// Recorded forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaves: Vec<(String, usize)>,
    taps: Vec<(String, usize)>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Register a named leaf (parameter or input). Its gradient appears in
    /// the map returned by [`Tape::backward`].
    pub fn leaf(&mut self, name: &str, value: Tensor) -> NodeId {
        let id = self.push(value, Op::Leaf);
        self.leaves.push((name.to_string(), id.0));
        id
    }

    /// Register an unnamed constant; no gradient is reported for it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Mark a node as a retained activation.
    pub fn tap(&mut self, name: &str, id: NodeId) {
        self.taps.push((name.to_string(), id.0));
    }

    /// Value of a tapped activation recorded during forward.
    pub fn tap_value(&self, name: &str) -> Option<&Tensor> {
        self.taps
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, id)| &self.nodes[id].value)
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let (xs, ks, bs) = (
            self.value(input).shape().to_vec(),
            self.value(kernels).shape().to_vec(),
            self.value(bias).shape().to_vec(),
        );
        let mismatch = |detail: String| Error::ShapeMismatch {
            op: "conv2d",
            detail,
        };
        if xs.len() != 3 {
            return Err(mismatch(format!("input must be [C,H,W], got {xs:?}")));
        }
        if ks.len() != 4 {
            return Err(mismatch(format!(
                "kernels must be [C_out,C_in,kh,kw], got {ks:?}"
            )));
        }
        if ks[1] != xs[0] {
            return Err(mismatch(format!(
                "kernel C_in {} != input channels {}",
                ks[1], xs[0]
            )));
        }
        if bs != [ks[0]] {
            return Err(mismatch(format!(
                "bias must be [{}] to match C_out, got {bs:?}",
                ks[0]
            )));
        }
        let dims = ConvDims::new(xs[0], xs[1], xs[2], ks[0], ks[2], ks[3], stride, padding)
            .ok_or_else(|| {
                mismatch(format!(
                    "kernel {}x{} does not fit {}x{} input with padding {padding}, stride {stride}",
                    ks[2], ks[3], xs[1], xs[2]
                ))
            })?;
        let out_shape = vec![dims.c_out, dims.h_out, dims.w_out];
        let value = match self.value(input).dtype() {
            DType::F32 => self.conv_fwd_typed::<f32>(input, kernels, bias, &dims, &out_shape)?,
            DType::F64 => self.conv_fwd_typed::<f64>(input, kernels, bias, &dims, &out_shape)?,
        };
        Ok(self.push(
            value,
            Op::Conv2d {
                input: input.0,
                kernels: kernels.0,
                bias: bias.0,
                stride,
                padding,
            },
        ))
    }

    fn conv_fwd_typed<T: Element>(
        &self,
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        dims: &ConvDims,
        out_shape: &[usize],
    ) -> Result<Tensor> {
        let x = self.value(input).try_slice::<T>("conv2d")?;
        let k = self.value(kernels).try_slice::<T>("conv2d")?;
        let b = self.value(bias).try_slice::<T>("conv2d")?;
        let out = kernels::conv2d_forward(x, k, b, dims);
        Ok(T::into_tensor(out_shape.to_vec(), out))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let value = match self.value(input).dtype() {
            DType::F32 => {
                let x = self.value(input).as_f32().unwrap();
                Tensor::from_f32(self.value(input).shape(), kernels::relu_forward(x))
            }
            DType::F64 => {
                let x = self.value(input).as_f64().unwrap();
                Tensor::from_f64(self.value(input).shape(), kernels::relu_forward(x))
            }
        };
        self.push(value, Op::Relu { input: input.0 })
    }

    pub fn maxpool2d(&mut self, input: NodeId, k: usize, stride: usize) -> Result<NodeId> {
        let xs = self.value(input).shape().to_vec();
        if xs.len() != 3 {
            return Err(Error::ShapeMismatch {
                op: "maxpool2d",
                detail: format!("input must be [C,H,W], got {xs:?}"),
            });
        }
        let dims = PoolDims::new(xs[0], xs[1], xs[2], k, stride).ok_or(Error::ShapeMismatch {
            op: "maxpool2d",
            detail: format!("window {k} (stride {stride}) invalid for {}x{}", xs[1], xs[2]),
        })?;
        let shape = vec![dims.c, dims.h_out, dims.w_out];
        let (value, argmax) = match self.value(input).dtype() {
            DType::F32 => {
                let (out, am) = kernels::maxpool_forward(self.value(input).as_f32().unwrap(), &dims);
                (Tensor::from_f32(&shape, out), am)
            }
            DType::F64 => {
                let (out, am) = kernels::maxpool_forward(self.value(input).as_f64().unwrap(), &dims);
                (Tensor::from_f64(&shape, out), am)
            }
        };
        Ok(self.push(
            value,
            Op::MaxPool2d {
                input: input.0,
                argmax,
            },
        ))
    }

    pub fn dense(&mut self, input: NodeId, weights: NodeId, bias: NodeId) -> Result<NodeId> {
        let n = self.value(input).len();
        let ws = self.value(weights).shape().to_vec();
        if ws.len() != 2 || ws[1] != n {
            return Err(Error::ShapeMismatch {
                op: "dense",
                detail: format!("weights {ws:?} incompatible with input length {n}"),
            });
        }
        let m = ws[0];
        if self.value(bias).shape() != [m] {
            return Err(Error::ShapeMismatch {
                op: "dense",
                detail: format!("bias must be [{m}], got {:?}", self.value(bias).shape()),
            });
        }
        let value = match self.value(input).dtype() {
            DType::F32 => self.dense_fwd_typed::<f32>(input, weights, bias, m, n)?,
            DType::F64 => self.dense_fwd_typed::<f64>(input, weights, bias, m, n)?,
        };
        Ok(self.push(
            value,
            Op::Dense {
                input: input.0,
                weights: weights.0,
                bias: bias.0,
            },
        ))
    }

    fn dense_fwd_typed<T: Element>(
        &self,
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
        m: usize,
        n: usize,
    ) -> Result<Tensor> {
        let x = self.value(input).try_slice::<T>("dense")?;
        let w = self.value(weights).try_slice::<T>("dense")?;
        let b = self.value(bias).try_slice::<T>("dense")?;
        Ok(T::into_tensor(vec![m], kernels::dense_forward(x, w, b, m, n)))
    }

    pub fn softmax(&mut self, input: NodeId) -> Result<NodeId> {
        if self.value(input).is_empty() {
            return Err(Error::EmptyInput { op: "softmax" });
        }
        let value = match self.value(input).dtype() {
            DType::F32 => Tensor::from_f32(
                self.value(input).shape(),
                kernels::softmax_forward(self.value(input).as_f32().unwrap()),
            ),
            DType::F64 => Tensor::from_f64(
                self.value(input).shape(),
                kernels::softmax_forward(self.value(input).as_f64().unwrap()),
            ),
        };
        Ok(self.push(value, Op::Softmax { input: input.0 }))
    }

    pub fn cross_entropy(&mut self, probs: NodeId, label: usize) -> Result<NodeId> {
        let m = self.value(probs).len();
        if label >= m {
            return Err(Error::LabelOutOfRange { label, classes: m });
        }
        let value = match self.value(probs).dtype() {
            DType::F32 => Tensor::from_f32(
                &[1],
                vec![kernels::cross_entropy_forward(
                    self.value(probs).as_f32().unwrap(),
                    label,
                )],
            ),
            DType::F64 => Tensor::from_f64(
                &[1],
                vec![kernels::cross_entropy_forward(
                    self.value(probs).as_f64().unwrap(),
                    label,
                )],
            ),
        };
        Ok(self.push(
            value,
            Op::CrossEntropy {
                probs: probs.0,
                label,
            },
        ))
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(input).reshaped(shape)?;
        Ok(self.push(value, Op::Reshape { input: input.0 }))
    }

    /// Inverted dropout: kept elements are scaled by 1/(1-rate). Only used
    /// during training; inference paths simply never record this op.
    pub fn dropout<R: Rng>(&mut self, input: NodeId, rate: f64, rng: &mut R) -> NodeId {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
        let n = self.value(input).len();
        let keep: Vec<u8> = (0..n).map(|_| (rng.gen::<f64>() >= rate) as u8).collect();
        let scale = 1.0 / (1.0 - rate);
        let shape = self.value(input).shape().to_vec();
        let value = match self.value(input).dtype() {
            DType::F32 => {
                let x = self.value(input).as_f32().unwrap();
                Tensor::from_f32(
                    &shape,
                    x.iter()
                        .zip(&keep)
                        .map(|(&v, &k)| if k == 1 { v * scale as f32 } else { 0.0 })
                        .collect(),
                )
            }
            DType::F64 => {
                let x = self.value(input).as_f64().unwrap();
                Tensor::from_f64(
                    &shape,
                    x.iter()
                        .zip(&keep)
                        .map(|(&v, &k)| if k == 1 { v * scale } else { 0.0 })
                        .collect(),
                )
            }
        };
        self.push(
            value,
            Op::Dropout {
                input: input.0,
                keep,
                rate,
            },
        )
    }

    /// Extract one element as a scalar node (e.g. the class logit y^c).
    pub fn select(&mut self, input: NodeId, index: usize) -> Result<NodeId> {
        let n = self.value(input).len();
        if index >= n {
            return Err(Error::ShapeMismatch {
                op: "select",
                detail: format!("index {index} out of range for {n} elements"),
            });
        }
        let value = Tensor::from_f64_vec(
            &[1],
            vec![self.value(input).at(index)],
            self.value(input).dtype(),
        );
        Ok(self.push(
            value,
            Op::Select {
                input: input.0,
                index,
            },
        ))
    }

    /// Sum all elements into a scalar node.
    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let value = match self.value(input).dtype() {
            DType::F32 => {
                let mut acc = 0.0f32;
                for &v in self.value(input).as_f32().unwrap() {
                    acc += v;
                }
                Tensor::from_f32(&[1], vec![acc])
            }
            DType::F64 => {
                let mut acc = 0.0f64;
                for &v in self.value(input).as_f64().unwrap() {
                    acc += v;
                }
                Tensor::from_f64(&[1], vec![acc])
            }
        };
        self.push(value, Op::Sum { input: input.0 })
    }

    /// Global average pooling: mean over the spatial dims of a [C,H,W]
    /// tensor, leaving one value per channel.
    pub fn mean_spatial(&mut self, input: NodeId) -> Result<NodeId> {
        let xs = self.value(input).shape().to_vec();
        if xs.len() != 3 {
            return Err(Error::ShapeMismatch {
                op: "mean_spatial",
                detail: format!("input must be [C,H,W], got {xs:?}"),
            });
        }
        let (c, hw) = (xs[0], xs[1] * xs[2]);
        let value = match self.value(input).dtype() {
            DType::F32 => {
                let x = self.value(input).as_f32().unwrap();
                let out: Vec<f32> = (0..c)
                    .map(|j| x[j * hw..(j + 1) * hw].iter().sum::<f32>() / hw as f32)
                    .collect();
                Tensor::from_f32(&[c], out)
            }
            DType::F64 => {
                let x = self.value(input).as_f64().unwrap();
                let out: Vec<f64> = (0..c)
                    .map(|j| x[j * hw..(j + 1) * hw].iter().sum::<f64>() / hw as f64)
                    .collect();
                Tensor::from_f64(&[c], out)
            }
        };
        Ok(self.push(value, Op::MeanSpatial { input: input.0 }))
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let shape = self.value(input).shape().to_vec();
        let dtype = self.value(input).dtype();
        let data = self
            .value(input)
            .to_f64_vec()
            .into_iter()
            .map(|v| v * factor)
            .collect();
        let value = Tensor::from_f64_vec(&shape, data, dtype);
        self.push(
            value,
            Op::Scale {
                input: input.0,
                factor,
            },
        )
    }

    /// Add `delta` at the given flat indices. The gradient passes through
    /// unchanged, which makes this suitable for finite-difference probes of
    /// tapped activations.
    pub fn offset(&mut self, input: NodeId, indices: &[usize], delta: f64) -> Result<NodeId> {
        let n = self.value(input).len();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::ShapeMismatch {
                op: "offset",
                detail: format!("index {bad} out of range for {n} elements"),
            });
        }
        let shape = self.value(input).shape().to_vec();
        let dtype = self.value(input).dtype();
        let mut data = self.value(input).to_f64_vec();
        for &i in indices {
            data[i] += delta;
        }
        let value = Tensor::from_f64_vec(&shape, data, dtype);
        Ok(self.push(value, Op::Offset { input: input.0 }))
    }

    /// Reverse sweep from a scalar seed node. Returns the gradient of the
    /// seed with respect to every named leaf and every tapped activation.
    pub fn backward(&self, seed: NodeId) -> Result<GradMap> {
        let seed_value = self.value(seed);
        if seed_value.len() != 1 {
            return Err(Error::SeedNotScalar {
                shape: seed_value.shape().to_vec(),
            });
        }
        match seed_value.dtype() {
            DType::F32 => self.backward_typed::<f32>(seed),
            DType::F64 => self.backward_typed::<f64>(seed),
        }
    }

    fn backward_typed<T: Element>(&self, seed: NodeId) -> Result<GradMap> {
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[seed.0] = Some(vec![T::ONE]);

        // Taps on op outputs must survive the sweep even though their
        // incoming gradient is consumed when the op propagates it.
        let mut retain = vec![false; self.nodes.len()];
        for &(_, id) in &self.taps {
            retain[id] = true;
        }
        let mut saved: BTreeMap<usize, Vec<T>> = BTreeMap::new();

        // Contributions are built in fresh buffers and added in, so a node
        // feeding the same op through several slots accumulates correctly.
        fn deposit<T: Element>(grads: &mut [Option<Vec<T>>], id: usize, contrib: Vec<T>) {
            match &mut grads[id] {
                Some(existing) => {
                    for (e, c) in existing.iter_mut().zip(contrib) {
                        *e += c;
                    }
                }
                slot => *slot = Some(contrib),
            }
        }

        for i in (0..=seed.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            if retain[i] {
                saved.insert(i, gout.clone());
            }
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(gout);
                    continue;
                }
                Op::Conv2d {
                    input,
                    kernels: kid,
                    bias,
                    stride,
                    padding,
                } => {
                    let xs = self.nodes[*input].value.shape();
                    let ks = self.nodes[*kid].value.shape();
                    let dims = ConvDims::new(
                        xs[0], xs[1], xs[2], ks[0], ks[2], ks[3], *stride, *padding,
                    )
                    .expect("dims validated at record time");
                    let x = self.nodes[*input].value.try_slice::<T>("conv2d")?;
                    let k = self.nodes[*kid].value.try_slice::<T>("conv2d")?;
                    let mut gx = vec![T::ZERO; x.len()];
                    let mut gk = vec![T::ZERO; k.len()];
                    let mut gb = vec![T::ZERO; ks[0]];
                    kernels::conv2d_backward(x, k, &gout, &dims, &mut gx, &mut gk, &mut gb);
                    deposit(&mut grads, *input, gx);
                    deposit(&mut grads, *kid, gk);
                    deposit(&mut grads, *bias, gb);
                }
                Op::Relu { input } => {
                    let x = self.nodes[*input].value.try_slice::<T>("relu")?;
                    let mut gx = vec![T::ZERO; x.len()];
                    kernels::relu_backward(x, &gout, &mut gx);
                    deposit(&mut grads, *input, gx);
                }
                Op::MaxPool2d { input, argmax, .. } => {
                    let mut gx = vec![T::ZERO; self.nodes[*input].value.len()];
                    kernels::maxpool_backward(argmax, &gout, &mut gx);
                    deposit(&mut grads, *input, gx);
                }
                Op::Dense {
                    input,
                    weights,
                    bias,
                } => {
                    let x = self.nodes[*input].value.try_slice::<T>("dense")?;
                    let w = self.nodes[*weights].value.try_slice::<T>("dense")?;
                    let (m, n) = (gout.len(), x.len());
                    let mut gx = vec![T::ZERO; n];
                    let mut gw = vec![T::ZERO; w.len()];
                    let mut gb = vec![T::ZERO; m];
                    kernels::dense_backward(x, w, &gout, m, n, &mut gx, &mut gw, &mut gb);
                    deposit(&mut grads, *input, gx);
                    deposit(&mut grads, *weights, gw);
                    deposit(&mut grads, *bias, gb);
                }
                Op::Softmax { input } => {
                    let probs = node.value.try_slice::<T>("softmax")?;
                    let mut gx = vec![T::ZERO; probs.len()];
                    kernels::softmax_backward(probs, &gout, &mut gx);
                    deposit(&mut grads, *input, gx);
                }
                Op::CrossEntropy { probs, label } => {
                    let p = self.nodes[*probs].value.try_slice::<T>("cross_entropy")?;
                    let mut gp = vec![T::ZERO; p.len()];
                    kernels::cross_entropy_backward(p, *label, gout[0], &mut gp);
                    deposit(&mut grads, *probs, gp);
                }
                Op::Reshape { input } | Op::Offset { input } => {
                    deposit(&mut grads, *input, gout);
                }
                Op::Dropout { input, keep, rate } => {
                    let scale = T::from_f64(1.0 / (1.0 - rate));
                    let gx: Vec<T> = gout
                        .iter()
                        .zip(keep)
                        .map(|(&g, &k)| if k == 1 { g * scale } else { T::ZERO })
                        .collect();
                    deposit(&mut grads, *input, gx);
                }
                Op::Select { input, index } => {
                    let mut gx = vec![T::ZERO; self.nodes[*input].value.len()];
                    gx[*index] = gout[0];
                    deposit(&mut grads, *input, gx);
                }
                Op::Sum { input } => {
                    let n = self.nodes[*input].value.len();
                    deposit(&mut grads, *input, vec![gout[0]; n]);
                }
                Op::MeanSpatial { input } => {
                    let xs = self.nodes[*input].value.shape();
                    let hw = xs[1] * xs[2];
                    let inv = T::from_f64(1.0 / hw as f64);
                    let mut gx = vec![T::ZERO; self.nodes[*input].value.len()];
                    for (j, &g) in gout.iter().enumerate() {
                        for p in 0..hw {
                            gx[j * hw + p] = g * inv;
                        }
                    }
                    deposit(&mut grads, *input, gx);
                }
                Op::Scale { input, factor } => {
                    let f = T::from_f64(*factor);
                    let gx: Vec<T> = gout.iter().map(|&g| g * f).collect();
                    deposit(&mut grads, *input, gx);
                }
            }
        }

        let mut map = GradMap::new();
        for (name, id) in self.leaves.iter().chain(self.taps.iter()) {
            let shape = self.nodes[*id].value.shape().to_vec();
            let grad = match saved.get(id).or(grads[*id].as_ref()) {
                Some(g) => T::into_tensor(shape, g.clone()),
                None => Tensor::zeros(&shape, T::DTYPE),
            };
            map.insert(name.clone(), grad);
        }
        Ok(map)
    }
}
