//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation as a node holding its output value
//! and whatever the backward rule needs. Nodes are appended in evaluation
//! order, so the node list is topologically sorted by construction and
//! [`Tape::backward`] is a single reverse sweep. Gradients from several
//! consumers of one node are summed.

use crate::error::{Error, Result};
use crate::ops::conv::{self, ConvGrads};
use crate::ops::deform::{self, DeformSaved};
use crate::ops::elementwise::{self as ew, Broadcast};
use crate::ops::{loss, resample};
use crate::tensor::{Dims, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Concat(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        cols: Vec<f64>,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    DeformConv2d {
        x: Var,
        w: Var,
        b: Var,
        offsets: Var,
        saved: DeformSaved,
    },
    Upsample(Var, usize),
    GlobalAvgPool(Var),
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node that needed one.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `dims` when `v` did not influence the loss.
    pub fn get_or_zeros(&self, v: Var, dims: Dims) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(dims))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Differentiable input (parameter or probed input).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> Dims {
        self.nodes[v.0].value.dims()
    }

    fn binary(&mut self, a: Var, b: Var, op: &'static str) -> Result<(Tensor, Broadcast)> {
        let (ta, tb) = (self.value(a), self.value(b));
        let kind = ew::broadcast_kind(op, ta.dims(), tb.dims())?;
        let out = match op {
            "add" => ew::add(ta, tb)?,
            "sub" => ew::sub(ta, tb)?,
            _ => ew::mul(ta, tb)?,
        };
        Ok((out, kind))
    }

    /// `a + b`; `b` may be (1, c, 1, 1) or (n, c, 1, 1).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, kind) = self.binary(a, b, "add")?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b, kind), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, kind) = self.binary(a, b, "sub")?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b, kind), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, kind) = self.binary(a, b, "mul")?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b, kind), ng))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = ew::scale(self.value(a), k);
        let ng = self.needs(&[a]);
        self.push(out, Op::Scale(a, k), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ew::relu(self.value(x));
        let ng = self.needs(&[x]);
        self.push(out, Op::Relu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = ew::sigmoid(self.value(x));
        let ng = self.needs(&[x]);
        self.push(out, Op::Sigmoid(x), ng)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ew::concat_channels(self.value(a), self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Concat(a, b), ng))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (out, cols) = conv::conv2d_raw(self.value(x), self.value(w), self.value(b), stride, pad)?;
        let ng = self.needs(&[x, w, b]);
        Ok(self.push(
            out,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                cols: if ng { cols } else { Vec::new() },
            },
            ng,
        ))
    }

    /// Transposed convolution; weight layout (in, out, k, k).
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = conv::conv_transpose2d_raw(self.value(x), self.value(w), self.value(b), stride, pad)?;
        let ng = self.needs(&[x, w, b]);
        Ok(self.push(
            out,
            Op::ConvTranspose2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            ng,
        ))
    }

    /// Stride-1 deformable convolution; `offsets` is (n, 2N, h, w).
    pub fn deform_conv2d(&mut self, x: Var, w: Var, b: Var, offsets: Var) -> Result<Var> {
        let (out, saved) = deform::deform_conv2d_raw(self.value(x), self.value(w), self.value(b), self.value(offsets))?;
        let ng = self.needs(&[x, w, b, offsets]);
        Ok(self.push(
            out,
            Op::DeformConv2d {
                x,
                w,
                b,
                offsets,
                saved,
            },
            ng,
        ))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let out = resample::upsample_nearest(self.value(x), factor)?;
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::Upsample(x, factor), ng))
    }

    pub fn upsample_nearest2x(&mut self, x: Var) -> Var {
        self.upsample_nearest(x, 2).expect("factor 2 is valid")
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let out = resample::global_avg_pool(self.value(x));
        let ng = self.needs(&[x]);
        self.push(out, Op::GlobalAvgPool(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let ng = self.needs(&[x]);
        self.push(out, Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        let ng = self.needs(&[x]);
        self.push(out, Op::Mean(x), ng)
    }

    /// Pixel-mean softmax cross-entropy against `labels` laid out (n, h, w).
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (l, probs) = loss::cross_entropy_raw(self.value(logits), labels)?;
        let ng = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(l),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Reverse sweep from a one-element node. The seed gradient is 1.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got dims {}",
                root.value.dims()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b, kind) => {
                self.accumulate(grads, *a, g.clone());
                if self.nodes[b.0].needs_grad {
                    self.accumulate(grads, *b, ew::reduce_to(g, self.dims(*b), *kind));
                }
            }
            Op::Sub(a, b, kind) => {
                self.accumulate(grads, *a, g.clone());
                if self.nodes[b.0].needs_grad {
                    let r = ew::reduce_to(g, self.dims(*b), *kind);
                    self.accumulate(grads, *b, r.map(|v| -v));
                }
            }
            Op::Mul(a, b, kind) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    self.accumulate(grads, *a, ew::mul(g, tb)?);
                }
                if self.nodes[b.0].needs_grad {
                    let prod = Tensor::from_parts(
                        g.dims(),
                        g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect(),
                    );
                    self.accumulate(grads, *b, ew::reduce_to(&prod, tb.dims(), *kind));
                }
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, ew::scale(g, *k)),
            Op::Relu(x) => {
                let t = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::from_parts(t.dims(), data));
            }
            Op::Sigmoid(x) => {
                let s = &node.value;
                let data = g
                    .data()
                    .iter()
                    .zip(s.data())
                    .map(|(&gv, &sv)| gv * sv * (1.0 - sv))
                    .collect();
                self.accumulate(grads, *x, Tensor::from_parts(s.dims(), data));
            }
            Op::Concat(a, b) => {
                let (ga, gb) = ew::split_channels(g, self.dims(*a).c);
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                cols,
            } => {
                let ConvGrads { x: gx, w: gw, b: gb } = conv::conv2d_backward(
                    self.dims(*x),
                    self.value(*w),
                    cols,
                    g,
                    *stride,
                    *pad,
                    self.nodes[x.0].needs_grad,
                )?;
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx);
                }
                self.accumulate(grads, *w, gw);
                self.accumulate(grads, *b, gb);
            }
            Op::ConvTranspose2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let ConvGrads { x: gx, w: gw, b: gb } = conv::conv_transpose2d_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    *stride,
                    *pad,
                    self.nodes[x.0].needs_grad,
                )?;
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx);
                }
                self.accumulate(grads, *w, gw);
                self.accumulate(grads, *b, gb);
            }
            Op::DeformConv2d {
                x,
                w,
                b,
                offsets,
                saved,
            } => {
                let dg = deform::deform_conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    self.dims(*offsets),
                    saved,
                    g,
                    self.nodes[x.0].needs_grad,
                    self.nodes[offsets.0].needs_grad,
                )?;
                if let Some(gx) = dg.x {
                    self.accumulate(grads, *x, gx);
                }
                self.accumulate(grads, *w, dg.w);
                self.accumulate(grads, *b, dg.b);
                if let Some(go) = dg.offsets {
                    self.accumulate(grads, *offsets, go);
                }
            }
            Op::Upsample(x, factor) => {
                let gx = resample::upsample_nearest_backward(g, self.dims(*x), *factor);
                self.accumulate(grads, *x, gx);
            }
            Op::GlobalAvgPool(x) => {
                let gx = resample::global_avg_pool_backward(g, self.dims(*x));
                self.accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                self.accumulate(grads, *x, Tensor::full(self.dims(*x), gv));
            }
            Op::Mean(x) => {
                let d = self.dims(*x);
                let gv = g.data()[0] / d.len() as f64;
                self.accumulate(grads, *x, Tensor::full(d, gv));
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let d = self.dims(*logits);
                let plane = d.plane();
                let scale = g.data()[0] / (d.n * plane) as f64;
                let mut gl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (i, &l) in labels.iter().enumerate() {
                    let (n, pix) = (i / plane, i % plane);
                    gl[n * d.sample_len() + l * plane + pix] -= scale;
                }
                self.accumulate(grads, *logits, Tensor::from_parts(d, gl));
            }
        }
        Ok(())
    }

    /// Short name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        match self.nodes[v.0].op {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Concat(..) => "concat_channels",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::DeformConv2d { .. } => "deform_conv2d",
            Op::Upsample(..) => "upsample_nearest",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }

    /// First node, in evaluation order, whose value is not finite.
    pub fn first_non_finite(&self) -> Option<Var> {
        self.nodes.iter().position(|n| !n.value.is_finite()).map(Var)
    }
}
