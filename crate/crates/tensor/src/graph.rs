//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in execution order. Because inputs
//! always exist before the op that consumes them, the tape is topologically
//! sorted by construction and [`Graph::backward`] is a single reverse sweep.

use std::fmt::Write as _;

use crate::error::{mismatch, Result, TensorError};
use crate::ops::activation::Activation;
use crate::ops::broadcast::{self, BroadcastPlan};
use crate::ops::conv::{self, Conv2dOptions, ConvGeom};
use crate::ops::kernels;
use crate::ops::matmul;
use crate::ops::norm::{self, LayerNormCache};
use crate::ops::shuffle::{self, ShuffleDirection};
use crate::ops::softmax;
use crate::real::Real;
use crate::tensor::{dims4, numel, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        dims: (usize, usize, usize),
        cache: LayerNormCache<T>,
    },
    Activation {
        x: Var,
        kind: Activation,
    },
    SimpleGate {
        x: Var,
    },
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    GlobalAvgPool {
        x: Var,
    },
    PixelShuffle {
        x: Var,
        factor: usize,
        direction: ShuffleDirection,
    },
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
        plan: BroadcastPlan,
    },
    Binary {
        a: Var,
        b: Var,
        kind: BinaryKind,
        plan: BroadcastPlan,
    },
    Scale {
        x: Var,
        factor: T,
    },
    AddScalar {
        x: Var,
    },
    Reduce {
        x: Var,
        mean: bool,
    },
    Reshape {
        x: Var,
    },
    TransposeLast2 {
        x: Var,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    L2Normalize {
        x: Var,
        eps: T,
        norms: Vec<T>,
    },
    SquaredError {
        pred: Var,
        target: Var,
        weights: Option<Tensor<T>>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::LayerNorm { .. } => "layer_norm_channels",
            Op::Activation { kind, .. } => kind.name(),
            Op::SimpleGate { .. } => "simple_gate",
            Op::Softmax { .. } => "softmax",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::PixelShuffle { direction: ShuffleDirection::Down, .. } => "pixel_shuffle_down",
            Op::PixelShuffle { direction: ShuffleDirection::Up, .. } => "pixel_shuffle_up",
            Op::MatMul { .. } => "matmul",
            Op::Binary { kind: BinaryKind::Add, .. } => "add",
            Op::Binary { kind: BinaryKind::Sub, .. } => "sub",
            Op::Binary { kind: BinaryKind::Mul, .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::AddScalar { .. } => "add_scalar",
            Op::Reduce { mean: false, .. } => "sum",
            Op::Reduce { mean: true, .. } => "mean",
            Op::Reshape { .. } => "reshape",
            Op::TransposeLast2 { .. } => "transpose",
            Op::Narrow { .. } => "narrow",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::SquaredError { .. } => "squared_error",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { input, weight, bias, .. } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::MatMul { a, b, .. } | Op::Binary { a, b, .. } => vec![*a, *b],
            Op::SquaredError { pred, target, .. } => vec![*pred, *target],
            Op::Activation { x, .. }
            | Op::SimpleGate { x }
            | Op::Softmax { x, .. }
            | Op::GlobalAvgPool { x }
            | Op::PixelShuffle { x, .. }
            | Op::Scale { x, .. }
            | Op::AddScalar { x }
            | Op::Reduce { x, .. }
            | Op::Reshape { x }
            | Op::TransposeLast2 { x }
            | Op::Narrow { x, .. }
            | Op::L2Normalize { x, .. } => vec![*x],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation with per-node values and gradients.
///
/// Graphs are single-writer and single-threaded; independent graphs may be
/// built on different threads.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    visits: usize,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            visits: 0,
        }
    }

    /// Adds a leaf. Gradients are only computed for leaves created with
    /// `requires_grad` and for ops that (transitively) depend on them.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Shorthand for a leaf that tracks gradients.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Shorthand for a leaf without gradient tracking.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Consumes the graph, returning the value of `v`.
    pub fn into_value(mut self, v: Var) -> Tensor<T> {
        self.nodes.swap_remove(v.0).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Total number of nodes (leaves and ops).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded (non-leaf) operations.
    pub fn op_count(&self) -> usize {
        self.nodes.iter().filter(|n| !matches!(n.op, Op::Leaf)).count()
    }

    /// Number of ops whose backward rule ran during the last backward call.
    pub fn last_backward_visits(&self) -> usize {
        self.visits
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        #[cfg(debug_assertions)]
        {
            let inputs_finite = op.inputs().iter().all(|v| self.nodes[v.0].value.all_finite());
            debug_assert!(
                !inputs_finite || value.all_finite(),
                "{} produced non-finite output from finite inputs",
                op.name()
            );
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let rg = self.any_grad(&op.inputs());
        self.push(value, op, rg)
    }

    // ----------------------------------------------------------------- ops

    /// Cross-correlation of N×C×H×W `input` with O×(C/groups)×kH×kW `weight`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, opts: Conv2dOptions) -> Result<Var> {
        let geom = ConvGeom::new(
            self.shape(input),
            self.shape(weight),
            bias.map(|b| self.shape(b)),
            opts,
        )?;
        let out = conv::forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(geom.output_shape().to_vec(), out)?;
        Ok(self.push_op(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    /// Layer normalization over the channel axis at every spatial location.
    pub fn layer_norm_channels(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        const OP: &str = "layer_norm_channels";
        let (n, c, h, w) = dims4(self.shape(x), OP)?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            let len = numel(self.shape(v));
            if len != c {
                return Err(mismatch(OP, format!("{name} length"), c, len));
            }
        }
        if !(eps > T::zero()) {
            return Err(TensorError::InvalidArgument {
                op: OP,
                msg: "eps must be positive".into(),
            });
        }
        let dims = (n, c, h * w);
        let (y, cache) = norm::layer_norm_forward(
            self.value(x).data(),
            dims,
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let value = Tensor::new(vec![n, c, h, w], y)?;
        Ok(self.push_op(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                dims,
                cache,
            },
        ))
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Var {
        let value = self.value(x).map(|v| kind.apply(v));
        self.push_op(value, Op::Activation { x, kind })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(Activation::Relu, x)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.activation(Activation::Gelu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(Activation::Sigmoid, x)
    }

    /// Elementwise product of the first and second channel halves.
    pub fn simple_gate(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = dims4(self.shape(x), "simple_gate")?;
        if c % 2 != 0 {
            return Err(TensorError::Divisibility {
                op: "simple_gate",
                what: "channel count".into(),
                value: c,
                divisor: 2,
            });
        }
        let half = c / 2 * h * w;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * half);
        for ni in 0..n {
            let s = &src[ni * 2 * half..][..2 * half];
            out.extend(s[..half].iter().zip(&s[half..]).map(|(&a, &b)| a * b));
        }
        let value = Tensor::new(vec![n, c / 2, h, w], out)?;
        Ok(self.push_op(value, Op::SimpleGate { x }))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                op: "softmax",
                axis,
                rank: shape.len(),
            });
        }
        let outer = numel(&shape[..axis]);
        let len = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let y = softmax::forward(self.value(x).data(), outer, len, inner);
        let value = Tensor::new(shape, y)?;
        Ok(self.push_op(value, Op::Softmax { x, outer, len, inner }))
    }

    /// Per-channel spatial mean: N×C×H×W → N×C×1×1.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = dims4(self.shape(x), "global_avg_pool")?;
        let hw = h * w;
        if hw == 0 {
            return Err(TensorError::InvalidArgument {
                op: "global_avg_pool",
                msg: "empty spatial extent".into(),
            });
        }
        let inv = T::one() / T::lit(hw as f64);
        let src = self.value(x).data();
        let out: Vec<T> = (0..n * c).map(|i| kernels::sum(&src[i * hw..][..hw]) * inv).collect();
        let value = Tensor::new(vec![n, c, 1, 1], out)?;
        Ok(self.push_op(value, Op::GlobalAvgPool { x }))
    }

    /// `Down`: N×C×H×W → N×(C·r²)×(H/r)×(W/r); `Up` is the exact inverse.
    pub fn pixel_shuffle(&mut self, x: Var, factor: usize, direction: ShuffleDirection) -> Result<Var> {
        const OP: &str = "pixel_shuffle";
        let (n, c, h, w) = dims4(self.shape(x), OP)?;
        let r = factor;
        if r == 0 {
            return Err(TensorError::InvalidArgument {
                op: OP,
                msg: "factor must be positive".into(),
            });
        }
        let src = self.value(x).data();
        let (shape, out) = match direction {
            ShuffleDirection::Down => {
                for (what, v) in [("height", h), ("width", w)] {
                    if v % r != 0 {
                        return Err(TensorError::Divisibility {
                            op: OP,
                            what: what.into(),
                            value: v,
                            divisor: r,
                        });
                    }
                }
                (
                    vec![n, c * r * r, h / r, w / r],
                    shuffle::space_to_depth(src, (n, c, h, w), r),
                )
            }
            ShuffleDirection::Up => {
                if c % (r * r) != 0 {
                    return Err(TensorError::Divisibility {
                        op: OP,
                        what: "channel count".into(),
                        value: c,
                        divisor: r * r,
                    });
                }
                let full = (n, c / (r * r), h * r, w * r);
                (
                    vec![full.0, full.1, full.2, full.3],
                    shuffle::depth_to_space(src, full, r),
                )
            }
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.push_op(value, Op::PixelShuffle { x, factor, direction }))
    }

    /// Batched matrix product over the last two axes; leading axes broadcast.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        const OP: &str = "matmul";
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(TensorError::Rank {
                op: OP,
                expected: 2,
                got: if sa.len() < 2 { sa } else { sb },
            });
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(mismatch(OP, "inner dimension", k, k2));
        }
        let plan = BroadcastPlan::new(OP, &sa[..sa.len() - 2], &sb[..sb.len() - 2])?;
        let mut shape = plan.out_shape.clone();
        shape.extend([m, n]);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); numel(&shape)];
        plan.for_each_run(|o, oa, ob, len, ia, ib| {
            for i in 0..len {
                let (ma, mb, mc) = (oa + i * ia, ob + i * ib, o + i);
                matmul::gemm_nn(
                    m,
                    k,
                    n,
                    &da[ma * m * k..][..m * k],
                    &db[mb * k * n..][..k * n],
                    &mut out[mc * m * n..][..m * n],
                );
            }
        });
        let value = Tensor::new(shape, out)?;
        Ok(self.push_op(value, Op::MatMul { a, b, m, k, n, plan }))
    }

    fn binary(&mut self, a: Var, b: Var, kind: BinaryKind, op: &'static str) -> Result<Var> {
        let plan = BroadcastPlan::new(op, self.shape(a), self.shape(b))?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let out = match kind {
            BinaryKind::Add => broadcast::apply(&plan, da, db, |x, y| x + y),
            BinaryKind::Sub => broadcast::apply(&plan, da, db, |x, y| x - y),
            BinaryKind::Mul => broadcast::apply(&plan, da, db, |x, y| x * y),
        };
        let value = Tensor::new(plan.out_shape.clone(), out)?;
        Ok(self.push_op(value, Op::Binary { a, b, kind, plan }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Sub, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul, "mul")
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push_op(value, Op::Scale { x, factor })
    }

    pub fn add_scalar(&mut self, x: Var, offset: T) -> Var {
        let value = self.value(x).map(|v| v + offset);
        self.push_op(value, Op::AddScalar { x })
    }

    fn reduce(&mut self, x: Var, axes: &[usize], mean: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut out_shape = shape.clone();
        for &ax in axes {
            if ax >= shape.len() {
                return Err(TensorError::InvalidAxis {
                    op: if mean { "mean" } else { "sum" },
                    axis: ax,
                    rank: shape.len(),
                });
            }
            out_shape[ax] = 1;
        }
        let mut out = broadcast::reduce_to(self.value(x).data(), &shape, &out_shape)?;
        if mean {
            let count = numel(&shape) / numel(&out_shape).max(1);
            let inv = T::one() / T::lit(count as f64);
            out.iter_mut().for_each(|v| *v *= inv);
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push_op(value, Op::Reduce { x, mean }))
    }

    /// Sum over `axes`, keeping them as unit dims.
    pub fn sum(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(x, axes, false)
    }

    /// Mean over `axes`, keeping them as unit dims.
    pub fn mean(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(x, axes, true)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        let v = self.reduce(x, &axes, false).expect("axes in range");
        self.reshape(v, &[]).expect("single element")
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        let v = self.reduce(x, &axes, true).expect("axes in range");
        self.reshape(v, &[]).expect("single element")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push_op(value, Op::Reshape { x }))
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(TensorError::Rank {
                op: "transpose",
                expected: 2,
                got: shape,
            });
        }
        let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let out = transpose_blocks(self.value(x).data(), r, c);
        let mut new_shape = shape;
        let l = new_shape.len();
        new_shape.swap(l - 2, l - 1);
        let value = Tensor::new(new_shape, out)?;
        Ok(self.push_op(value, Op::TransposeLast2 { x }))
    }

    /// Slice `start..start + len` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                op: "narrow",
                axis,
                rank: shape.len(),
            });
        }
        if start + len > shape[axis] {
            return Err(mismatch("narrow", format!("axis {axis} extent"), shape[axis], start + len));
        }
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * shape[axis] + start) * inner..][..len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let value = Tensor::new(new_shape, out)?;
        Ok(self.push_op(value, Op::Narrow { x, axis, start }))
    }

    /// Divides each vector along the last axis by `max(‖v‖₂, eps)`.
    pub fn l2_normalize_last(&mut self, x: Var, eps: T) -> Var {
        let shape = self.shape(x).to_vec();
        let len = *shape.last().unwrap_or(&1);
        let (y, norms) = norm::l2_normalize_forward(self.value(x).data(), len, eps);
        let value = Tensor::new(shape, y).expect("same shape");
        self.push_op(value, Op::L2Normalize { x, eps, norms })
    }

    /// Mean over all elements of `w ⊙ (pred − target)²`, where the optional
    /// N×1×H×W `weights` scale every channel of a pixel and carry no gradient.
    /// Without weights this is the mean squared error.
    pub fn squared_error(&mut self, pred: Var, target: Var, weights: Option<Tensor<T>>) -> Result<Var> {
        const OP: &str = "squared_error";
        let shape = self.shape(pred).to_vec();
        if self.shape(target) != shape.as_slice() {
            return Err(TensorError::Broadcast {
                op: OP,
                a: shape,
                b: self.shape(target).to_vec(),
            });
        }
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let total = match &weights {
            None => p.iter().zip(t).fold(T::zero(), |acc, (&a, &b)| {
                let d = a - b;
                acc + d * d
            }),
            Some(w) => {
                let (n, c, h, wd) = dims4(&shape, OP)?;
                if w.shape() != [n, 1, h, wd] {
                    return Err(TensorError::Broadcast {
                        op: OP,
                        a: shape.clone(),
                        b: w.shape().to_vec(),
                    });
                }
                let hw = h * wd;
                let wd_ = w.data();
                let mut acc = T::zero();
                for i in 0..p.len() {
                    let d = p[i] - t[i];
                    let pix = (i / (c * hw)) * hw + i % hw;
                    acc += d * d * wd_[pix];
                }
                acc
            }
        };
        let value = Tensor::scalar(total / T::lit(p.len() as f64));
        Ok(self.push_op(value, Op::SquaredError { pred, target, weights }))
    }

    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.squared_error(pred, target, None)
    }

    // ------------------------------------------------------------ backward

    /// Clears all gradients, then back-propagates from the scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.zero_grad();
        self.backward_accumulate(loss)
    }

    /// Back-propagates from `loss`, adding into existing leaf gradients.
    pub fn backward_accumulate(&mut self, loss: Var) -> Result<()> {
        let loss_shape = self.shape(loss).to_vec();
        if numel(&loss_shape) != 1 {
            return Err(TensorError::NotScalar(loss_shape));
        }
        self.visits = 0;
        for (node, grad) in self.nodes.iter().zip(self.grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) {
                *grad = None;
            }
        }
        let seed = Tensor::full(&loss_shape, T::one());
        self.accumulate(loss, seed);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gout) = self.grads[id].take() else {
                continue;
            };
            self.visits += 1;
            let contributions = self.op_backward(id, &gout)?;
            self.grads[id] = Some(gout);
            for (v, g) in contributions {
                let shape = self.shape(v).to_vec();
                self.accumulate(v, Tensor::new(shape, g)?);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        match &mut self.grads[v.0] {
            Some(existing) => kernels::add_assign(existing.data_mut(), g.data()),
            slot @ None => *slot = Some(g),
        }
    }

    fn op_backward(&self, id: usize, gout: &Tensor<T>) -> Result<Vec<(Var, Vec<T>)>> {
        let node = &self.nodes[id];
        let g = gout.data();
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                if rg(*input) {
                    out.push((*input, conv::backward_input(geom, g, val(*weight))));
                }
                if rg(*weight) {
                    out.push((*weight, conv::backward_weight(geom, g, val(*input))));
                }
                if let Some(b) = bias {
                    if rg(*b) {
                        out.push((*b, conv::backward_bias(geom, g)));
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                dims,
                cache,
            } => {
                let (gx, gg, gb) = norm::layer_norm_backward(g, cache, *dims, val(*gamma));
                if rg(*x) {
                    out.push((*x, gx));
                }
                if rg(*gamma) {
                    out.push((*gamma, gg));
                }
                if rg(*beta) {
                    out.push((*beta, gb));
                }
            }
            Op::Activation { x, kind } => {
                let xs = val(*x);
                let ys = node.value.data();
                let gx = g
                    .iter()
                    .zip(xs.iter().zip(ys))
                    .map(|(&gi, (&xi, &yi))| gi * kind.derivative(xi, yi))
                    .collect();
                out.push((*x, gx));
            }
            Op::SimpleGate { x } => {
                let (n, c, h, w) = dims4(self.shape(*x), "simple_gate")?;
                let half = c / 2 * h * w;
                let src = val(*x);
                let mut gx = vec![T::zero(); src.len()];
                for ni in 0..n {
                    let s = &src[ni * 2 * half..][..2 * half];
                    let go = &g[ni * half..][..half];
                    let d = &mut gx[ni * 2 * half..][..2 * half];
                    for i in 0..half {
                        d[i] = go[i] * s[half + i];
                        d[half + i] = go[i] * s[i];
                    }
                }
                out.push((*x, gx));
            }
            Op::Softmax { x, outer, len, inner } => {
                out.push((*x, softmax::backward(g, node.value.data(), *outer, *len, *inner)));
            }
            Op::GlobalAvgPool { x } => {
                let (n, c, h, w) = dims4(self.shape(*x), "global_avg_pool")?;
                let hw = h * w;
                let inv = T::one() / T::lit(hw as f64);
                let mut gx = Vec::with_capacity(n * c * hw);
                for &gi in g.iter().take(n * c) {
                    gx.extend(std::iter::repeat_n(gi * inv, hw));
                }
                out.push((*x, gx));
            }
            Op::PixelShuffle { x, factor, direction } => {
                let (n, c, h, w) = dims4(self.shape(*x), "pixel_shuffle")?;
                let gx = match direction {
                    ShuffleDirection::Down => shuffle::depth_to_space(g, (n, c, h, w), *factor),
                    ShuffleDirection::Up => {
                        let r = *factor;
                        shuffle::space_to_depth(g, (n, c / (r * r), h * r, w * r), r)
                    }
                };
                out.push((*x, gx));
            }
            Op::MatMul { a, b, m, k, n, plan } => {
                let (m, k, n) = (*m, *k, *n);
                let (da, db) = (val(*a), val(*b));
                let (need_a, need_b) = (rg(*a), rg(*b));
                let mut ga = vec![T::zero(); if need_a { da.len() } else { 0 }];
                let mut gb = vec![T::zero(); if need_b { db.len() } else { 0 }];
                plan.for_each_run(|o, oa, ob, len, ia, ib| {
                    for i in 0..len {
                        let (ma, mb, mc) = (oa + i * ia, ob + i * ib, o + i);
                        let gc = &g[mc * m * n..][..m * n];
                        if need_a {
                            matmul::gemm_nt(m, n, k, gc, &db[mb * k * n..][..k * n], &mut ga[ma * m * k..][..m * k]);
                        }
                        if need_b {
                            matmul::gemm_tn(k, m, n, &da[ma * m * k..][..m * k], gc, &mut gb[mb * k * n..][..k * n]);
                        }
                    }
                });
                if need_a {
                    out.push((*a, ga));
                }
                if need_b {
                    out.push((*b, gb));
                }
            }
            Op::Binary { a, b, kind, plan } => {
                let (la, lb) = (val(*a).len(), val(*b).len());
                match kind {
                    BinaryKind::Add | BinaryKind::Sub => {
                        if rg(*a) {
                            out.push((*a, broadcast::reduce_grad(plan, g, la, true, None, false)));
                        }
                        if rg(*b) {
                            let neg = *kind == BinaryKind::Sub;
                            out.push((*b, broadcast::reduce_grad(plan, g, lb, false, None, neg)));
                        }
                    }
                    BinaryKind::Mul => {
                        if rg(*a) {
                            out.push((*a, broadcast::reduce_grad(plan, g, la, true, Some(val(*b)), false)));
                        }
                        if rg(*b) {
                            out.push((*b, broadcast::reduce_grad(plan, g, lb, false, Some(val(*a)), false)));
                        }
                    }
                }
            }
            Op::Scale { x, factor } => {
                out.push((*x, g.iter().map(|&v| v * *factor).collect()));
            }
            Op::AddScalar { x } | Op::Reshape { x } => {
                out.push((*x, g.to_vec()));
            }
            Op::Reduce { x, mean } => {
                let in_shape = self.shape(*x);
                let mut gx = broadcast::expand(g, node.value.shape(), in_shape)?;
                if *mean {
                    let count = numel(in_shape) / node.value.len().max(1);
                    let inv = T::one() / T::lit(count as f64);
                    gx.iter_mut().for_each(|v| *v *= inv);
                }
                out.push((*x, gx));
            }
            Op::TransposeLast2 { x } => {
                let s = node.value.shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                out.push((*x, transpose_blocks(g, r, c)));
            }
            Op::Narrow { x, axis, start } => {
                let in_shape = self.shape(*x);
                let outer = numel(&in_shape[..*axis]);
                let inner = numel(&in_shape[*axis + 1..]);
                let len = node.value.shape()[*axis];
                let mut gx = vec![T::zero(); numel(in_shape)];
                for o in 0..outer {
                    gx[(o * in_shape[*axis] + start) * inner..][..len * inner]
                        .copy_from_slice(&g[o * len * inner..][..len * inner]);
                }
                out.push((*x, gx));
            }
            Op::L2Normalize { x, eps, norms } => {
                let len = *node.value.shape().last().unwrap_or(&1);
                out.push((*x, norm::l2_normalize_backward(g, node.value.data(), norms, len, *eps)));
            }
            Op::SquaredError { pred, target, weights } => {
                let (p, t) = (val(*pred), val(*target));
                let scale = g[0] * T::lit(2.0) / T::lit(p.len() as f64);
                let gp: Vec<T> = match weights {
                    None => p.iter().zip(t).map(|(&a, &b)| scale * (a - b)).collect(),
                    Some(w) => {
                        let s = self.shape(*pred);
                        let (c, hw) = (s[1], s[2] * s[3]);
                        let wd = w.data();
                        (0..p.len())
                            .map(|i| scale * (p[i] - t[i]) * wd[(i / (c * hw)) * hw + i % hw])
                            .collect()
                    }
                };
                if rg(*target) {
                    out.push((*target, gp.iter().map(|&v| -v).collect()));
                }
                if rg(*pred) {
                    out.push((*pred, gp));
                }
            }
        }
        Ok(out)
    }

    /// Text edge list of the recorded graph, one `src -> dst op` line per
    /// edge, preceded by one line per node.
    pub fn dump_edges(&self) -> String {
        let mut s = String::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let _ = writeln!(
                s,
                "node {i} {} {:?}{}",
                node.op.name(),
                node.value.shape(),
                if node.requires_grad { " grad" } else { "" }
            );
        }
        for (i, node) in self.nodes.iter().enumerate() {
            for input in node.op.inputs() {
                let _ = writeln!(s, "{} -> {i} {}", input.0, node.op.name());
            }
        }
        s
    }
}

fn transpose_blocks<T: Real>(src: &[T], r: usize, c: usize) -> Vec<T> {
    let block = r * c;
    let mut out = vec![T::zero(); src.len()];
    if block == 0 {
        return out;
    }
    for (sb, db) in src.chunks(block).zip(out.chunks_mut(block)) {
        for i in 0..r {
            for j in 0..c {
                db[j * r + i] = sb[i * c + j];
            }
        }
    }
    out
}
