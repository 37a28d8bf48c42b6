//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s; calling
//! [`Graph::backward`] on a scalar walks the tape in reverse. Nodes that do
//! not depend on a trainable parameter (or on an input created with
//! [`Graph::input_with_grad`]) are skipped, so frozen sub-networks cost no
//! backward work.

use std::collections::HashMap;

use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvOpts {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for ConvOpts {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    /// `b`'s shape is a suffix of `a`'s; `b` repeats over the leading axes.
    AddBroadcast(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    MatMul {
        a: Var,
        b: Var,
        trans_a: bool,
        trans_b: bool,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        opts: ConvOpts,
    },
    Upsample(Var),
    MeanAxis {
        x: Var,
        axis: usize,
    },
    Sum(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    L2Normalize(Var),
    /// Scalar function with its gradient already evaluated.
    Custom {
        inputs: Vec<Var>,
        local_grads: Vec<Tensor>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'a> {
    store: Option<&'a ParamStore>,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    /// A graph without parameters, for computations on inputs only.
    pub fn detached() -> Graph<'static> {
        Graph {
            store: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// An input whose gradient is recorded by [`Graph::backward`].
    pub fn input_with_grad(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// The node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self.store.expect("graph has no parameter store");
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: Op::Param,
            requires_grad: store.is_trainable(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let mut out = va.clone();
        out.add_assign(vb);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        assert!(
            sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb,
            "cannot broadcast {sb:?} onto {sa:?}"
        );
        let inner = vb.numel();
        let mut out = va.clone();
        for chunk in out.data_mut().chunks_mut(inner) {
            for (o, x) in chunk.iter_mut().zip(vb.data()) {
                *o += x;
            }
        }
        self.push(out, Op::AddBroadcast(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(va.shape(), data);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_ex(a, b, false, false)
    }

    /// 2-D product `op(a) * op(b)` with optional transposes.
    pub fn matmul_ex(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(va.rank() == 2 && vb.rank() == 2, "matmul expects matrices");
        let (m, k) = if trans_a { (va.dim(1), va.dim(0)) } else { (va.dim(0), va.dim(1)) };
        let (k2, n) = if trans_b { (vb.dim(1), vb.dim(0)) } else { (vb.dim(0), vb.dim(1)) };
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, va.data(), trans_a, vb.data(), trans_b, &mut out, 0.0);
        self.push(
            Tensor::new(&[m, n], out),
            Op::MatMul {
                a,
                b,
                trans_a,
                trans_b,
            },
            &[a, b],
        )
    }

    /// Batched product of `[B, m, k]` with `[B, k, n]` (or `[B, n, k]` when
    /// `trans_b`).
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(va.rank() == 3 && vb.rank() == 3, "bmm expects rank-3 tensors");
        let (batch, m, k) = (va.dim(0), va.dim(1), va.dim(2));
        let n = if trans_b { vb.dim(1) } else { vb.dim(2) };
        let k2 = if trans_b { vb.dim(2) } else { vb.dim(1) };
        assert_eq!(batch, vb.dim(0));
        assert_eq!(k, k2, "bmm inner dimension mismatch");
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &va.data()[i * m * k..(i + 1) * m * k],
                false,
                &vb.data()[i * k * n..(i + 1) * k * n],
                trans_b,
                &mut out[i * m * n..(i + 1) * m * n],
                0.0,
            );
        }
        self.push(
            Tensor::new(&[batch, m, n], out),
            Op::BatchMatMul { a, b, trans_b },
            &[a, b],
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = self.value(a).clone().reshape(shape);
        self.push(out, Op::Reshape(a), &[a])
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Var {
        let out = self.value(a).permute(perm);
        self.push(out, Op::Permute(a, perm.to_vec()), &[a])
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let v = self.value(x);
        let shape = v.shape();
        assert!(start + len <= shape[axis], "narrow out of range");
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&v.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        self.push(
            Tensor::new(&out_shape, data),
            Op::Narrow { x, axis, start },
            &[x],
        )
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Var {
        assert!(!xs.is_empty(), "concat of nothing");
        let first = self.value(xs[0]).shape().to_vec();
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut total = 0;
        for &x in xs {
            let s = self.value(x).shape();
            assert!(
                s.len() == first.len()
                    && s[..axis] == first[..axis]
                    && s[axis + 1..] == first[axis + 1..],
                "concat shape mismatch"
            );
            total += s[axis];
        }
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let v = self.value(x);
                let len = v.dim(axis) * inner;
                data.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        self.push(
            Tensor::new(&shape, data),
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            xs,
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = *v.shape().last().expect("softmax of a scalar");
        let mut out = v.clone();
        for row in out.data_mut().chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        self.push(out, Op::Softmax(a), &[a])
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let v = self.value(x);
        let n = *v.shape().last().expect("layer norm of a scalar");
        let (g, b) = (self.value(gamma), self.value(beta));
        assert_eq!(g.shape(), &[n]);
        assert_eq!(b.shape(), &[n]);
        let mut out = v.clone();
        for row in out.data_mut().chunks_mut(n) {
            let (mean, rstd) = moments(row, eps);
            for (j, x) in row.iter_mut().enumerate() {
                *x = (*x - mean) * rstd * g.data()[j] + b.data()[j];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                eps,
            },
            &[x, gamma, beta],
        )
    }

    /// 2-D convolution of `x: [N, C, H, W]` with `w: [O, C, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, opts: ConvOpts) -> Var {
        let (vx, vw) = (self.value(x), self.value(w));
        let geo = ConvGeometry::new(vx.shape(), vw.shape(), opts);
        let mut out = vec![0.0; geo.n * geo.o * geo.out_hw()];
        let mut cols = vec![0.0; geo.col_rows() * geo.out_hw()];
        for i in 0..geo.n {
            let xs = &vx.data()[i * geo.in_size()..(i + 1) * geo.in_size()];
            let os = &mut out[i * geo.o * geo.out_hw()..(i + 1) * geo.o * geo.out_hw()];
            if geo.is_pointwise() {
                gemm(geo.o, geo.col_rows(), geo.out_hw(), vw.data(), false, xs, false, os, 0.0);
            } else {
                geo.im2col(xs, &mut cols);
                gemm(geo.o, geo.col_rows(), geo.out_hw(), vw.data(), false, &cols, false, os, 0.0);
            }
        }
        if let Some(b) = b {
            let vb = self.value(b);
            assert_eq!(vb.shape(), &[geo.o], "conv bias shape");
            for chunk in out.chunks_mut(geo.out_hw()).enumerate() {
                let bias = vb.data()[chunk.0 % geo.o];
                for v in chunk.1 {
                    *v += bias;
                }
            }
        }
        let shape = [geo.n, geo.o, geo.oh, geo.ow];
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(
            Tensor::new(&shape, out),
            Op::Conv2d { x, w, b, opts },
            &parents,
        )
    }

    /// Bilinear resize of `[N, C, H, W]` to `[N, C, height, width]` with
    /// half-pixel centers (no corner alignment).
    pub fn upsample_bilinear(&mut self, x: Var, height: usize, width: usize) -> Var {
        let v = self.value(x);
        assert_eq!(v.rank(), 4, "upsample expects [N, C, H, W]");
        let (n, c, h, w) = (v.dim(0), v.dim(1), v.dim(2), v.dim(3));
        let rows = interp_table(h, height);
        let cols = interp_table(w, width);
        let mut out = vec![0.0; n * c * height * width];
        for (plane, src) in v.data().chunks(h * w).enumerate() {
            let dst = &mut out[plane * height * width..(plane + 1) * height * width];
            for (y, &(y0, y1, ly)) in rows.iter().enumerate() {
                for (xx, &(x0, x1, lx)) in cols.iter().enumerate() {
                    dst[y * width + xx] = (1.0 - ly)
                        * ((1.0 - lx) * src[y0 * w + x0] + lx * src[y0 * w + x1])
                        + ly * ((1.0 - lx) * src[y1 * w + x0] + lx * src[y1 * w + x1]);
                }
            }
        }
        self.push(
            Tensor::new(&[n, c, height, width], out),
            Op::Upsample(x),
            &[x],
        )
    }

    /// Mean over one axis, which is removed.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Var {
        let v = self.value(x);
        let shape = v.shape();
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &v.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        for d in &mut out {
            *d /= len as f64;
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        self.push(Tensor::new(&out_shape, out), Op::MeanAxis { x, axis }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Rows `ids` of `table: [V, E]`, giving `[ids.len(), E]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let v = self.value(table);
        assert_eq!(v.rank(), 2);
        let e = v.dim(1);
        let mut data = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            assert!(id < v.dim(0), "embedding id {id} out of range");
            data.extend_from_slice(&v.data()[id * e..(id + 1) * e]);
        }
        self.push(
            Tensor::new(&[ids.len(), e], data),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    /// Divides each row (last axis) by its Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = *v.shape().last().expect("normalize of a scalar");
        let mut out = v.clone();
        for row in out.data_mut().chunks_mut(n) {
            let norm = row.iter().map(|a| a * a).sum::<f64>().sqrt().max(NORM_FLOOR);
            for a in row.iter_mut() {
                *a /= norm;
            }
        }
        self.push(out, Op::L2Normalize(x), &[x])
    }

    /// Records a scalar whose value and gradient with respect to each input
    /// were computed outside the graph.
    pub fn custom_scalar(&mut self, inputs: &[Var], value: f64, local_grads: Vec<Tensor>) -> Var {
        assert_eq!(inputs.len(), local_grads.len());
        for (x, g) in inputs.iter().zip(&local_grads) {
            assert_eq!(self.value(*x).shape(), g.shape(), "custom gradient shape");
        }
        self.push(
            Tensor::scalar(value),
            Op::Custom {
                inputs: inputs.to_vec(),
                local_grads,
            },
            inputs,
        )
    }

    /// Back-propagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).numel(), 1, "backward from a non-scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Grads {
                by_node: grads,
                params: self.param_vars.clone(),
            };
        }
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backprop_node(node, &gy, &mut grads);
            if matches!(node.op, Op::Leaf | Op::Param) {
                grads[i] = Some(gy);
            }
        }
        Grads {
            by_node: grads,
            params: self.param_vars.clone(),
        }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gy.clone());
                self.accumulate(grads, *b, gy.clone());
            }
            Op::AddBroadcast(a, b) => {
                self.accumulate(grads, *a, gy.clone());
                if self.wants(*b) {
                    let vb = self.value(*b);
                    let mut gb = Tensor::zeros(vb.shape());
                    for chunk in gy.data().chunks(vb.numel()) {
                        for (o, x) in gb.data_mut().iter_mut().zip(chunk) {
                            *o += x;
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let d = gy.data().iter().zip(vb.data()).map(|(g, x)| g * x).collect();
                    self.accumulate(grads, *a, Tensor::new(va.shape(), d));
                }
                if self.wants(*b) {
                    let d = gy.data().iter().zip(va.data()).map(|(g, x)| g * x).collect();
                    self.accumulate(grads, *b, Tensor::new(vb.shape(), d));
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, gy.map(|g| g * s)),
            Op::Relu(a) => {
                let d = gy
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(g, out)| if *out > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(y.shape(), d));
            }
            Op::Tanh(a) => {
                let d = gy
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(g, t)| g * (1.0 - t * t))
                    .collect();
                self.accumulate(grads, *a, Tensor::new(y.shape(), d));
            }
            Op::Sigmoid(a) => {
                let d = gy
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(g, s)| g * s * (1.0 - s))
                    .collect();
                self.accumulate(grads, *a, Tensor::new(y.shape(), d));
            }
            Op::MatMul {
                a,
                b,
                trans_a,
                trans_b,
            } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, n) = (y.dim(0), y.dim(1));
                let k = if *trans_a { va.dim(0) } else { va.dim(1) };
                if self.wants(*a) {
                    // d op(a) = gy * op(b)^T
                    let mut ga = vec![0.0; m * k];
                    if *trans_a {
                        // a^T = gy * op(b)^T  =>  a = op(b) * gy^T
                        gemm(k, n, m, vb.data(), *trans_b, gy.data(), true, &mut ga, 0.0);
                    } else {
                        gemm(m, n, k, gy.data(), false, vb.data(), !*trans_b, &mut ga, 0.0);
                    }
                    self.accumulate(grads, *a, Tensor::new(va.shape(), ga));
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; k * n];
                    if *trans_b {
                        // b^T = op(a)^T * gy  =>  b = gy^T * op(a)
                        gemm(n, m, k, gy.data(), true, va.data(), *trans_a, &mut gb, 0.0);
                    } else {
                        gemm(k, m, n, va.data(), !*trans_a, gy.data(), false, &mut gb, 0.0);
                    }
                    self.accumulate(grads, *b, Tensor::new(vb.shape(), gb));
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (batch, m, k) = (va.dim(0), va.dim(1), va.dim(2));
                let n = y.dim(2);
                if self.wants(*a) {
                    let mut ga = vec![0.0; batch * m * k];
                    for i in 0..batch {
                        gemm(
                            m,
                            n,
                            k,
                            &gy.data()[i * m * n..(i + 1) * m * n],
                            false,
                            &vb.data()[i * k * n..(i + 1) * k * n],
                            !*trans_b,
                            &mut ga[i * m * k..(i + 1) * m * k],
                            0.0,
                        );
                    }
                    self.accumulate(grads, *a, Tensor::new(va.shape(), ga));
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; batch * k * n];
                    for i in 0..batch {
                        let gyi = &gy.data()[i * m * n..(i + 1) * m * n];
                        let ai = &va.data()[i * m * k..(i + 1) * m * k];
                        let out = &mut gb[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            gemm(n, m, k, gyi, true, ai, false, out, 0.0);
                        } else {
                            gemm(k, m, n, ai, true, gyi, false, out, 0.0);
                        }
                    }
                    self.accumulate(grads, *b, Tensor::new(vb.shape(), gb));
                }
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, gy.clone().reshape(&shape));
            }
            Op::Permute(a, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                self.accumulate(grads, *a, gy.permute(&inv));
            }
            Op::Narrow { x, axis, start } => {
                let vx = self.value(*x);
                let shape = vx.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let (full, len) = (shape[*axis], y.dim(*axis));
                let mut gx = Tensor::zeros(shape);
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    let src = o * len * inner;
                    gx.data_mut()[dst..dst + len * inner]
                        .copy_from_slice(&gy.data()[src..src + len * inner]);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Concat { xs, axis } => {
                let shape = y.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let total = shape[*axis];
                let mut offset = 0;
                for &x in xs {
                    let vx = self.value(x);
                    let len = vx.dim(*axis);
                    if self.wants(x) {
                        let mut gx = Vec::with_capacity(vx.numel());
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gx.extend_from_slice(&gy.data()[base..base + len * inner]);
                        }
                        self.accumulate(grads, x, Tensor::new(vx.shape(), gx));
                    }
                    offset += len;
                }
            }
            Op::Softmax(a) => {
                let n = *y.shape().last().unwrap();
                let mut gx = Vec::with_capacity(y.numel());
                for (yr, gr) in y.data().chunks(n).zip(gy.data().chunks(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(p, g)| p * g).sum();
                    gx.extend(yr.iter().zip(gr).map(|(p, g)| p * (g - dot)));
                }
                self.accumulate(grads, *a, Tensor::new(y.shape(), gx));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                eps,
            } => {
                let vx = self.value(*x);
                let g = self.value(*gamma).data();
                let n = g.len();
                let mut gx = Vec::with_capacity(vx.numel());
                let mut ggamma = vec![0.0; n];
                let mut gbeta = vec![0.0; n];
                for (xr, gr) in vx.data().chunks(n).zip(gy.data().chunks(n)) {
                    let (mean, rstd) = moments(xr, *eps);
                    let xhat: Vec<f64> = xr.iter().map(|v| (v - mean) * rstd).collect();
                    let dxhat: Vec<f64> = gr.iter().zip(g).map(|(d, w)| d * w).collect();
                    let sum_d: f64 = dxhat.iter().sum();
                    let sum_dx: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        gx.push(rstd / n as f64 * (n as f64 * dxhat[j] - sum_d - xhat[j] * sum_dx));
                        ggamma[j] += gr[j] * xhat[j];
                        gbeta[j] += gr[j];
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vx.shape(), gx));
                self.accumulate(grads, *gamma, Tensor::new(&[n], ggamma));
                self.accumulate(grads, *beta, Tensor::new(&[n], gbeta));
            }
            Op::Conv2d { x, w, b, opts } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let geo = ConvGeometry::new(vx.shape(), vw.shape(), *opts);
                let ohw = geo.out_hw();
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut gb = vec![0.0; geo.o];
                        for (i, chunk) in gy.data().chunks(ohw).enumerate() {
                            gb[i % geo.o] += chunk.iter().sum::<f64>();
                        }
                        self.accumulate(grads, *b, Tensor::new(&[geo.o], gb));
                    }
                }
                let want_w = self.wants(*w);
                let want_x = self.wants(*x);
                let mut gw = vec![0.0; vw.numel()];
                let mut gx = if want_x { vec![0.0; vx.numel()] } else { Vec::new() };
                let mut cols = vec![0.0; geo.col_rows() * ohw];
                let mut dcols = vec![0.0; geo.col_rows() * ohw];
                for i in 0..geo.n {
                    let xs = &vx.data()[i * geo.in_size()..(i + 1) * geo.in_size()];
                    let gys = &gy.data()[i * geo.o * ohw..(i + 1) * geo.o * ohw];
                    if want_w {
                        let src: &[f64] = if geo.is_pointwise() {
                            xs
                        } else {
                            geo.im2col(xs, &mut cols);
                            &cols
                        };
                        gemm(geo.o, ohw, geo.col_rows(), gys, false, src, true, &mut gw, 1.0);
                    }
                    if want_x {
                        let gxs = &mut gx[i * geo.in_size()..(i + 1) * geo.in_size()];
                        if geo.is_pointwise() {
                            gemm(geo.col_rows(), geo.o, ohw, vw.data(), true, gys, false, gxs, 0.0);
                        } else {
                            gemm(geo.col_rows(), geo.o, ohw, vw.data(), true, gys, false, &mut dcols, 0.0);
                            geo.col2im(&dcols, gxs);
                        }
                    }
                }
                if want_w {
                    self.accumulate(grads, *w, Tensor::new(vw.shape(), gw));
                }
                if want_x {
                    self.accumulate(grads, *x, Tensor::new(vx.shape(), gx));
                }
            }
            Op::Upsample(x) => {
                let vx = self.value(*x);
                let (h, w) = (vx.dim(2), vx.dim(3));
                let (height, width) = (y.dim(2), y.dim(3));
                let rows = interp_table(h, height);
                let cols = interp_table(w, width);
                let mut gx = vec![0.0; vx.numel()];
                for (plane, gsrc) in gy.data().chunks(height * width).enumerate() {
                    let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
                    for (yy, &(y0, y1, ly)) in rows.iter().enumerate() {
                        for (xx, &(x0, x1, lx)) in cols.iter().enumerate() {
                            let g = gsrc[yy * width + xx];
                            dst[y0 * w + x0] += (1.0 - ly) * (1.0 - lx) * g;
                            dst[y0 * w + x1] += (1.0 - ly) * lx * g;
                            dst[y1 * w + x0] += ly * (1.0 - lx) * g;
                            dst[y1 * w + x1] += ly * lx * g;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vx.shape(), gx));
            }
            Op::MeanAxis { x, axis } => {
                let vx = self.value(*x);
                let shape = vx.shape();
                let outer: usize = shape[..*axis].iter().product();
                let len = shape[*axis];
                let inner: usize = shape[*axis + 1..].iter().product();
                let mut gx = Vec::with_capacity(vx.numel());
                for o in 0..outer {
                    let src = &gy.data()[o * inner..(o + 1) * inner];
                    for _ in 0..len {
                        gx.extend(src.iter().map(|g| g / len as f64));
                    }
                }
                self.accumulate(grads, *x, Tensor::new(shape, gx));
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape();
                self.accumulate(grads, *x, Tensor::full(shape, gy.item()));
            }
            Op::Embedding { table, ids } => {
                let vt = self.value(*table);
                let e = vt.dim(1);
                let mut gt = Tensor::zeros(vt.shape());
                for (row, &id) in ids.iter().enumerate() {
                    for j in 0..e {
                        gt.data_mut()[id * e + j] += gy.data()[row * e + j];
                    }
                }
                self.accumulate(grads, *table, gt);
            }
            Op::L2Normalize(x) => {
                let vx = self.value(*x);
                let n = *vx.shape().last().unwrap();
                let mut gx = Vec::with_capacity(vx.numel());
                for ((xr, yr), gr) in vx.data().chunks(n).zip(y.data().chunks(n)).zip(gy.data().chunks(n)) {
                    let norm = xr.iter().map(|a| a * a).sum::<f64>().sqrt().max(NORM_FLOOR);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    gx.extend(yr.iter().zip(gr).map(|(yv, g)| (g - yv * dot) / norm));
                }
                self.accumulate(grads, *x, Tensor::new(vx.shape(), gx));
            }
            Op::Custom {
                inputs,
                local_grads,
            } => {
                let s = gy.item();
                for (x, lg) in inputs.iter().zip(local_grads) {
                    self.accumulate(grads, *x, lg.map(|v| v * s));
                }
            }
        }
    }
}

const NORM_FLOOR: f64 = 1e-12;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

/// For each output index: (low source index, high source index, weight of high).
fn interp_table(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

struct ConvGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    opts: ConvOpts,
}

impl ConvGeometry {
    fn new(x: &[usize], w: &[usize], opts: ConvOpts) -> Self {
        assert_eq!(x.len(), 4, "conv input must be [N, C, H, W]");
        assert_eq!(w.len(), 4, "conv weight must be [O, C, kh, kw]");
        assert_eq!(x[1], w[1], "conv channel mismatch: input {} vs weight {}", x[1], w[1]);
        let span = |k: usize| opts.dilation * (k - 1) + 1;
        let (kh, kw) = (w[2], w[3]);
        assert!(
            x[2] + 2 * opts.padding >= span(kh) && x[3] + 2 * opts.padding >= span(kw),
            "conv kernel larger than padded input"
        );
        let oh = (x[2] + 2 * opts.padding - span(kh)) / opts.stride + 1;
        let ow = (x[3] + 2 * opts.padding - span(kw)) / opts.stride + 1;
        Self {
            n: x[0],
            c: x[1],
            h: x[2],
            w: x[3],
            o: w[0],
            kh,
            kw,
            oh,
            ow,
            opts,
        }
    }

    fn in_size(&self) -> usize {
        self.c * self.h * self.w
    }

    fn out_hw(&self) -> usize {
        self.oh * self.ow
    }

    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.opts.stride == 1 && self.opts.padding == 0
    }

    /// Source pixel index for output coordinate `o` and kernel tap `k`, if
    /// inside the input.
    fn src(&self, o: usize, k: usize, size: usize) -> Option<usize> {
        let pos = (o * self.opts.stride + k * self.opts.dilation) as isize - self.opts.padding as isize;
        (pos >= 0 && (pos as usize) < size).then_some(pos as usize)
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let ohw = self.out_hw();
        for c in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * ohw..(row + 1) * ohw];
                    for oy in 0..self.oh {
                        let iy = self.src(oy, ki, self.h);
                        for ox in 0..self.ow {
                            dst[oy * self.ow + ox] = match (iy, self.src(ox, kj, self.w)) {
                                (Some(iy), Some(ix)) => x[(c * self.h + iy) * self.w + ix],
                                _ => 0.0,
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], gx: &mut [f64]) {
        let ohw = self.out_hw();
        for c in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * ohw..(row + 1) * ohw];
                    for oy in 0..self.oh {
                        let Some(iy) = self.src(oy, ki, self.h) else { continue };
                        for ox in 0..self.ow {
                            if let Some(ix) = self.src(ox, kj, self.w) {
                                gx[(c * self.h + iy) * self.w + ix] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients from one [`Graph::backward`] call.
pub struct Grads {
    by_node: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Var>,
}

impl Grads {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.by_node[v.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id).and_then(|v| self.by_node[v.0].as_ref())
    }

    /// Parameter gradients in parameter-id order.
    pub fn params(&self) -> Vec<(ParamId, &Tensor)> {
        let mut out: Vec<(ParamId, &Tensor)> = self
            .params
            .iter()
            .filter_map(|(id, v)| self.by_node[v.0].as_ref().map(|g| (*id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}
