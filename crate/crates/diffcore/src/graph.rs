//! Reverse-mode differentiation over a fixed set of tensor operations.
//!
//! A [`Graph`] records every operation in execution order. Because a node can
//! only reference nodes created before it, index order is a topological
//! order, and [`Graph::backward`] simply walks the node list in reverse,
//! visiting each node once.
//!
//! Leaf gradients accumulate across `backward` calls until
//! [`Graph::zero_grad`] is called.

use crate::error::{DiffError, Result};
use crate::kernels::{self, ConvDims};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operand layout for [`Graph::broadcast_mul`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    /// `(B, C, 1, 1)` or `(1, C, 1, 1)`
    PerChannel { shared_batch: bool },
    /// `(B, C, h, w)` nearest-upsampled by `factor` to `(B, C, H, W)`
    Upsampled { factor: usize },
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv3x3 { x: Var, w: Var, b: Option<Var> },
    Pointwise { x: Var, w: Var, b: Option<Var> },
    AvgPool2(Var),
    Upsample2(Var),
    Concat(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Abs(Var),
    BroadcastMul { x: Var, s: Var, mode: Broadcast },
    Gelu(Var),
    Sum { x: Var, rows: Option<Vec<T>>, scale: T },
    Scale(Var, T),
    /// Scalar with local gradients precomputed at evaluation time.
    ScalarFn { inputs: Vec<Var>, local: Vec<Vec<T>> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Names one of the op kinds the graph supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Conv3x3,
    Pointwise,
    AvgPool2,
    Upsample2,
    Concat,
    Add,
    Sub,
    Mul,
    Abs,
    BroadcastMul,
    Gelu,
    Sum,
    Mean,
    Scale,
    ScalarFn,
}

impl OpKind {
    pub const ALL: [OpKind; 15] = [
        OpKind::Conv3x3,
        OpKind::Pointwise,
        OpKind::AvgPool2,
        OpKind::Upsample2,
        OpKind::Concat,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Abs,
        OpKind::BroadcastMul,
        OpKind::Gelu,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Scale,
        OpKind::ScalarFn,
    ];
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    /// Accumulated gradients of leaves, indexed like `nodes`.
    leaf_grads: Vec<Option<Vec<T>>>,
}

fn shape_err(op: &'static str, operand: &'static str, expected: impl Into<String>, found: &[usize]) -> DiffError {
    DiffError::Shape {
        op,
        operand,
        expected: expected.into(),
        found: found.to_vec(),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn dims4(&self, op: &'static str, operand: &'static str, v: Var) -> Result<(usize, usize, usize, usize)> {
        self.value(v)
            .dims4()
            .ok_or_else(|| shape_err(op, operand, "(B, C, H, W)", self.shape(v)))
    }

    /// Periodic 3×3 convolution. `w` is `(Cout, Cin, 3, 3)`, `b` is `(Cout)`.
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (batch, cin, h, wd) = self.dims4("conv3x3", "input", x)?;
        let ws = self.shape(w);
        if ws.len() != 4 || ws[1] != cin || ws[2] != 3 || ws[3] != 3 {
            return Err(shape_err("conv3x3", "weight", format!("(Cout, {cin}, 3, 3)"), ws));
        }
        let cout = ws[0];
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(shape_err("conv3x3", "bias", format!("({cout})"), self.shape(b)));
            }
        }
        let d = ConvDims {
            batch,
            cin,
            cout,
            h,
            w: wd,
        };
        let mut out = vec![T::zero(); batch * cout * h * wd];
        kernels::conv3x3_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &d,
            &mut out,
        );
        let value = Tensor::from_vec(&[batch, cout, h, wd], out)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.needs(&deps);
        Ok(self.push(value, Op::Conv3x3 { x, w, b }, rg))
    }

    /// 1×1 convolution (per-location channel map). `w` is `(Cout, Cin)`.
    pub fn pointwise(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (batch, cin, h, wd) = self.dims4("pointwise", "input", x)?;
        let ws = self.shape(w);
        if ws.len() != 2 || ws[1] != cin {
            return Err(shape_err("pointwise", "weight", format!("(Cout, {cin})"), ws));
        }
        let cout = ws[0];
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(shape_err("pointwise", "bias", format!("({cout})"), self.shape(b)));
            }
        }
        let d = ConvDims {
            batch,
            cin,
            cout,
            h,
            w: wd,
        };
        let mut out = vec![T::zero(); batch * cout * h * wd];
        kernels::pointwise_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &d,
            &mut out,
        );
        let value = Tensor::from_vec(&[batch, cout, h, wd], out)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.needs(&deps);
        Ok(self.push(value, Op::Pointwise { x, w, b }, rg))
    }

    pub fn avgpool2(&mut self, x: Var) -> Result<Var> {
        let (b, c, h, w) = self.dims4("avgpool2", "input", x)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err("avgpool2", "input", "even H and W", self.shape(x)));
        }
        let mut out = vec![T::zero(); b * c * h * w / 4];
        kernels::avgpool2_forward(self.value(x).data(), b * c, h, w, &mut out);
        let value = Tensor::from_vec(&[b, c, h / 2, w / 2], out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::AvgPool2(x), rg))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (b, c, h, w) = self.dims4("upsample2", "input", x)?;
        let mut out = vec![T::zero(); b * c * h * w * 4];
        kernels::upsample_forward(self.value(x).data(), b * c, h, w, 2, &mut out);
        let value = Tensor::from_vec(&[b, c, 2 * h, 2 * w], out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Upsample2(x), rg))
    }

    /// Channel concatenation of two `(B, ·, H, W)` tensors.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ba, ca, h, w) = self.dims4("concat", "lhs", a)?;
        let (bb, cb, hb, wb) = self.dims4("concat", "rhs", b)?;
        if (ba, h, w) != (bb, hb, wb) {
            return Err(shape_err("concat", "rhs", format!("({ba}, C, {h}, {w})"), self.shape(b)));
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(ba * (ca + cb) * hw);
        for n in 0..ba {
            out.extend_from_slice(&self.value(a).data()[n * ca * hw..(n + 1) * ca * hw]);
            out.extend_from_slice(&self.value(b).data()[n * cb * hw..(n + 1) * cb * hw]);
        }
        let value = Tensor::from_vec(&[ba, ca + cb, h, w], out)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Concat(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, "rhs", format!("{:?}", self.shape(a)), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, node: Op<T>) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_vec(self.shape(a), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, node, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.abs());
        let rg = self.needs(&[x]);
        self.push(value, Op::Abs(x), rg)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(kernels::gelu);
        let rg = self.needs(&[x]);
        self.push(value, Op::Gelu(x), rg)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        let rg = self.needs(&[x]);
        self.push(value, Op::Scale(x, c), rg)
    }

    /// `x ⊙ s` where `x` is `(B, C, H, W)` and `s` is `(B, C, 1, 1)`,
    /// `(1, C, 1, 1)`, or `(B, C, h, w)` with `H = f·h`, `W = f·w`
    /// (nearest-neighbour broadcast).
    pub fn broadcast_mul(&mut self, x: Var, s: Var) -> Result<Var> {
        let (b, c, h, w) = self.dims4("broadcast_mul", "x", x)?;
        let (sb, sc, sh, sw) = self.dims4("broadcast_mul", "s", s)?;
        let expected = format!("({b}|1, {c}, 1, 1) or ({b}, {c}, h, w) dividing ({h}, {w})");
        if sc != c {
            return Err(shape_err("broadcast_mul", "s", expected, self.shape(s)));
        }
        let mode = if sh == 1 && sw == 1 && (sb == b || sb == 1) {
            Broadcast::PerChannel { shared_batch: sb == 1 && b != 1 }
        } else if sb == b && sh > 0 && h % sh == 0 && w % sw == 0 && h / sh == w / sw {
            Broadcast::Upsampled { factor: h / sh }
        } else {
            return Err(shape_err("broadcast_mul", "s", expected, self.shape(s)));
        };
        let expanded = self.expand(s, mode, b, c, h, w);
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&expanded)
            .map(|(&a, &m)| a * m)
            .collect();
        let value = Tensor::from_vec(&[b, c, h, w], data)?;
        let rg = self.needs(&[x, s]);
        Ok(self.push(value, Op::BroadcastMul { x, s, mode }, rg))
    }

    fn expand(&self, s: Var, mode: Broadcast, b: usize, c: usize, h: usize, w: usize) -> Vec<T> {
        let sv = self.value(s).data();
        let hw = h * w;
        let mut out = vec![T::zero(); b * c * hw];
        match mode {
            Broadcast::PerChannel { shared_batch } => {
                for n in 0..b {
                    for ci in 0..c {
                        let v = if shared_batch { sv[ci] } else { sv[n * c + ci] };
                        out[(n * c + ci) * hw..(n * c + ci + 1) * hw].fill(v);
                    }
                }
            }
            Broadcast::Upsampled { factor } => {
                kernels::upsample_forward(sv, b * c, h / factor, w / factor, factor, &mut out);
            }
        }
        out
    }

    /// Sum over all elements, optionally weighting each row (H index) of a
    /// 4-D tensor by `rows[h]`.
    pub fn sum(&mut self, x: Var, rows: Option<&[T]>) -> Result<Var> {
        self.reduce("sum", x, rows, T::one())
    }

    /// Mean over all elements, optionally row-weighted as in [`Graph::sum`].
    pub fn mean(&mut self, x: Var, rows: Option<&[T]>) -> Result<Var> {
        let n = T::from_usize(self.value(x).numel()).unwrap_or_else(T::one);
        self.reduce("mean", x, rows, T::one() / n)
    }

    fn reduce(&mut self, op: &'static str, x: Var, rows: Option<&[T]>, scale: T) -> Result<Var> {
        let total = match rows {
            None => self.value(x).data().iter().copied().sum::<T>(),
            Some(rw) => {
                let (_, _, h, w) = self.dims4(op, "input", x)?;
                if rw.len() != h {
                    return Err(shape_err(op, "row weights", format!("({h})"), &[rw.len()]));
                }
                let mut acc = T::zero();
                for (i, &v) in self.value(x).data().iter().enumerate() {
                    acc = acc + rw[(i / w) % h] * v;
                }
                acc
            }
        };
        let value = Tensor::scalar(total * scale);
        let rg = self.needs(&[x]);
        Ok(self.push(
            value,
            Op::Sum {
                x,
                rows: rows.map(|r| r.to_vec()),
                scale,
            },
            rg,
        ))
    }

    /// Scalar node whose value and per-input local gradients were computed
    /// externally (e.g. an ensemble score with an analytic gradient).
    pub fn scalar_fn(&mut self, inputs: &[Var], value: T, local: Vec<Vec<T>>) -> Result<Var> {
        if local.len() != inputs.len() {
            return Err(shape_err("scalar_fn", "local gradients", format!("{} entries", inputs.len()), &[local.len()]));
        }
        for (v, g) in inputs.iter().zip(&local) {
            if g.len() != self.value(*v).numel() {
                return Err(shape_err(
                    "scalar_fn",
                    "local gradient",
                    format!("{:?}", self.shape(*v)),
                    &[g.len()],
                ));
            }
        }
        let rg = self.needs(inputs);
        Ok(self.push(
            Tensor::scalar(value),
            Op::ScalarFn {
                inputs: inputs.to_vec(),
                local,
            },
            rg,
        ))
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.leaf_grads.get(v.0)?.as_ref()?;
        Tensor::from_vec(self.shape(v), g.clone()).ok()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    /// Propagates `d loss / d node` to every leaf that requires a gradient,
    /// adding into any gradient already accumulated there.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(DiffError::UnknownVar(loss.0));
        }
        if self.value(loss).numel() != 1 {
            return Err(DiffError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                match &mut self.leaf_grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv3x3 { x, w, b } | Op::Pointwise { x, w, b } => {
                let (batch, cin, h, wd) = self.value(*x).dims4().expect("checked at build");
                let cout = node.value.shape()[1];
                let d = ConvDims {
                    batch,
                    cin,
                    cout,
                    h,
                    w: wd,
                };
                // Distinct vars get disjoint buffers; take them out to borrow independently.
                let mut dx = self.slot(grads, *x).map(std::mem::take);
                let mut dw = self.slot(grads, *w).map(std::mem::take);
                let mut db = b.and_then(|b| self.slot(grads, b).map(std::mem::take));
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                if matches!(node.op, Op::Conv3x3 { .. }) {
                    kernels::conv3x3_backward(xv, wv, g, &d, dx.as_deref_mut(), dw.as_deref_mut(), db.as_deref_mut());
                } else {
                    kernels::pointwise_backward(xv, wv, g, &d, dx.as_deref_mut(), dw.as_deref_mut(), db.as_deref_mut());
                }
                if let Some(v) = dx {
                    grads[x.0] = Some(v);
                }
                if let Some(v) = dw {
                    grads[w.0] = Some(v);
                }
                if let (Some(v), Some(b)) = (db, b) {
                    grads[b.0] = Some(v);
                }
            }
            Op::AvgPool2(x) => {
                let (b, c, h, w) = self.value(*x).dims4().expect("checked at build");
                if let Some(dx) = self.slot(grads, *x) {
                    kernels::avgpool2_backward(g, b * c, h, w, dx);
                }
            }
            Op::Upsample2(x) => {
                let (b, c, h, w) = self.value(*x).dims4().expect("checked at build");
                if let Some(dx) = self.slot(grads, *x) {
                    kernels::upsample_backward(g, b * c, h, w, 2, dx);
                }
            }
            Op::Concat(a, b) => {
                let (n, ca, h, w) = self.value(*a).dims4().expect("checked at build");
                let cb = self.value(*b).shape()[1];
                let hw = h * w;
                let ct = ca + cb;
                if let Some(da) = self.slot(grads, *a) {
                    for k in 0..n {
                        add_into(&mut da[k * ca * hw..(k + 1) * ca * hw], &g[k * ct * hw..(k * ct + ca) * hw]);
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for k in 0..n {
                        add_into(&mut db[k * cb * hw..(k + 1) * cb * hw], &g[(k * ct + ca) * hw..(k + 1) * ct * hw]);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.slot(grads, v) {
                        add_into(d, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.slot(grads, *a) {
                    add_into(d, g);
                }
                if let Some(d) = self.slot(grads, *b) {
                    d.iter_mut().zip(g).for_each(|(o, &v)| *o = *o - v);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.slot(grads, *a) {
                    for ((o, &gv), &y) in d.iter_mut().zip(g).zip(bv) {
                        *o = *o + gv * y;
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for ((o, &gv), &x) in d.iter_mut().zip(g).zip(av) {
                        *o = *o + gv * x;
                    }
                }
            }
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                if let Some(d) = self.slot(grads, *x) {
                    for ((o, &gv), &v) in d.iter_mut().zip(g).zip(xv) {
                        *o = *o + gv * sign0(v);
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                if let Some(d) = self.slot(grads, *x) {
                    for ((o, &gv), &v) in d.iter_mut().zip(g).zip(xv) {
                        *o = *o + gv * kernels::gelu_grad(v);
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(d) = self.slot(grads, *x) {
                    for (o, &gv) in d.iter_mut().zip(g) {
                        *o = *o + gv * *c;
                    }
                }
            }
            Op::BroadcastMul { x, s, mode } => {
                let (b, c, h, w) = node.value.dims4().expect("4-D");
                if self.nodes[x.0].requires_grad {
                    let expanded = self.expand(*s, *mode, b, c, h, w);
                    let d = self.slot(grads, *x).expect("requires grad");
                    for ((o, &gv), &m) in d.iter_mut().zip(g).zip(&expanded) {
                        *o = *o + gv * m;
                    }
                }
                let xv = self.value(*x).data();
                if let Some(ds) = self.slot(grads, *s) {
                    let hw = h * w;
                    match *mode {
                        Broadcast::PerChannel { shared_batch } => {
                            for n in 0..b {
                                for ci in 0..c {
                                    let r = (n * c + ci) * hw..(n * c + ci + 1) * hw;
                                    let acc: T = g[r.clone()].iter().zip(&xv[r]).map(|(&a, &v)| a * v).sum();
                                    let k = if shared_batch { ci } else { n * c + ci };
                                    ds[k] = ds[k] + acc;
                                }
                            }
                        }
                        Broadcast::Upsampled { factor } => {
                            let prod: Vec<T> = g.iter().zip(xv).map(|(&a, &v)| a * v).collect();
                            kernels::upsample_backward(&prod, b * c, h / factor, w / factor, factor, ds);
                        }
                    }
                }
            }
            Op::Sum { x, rows, scale } => {
                let g0 = g[0] * *scale;
                let dims = self.value(*x).dims4();
                if let Some(d) = self.slot(grads, *x) {
                    match rows {
                        None => d.iter_mut().for_each(|o| *o = *o + g0),
                        Some(rw) => {
                            let (_, _, h, w) = dims.expect("row weights imply 4-D");
                            for (k, o) in d.iter_mut().enumerate() {
                                *o = *o + g0 * rw[(k / w) % h];
                            }
                        }
                    }
                }
            }
            Op::ScalarFn { inputs, local } => {
                for (v, lg) in inputs.iter().zip(local) {
                    if let Some(d) = self.slot(grads, *v) {
                        for (o, &l) in d.iter_mut().zip(lg) {
                            *o = *o + g[0] * l;
                        }
                    }
                }
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (o, &v) in dst.iter_mut().zip(src) {
        *o = *o + v;
    }
}

/// Sign with `sign(0) = 0`.
#[inline]
pub fn sign0<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}
