//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! read from a [`ParamStore`] and materialised once per graph, so a parameter
//! used in several places accumulates all of its gradient contributions.

use std::collections::HashMap;

use crate::tensor::{self, conv_backward, conv_forward, gemm, ConvGeom, Tensor};

pub type ParamId = usize;

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, value });
        id
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Const,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    RowScale(Var, Vec<f64>),
    AddChannel { x: Var, bias: Var },
    AddBatchChannel { x: Var, v: Var },
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Silu(Var),
    Tanh(Var),
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    Softmax(Var),
    Matmul { a: Var, b: Var, ta: bool, tb: bool },
    Permute { x: Var, perm: Vec<usize> },
    Reshape(Var),
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Upsample2x(Var),
    RepeatInterleave { x: Var, times: usize },
    WeightedMse { pred: Var, target: Tensor, weight: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar with respect to every parameter it depends on.
#[derive(Debug, Default)]
pub struct Gradients {
    pub params: HashMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn norm(&self, id: ParamId) -> f64 {
        self.params.get(&id).map_or(0.0, Tensor::norm)
    }
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Const => false,
            Op::Param(_) => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Const, &[])
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let v = self.push(self.params.get(id).clone(), Op::Param(id), &[]);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    /// Multiplies every leading-axis slice `i` by `s[i]`.
    pub fn row_scale(&mut self, a: Var, s: Vec<f64>) -> Var {
        let x = self.value(a);
        assert_eq!(x.dim(0), s.len(), "row_scale length mismatch");
        let inner = x.numel() / s.len();
        let mut v = x.clone();
        for (chunk, f) in v.data_mut().chunks_mut(inner).zip(&s) {
            chunk.iter_mut().for_each(|e| *e *= f);
        }
        self.push(v, Op::RowScale(a, s), &[a])
    }

    /// `x[B, C, ...] + bias[C]`.
    pub fn add_channel(&mut self, x: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let c = xv.dim(1);
        let inner = xv.numel() / (xv.dim(0) * c);
        let bv = self.value(bias).data().to_vec();
        assert_eq!(bv.len(), c, "channel bias length");
        let mut v = xv.clone();
        for (i, chunk) in v.data_mut().chunks_mut(inner).enumerate() {
            let b = bv[i % c];
            chunk.iter_mut().for_each(|e| *e += b);
        }
        self.push(v, Op::AddChannel { x, bias }, &[x, bias])
    }

    /// `x[B, C, ...] + v[B, C]`, broadcasting over trailing axes.
    pub fn add_batch_channel(&mut self, x: Var, vb: Var) -> Var {
        let xv = self.value(x);
        let (b, c) = (xv.dim(0), xv.dim(1));
        let inner = xv.numel() / (b * c);
        let add = self.value(vb).data().to_vec();
        assert_eq!(add.len(), b * c, "batch-channel term length");
        let mut v = xv.clone();
        for (i, chunk) in v.data_mut().chunks_mut(inner).enumerate() {
            let a = add[i];
            chunk.iter_mut().for_each(|e| *e += a);
        }
        self.push(v, Op::AddBatchChannel { x, v: vb }, &[x, vb])
    }

    /// Convolution over `[B, C, H, W]` (2D) or `[B, C, D, H, W]` (3D) input.
    pub fn conv(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (input, kernel) = match (xs.len(), ws.len()) {
            (4, 4) => ([1, xs[2], xs[3]], [1, ws[2], ws[3]]),
            (5, 5) => ([xs[2], xs[3], xs[4]], [ws[2], ws[3], ws[4]]),
            _ => panic!("conv rank mismatch: input {xs:?}, weight {ws:?}"),
        };
        assert_eq!(xs[1], ws[1], "conv input channels {xs:?} vs weight {ws:?}");
        let geom = ConvGeom {
            batch: xs[0],
            cin: xs[1],
            cout: ws[0],
            input,
            kernel,
            stride,
            pad,
        };
        let out = conv_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let o = geom.output();
        let shape: Vec<usize> = if xs.len() == 4 {
            vec![xs[0], ws[0], o[1], o[2]]
        } else {
            vec![xs[0], ws[0], o[0], o[1], o[2]]
        };
        let t = Tensor::from_vec(&shape, out).expect("conv output shape");
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(t, Op::Conv { x, w, b, geom }, &inputs)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x / (1.0 + (-x).exp()));
        self.push(v, Op::Silu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a), &[a])
    }

    /// Group normalisation over `[B, C, ...]` with per-channel affine terms.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: f64) -> Var {
        let xv = self.value(x);
        let (b, c) = (xv.dim(0), xv.dim(1));
        assert_eq!(c % groups, 0, "channels {c} not divisible into {groups} groups");
        let inner = xv.numel() / (b * c);
        let gsize = (c / groups) * inner;
        let gam = self.value(gamma).data().to_vec();
        let bet = self.value(beta).data().to_vec();
        let mut out = xv.clone();
        let mut means = Vec::with_capacity(b * groups);
        let mut rstd = Vec::with_capacity(b * groups);
        for (gi, chunk) in out.data_mut().chunks_mut(gsize).enumerate() {
            let mean = chunk.iter().sum::<f64>() / gsize as f64;
            let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / gsize as f64;
            let r = 1.0 / (var + eps).sqrt();
            means.push(mean);
            rstd.push(r);
            let g0 = gi % groups;
            for (j, e) in chunk.iter_mut().enumerate() {
                let ch = g0 * (c / groups) + j / inner;
                *e = (*e - mean) * r * gam[ch] + bet[ch];
            }
        }
        self.push(
            out,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                mean: means,
                rstd,
            },
            &[x, gamma, beta],
        )
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let xv = self.value(a);
        let n = *xv.shape().last().expect("softmax of scalar");
        let mut v = xv.clone();
        for row in v.data_mut().chunks_mut(n) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for e in row.iter_mut() {
                *e = (*e - m).exp();
                s += *e;
            }
            row.iter_mut().for_each(|e| *e /= s);
        }
        self.push(v, Op::Softmax(a), &[a])
    }

    /// Matrix product of rank-2 or batched rank-3 operands.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (g, m, k, n) = self.mm_dims(a, b, ta, tb);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; g * m * n];
        for i in 0..g {
            gemm(
                m,
                k,
                n,
                1.0,
                &av[i * m * k..(i + 1) * m * k],
                ta,
                &bv[i * k * n..(i + 1) * k * n],
                tb,
                0.0,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let shape = if self.value(a).rank() == 2 {
            vec![m, n]
        } else {
            vec![g, m, n]
        };
        let t = Tensor::from_vec(&shape, out).expect("matmul shape");
        self.push(t, Op::Matmul { a, b, ta, tb }, &[a, b])
    }

    fn mm_dims(&self, a: Var, b: Var, ta: bool, tb: bool) -> (usize, usize, usize, usize) {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa.len(), sb.len(), "matmul rank mismatch {sa:?} {sb:?}");
        let (g, ra, ca, rb, cb) = match sa.len() {
            2 => (1, sa[0], sa[1], sb[0], sb[1]),
            3 => {
                assert_eq!(sa[0], sb[0], "matmul batch mismatch");
                (sa[0], sa[1], sa[2], sb[1], sb[2])
            }
            _ => panic!("matmul expects rank 2 or 3"),
        };
        let (m, k) = if ta { (ca, ra) } else { (ra, ca) };
        let (k2, n) = if tb { (cb, rb) } else { (rb, cb) };
        assert_eq!(k, k2, "matmul inner dims {sa:?} x {sb:?} (ta={ta}, tb={tb})");
        (g, m, k, n)
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Var {
        let v = self.value(x).permute(perm);
        self.push(
            v,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            &[x],
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = self.value(x).reshaped(shape).expect("reshape");
        self.push(v, Op::Reshape(x), &[x])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Var {
        let parts: Vec<&Tensor> = xs.iter().map(|&v| self.value(v)).collect();
        let v = Tensor::concat(&parts, axis).expect("concat");
        self.push(
            v,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            xs,
        )
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let v = self.value(x).slice_axis(axis, start, len);
        self.push(v, Op::Slice { x, axis, start }, &[x])
    }

    pub fn upsample2x(&mut self, x: Var) -> Var {
        let v = tensor::upsample2x(self.value(x));
        self.push(v, Op::Upsample2x(x), &[x])
    }

    pub fn repeat_interleave(&mut self, x: Var, times: usize) -> Var {
        let v = self.value(x).repeat_interleave(times);
        self.push(v, Op::RepeatInterleave { x, times }, &[x])
    }

    /// `mean(weight * (pred - target)^2)` as a one-element tensor.
    pub fn weighted_mse(&mut self, pred: Var, target: Tensor, weight: Tensor) -> Var {
        let p = self.value(pred);
        assert_eq!(p.shape(), target.shape(), "loss target shape");
        assert_eq!(p.shape(), weight.shape(), "loss weight shape");
        let n = p.numel() as f64;
        let s: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .zip(weight.data())
            .map(|((a, t), w)| w * (a - t) * (a - t))
            .sum();
        self.push(
            Tensor::scalar(s / n),
            Op::WeightedMse {
                pred,
                target,
                weight,
            },
            &[pred],
        )
    }

    /// Reverse pass from a one-element output.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).numel(), 1, "backward from non-scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        let mut out = Gradients::default();
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, dy, &mut grads, &mut out);
        }
        out
    }

    fn backprop_node(
        &self,
        node: &Node,
        dy: Tensor,
        grads: &mut [Option<Tensor>],
        out: &mut Gradients,
    ) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, g: Tensor| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Const => {}
            Op::Param(id) => {
                out.params
                    .entry(*id)
                    .and_modify(|t| t.add_assign(&dy))
                    .or_insert(dy);
            }
            Op::Add(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy);
            }
            Op::Sub(a, b) => {
                acc(*b, dy.map(|v| -v));
                acc(*a, dy);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, dy.zip_map(bv, |g, y| g * y));
                acc(*b, dy.zip_map(av, |g, x| g * x));
            }
            Op::Scale(a, s) => acc(*a, dy.map(|g| g * s)),
            Op::RowScale(a, s) => {
                let inner = dy.numel() / s.len();
                let mut g = dy;
                for (chunk, f) in g.data_mut().chunks_mut(inner).zip(s) {
                    chunk.iter_mut().for_each(|e| *e *= f);
                }
                acc(*a, g);
            }
            Op::AddChannel { x, bias } => {
                let c = dy.dim(1);
                let inner = dy.numel() / (dy.dim(0) * c);
                let mut db = Tensor::zeros(&[c]);
                for (i, chunk) in dy.data().chunks(inner).enumerate() {
                    db.data_mut()[i % c] += chunk.iter().sum::<f64>();
                }
                acc(*bias, db);
                acc(*x, dy);
            }
            Op::AddBatchChannel { x, v } => {
                let (b, c) = (dy.dim(0), dy.dim(1));
                let inner = dy.numel() / (b * c);
                let sums: Vec<f64> = dy.data().chunks(inner).map(|ch| ch.iter().sum()).collect();
                let shape = self.value(*v).shape().to_vec();
                acc(*v, Tensor::from_vec(&shape, sums).expect("bc grad"));
                acc(*x, dy);
            }
            Op::Conv { x, w, b, geom } => {
                let need_dx = nodes[x.0].needs_grad;
                let (dx, dw, db) = conv_backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    dy.data(),
                    need_dx,
                );
                if let Some(dx) = dx {
                    acc(*x, Tensor::from_vec(self.shape(*x), dx).expect("dx"));
                }
                acc(*w, Tensor::from_vec(self.shape(*w), dw).expect("dw"));
                if let Some(b) = b {
                    acc(*b, Tensor::from_vec(self.shape(*b), db).expect("db"));
                }
            }
            Op::Silu(a) => {
                let g = dy.zip_map(self.value(*a), |g, x| {
                    let s = 1.0 / (1.0 + (-x).exp());
                    g * s * (1.0 + x * (1.0 - s))
                });
                acc(*a, g);
            }
            Op::Tanh(a) => {
                let g = dy.zip_map(&node.value, |g, y| g * (1.0 - y * y));
                acc(*a, g);
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                mean,
                rstd,
            } => {
                let xv = self.value(*x);
                let gam = self.value(*gamma).data();
                let (b, c) = (xv.dim(0), xv.dim(1));
                let inner = xv.numel() / (b * c);
                let cpg = c / groups;
                let gsize = cpg * inner;
                let mut dx = Tensor::zeros(xv.shape());
                let mut dgam = vec![0.0; c];
                let mut dbet = vec![0.0; c];
                for gi in 0..b * groups {
                    let r = rstd[gi];
                    let g0 = gi % groups;
                    let range = gi * gsize..(gi + 1) * gsize;
                    let xs = &xv.data()[range.clone()];
                    let dyv = &dy.data()[range.clone()];
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    let mut xhat = vec![0.0; gsize];
                    let mut dxhat = vec![0.0; gsize];
                    for j in 0..gsize {
                        let ch = g0 * cpg + j / inner;
                        xhat[j] = (xs[j] - mean[gi]) * r;
                        dxhat[j] = dyv[j] * gam[ch];
                        dgam[ch] += dyv[j] * xhat[j];
                        dbet[ch] += dyv[j];
                        sum_dxh += dxhat[j];
                        sum_dxh_xh += dxhat[j] * xhat[j];
                    }
                    let n = gsize as f64;
                    let dst = &mut dx.data_mut()[range];
                    for j in 0..gsize {
                        dst[j] = r * (dxhat[j] - sum_dxh / n - xhat[j] * sum_dxh_xh / n);
                    }
                }
                acc(*x, dx);
                acc(*gamma, Tensor::from_vec(&[c], dgam).expect("dgamma"));
                acc(*beta, Tensor::from_vec(&[c], dbet).expect("dbeta"));
            }
            Op::Softmax(a) => {
                let n = *dy.shape().last().unwrap();
                let mut g = dy.clone();
                for (grow, yrow) in g.data_mut().chunks_mut(n).zip(node.value.data().chunks(n)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                    for (gi, yi) in grow.iter_mut().zip(yrow) {
                        *gi = yi * (*gi - dot);
                    }
                }
                acc(*a, g);
            }
            Op::Matmul { a, b, ta, tb } => {
                let (g, m, k, n) = self.mm_dims(*a, *b, *ta, *tb);
                let av = self.value(*a);
                let bv = self.value(*b);
                if nodes[a.0].needs_grad {
                    let mut da = vec![0.0; g * m * k];
                    for i in 0..g {
                        let dyi = &dy.data()[i * m * n..(i + 1) * m * n];
                        let bi = &bv.data()[i * k * n..(i + 1) * k * n];
                        let dai = &mut da[i * m * k..(i + 1) * m * k];
                        if !*ta {
                            gemm(m, n, k, 1.0, dyi, false, bi, !*tb, 0.0, dai);
                        } else {
                            gemm(k, n, m, 1.0, bi, *tb, dyi, true, 0.0, dai);
                        }
                    }
                    acc(*a, Tensor::from_vec(av.shape(), da).expect("da"));
                }
                if nodes[b.0].needs_grad {
                    let mut db = vec![0.0; g * k * n];
                    for i in 0..g {
                        let dyi = &dy.data()[i * m * n..(i + 1) * m * n];
                        let ai = &av.data()[i * m * k..(i + 1) * m * k];
                        let dbi = &mut db[i * k * n..(i + 1) * k * n];
                        if !*tb {
                            gemm(k, m, n, 1.0, ai, !*ta, dyi, false, 0.0, dbi);
                        } else {
                            gemm(n, m, k, 1.0, dyi, true, ai, *ta, 0.0, dbi);
                        }
                    }
                    acc(*b, Tensor::from_vec(bv.shape(), db).expect("db"));
                }
            }
            Op::Permute { x, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                acc(*x, dy.permute(&inv));
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                acc(*x, dy.reshape(&shape).expect("reshape grad"));
            }
            Op::Concat { xs, axis } => {
                let mut start = 0;
                for &v in xs {
                    let len = self.shape(v)[*axis];
                    acc(v, dy.slice_axis(*axis, start, len));
                    start += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let full = self.shape(*x).to_vec();
                let len = dy.dim(*axis);
                let outer: usize = full[..*axis].iter().product();
                let inner: usize = full[axis + 1..].iter().product();
                let mut g = Tensor::zeros(&full);
                for o in 0..outer {
                    let dst = o * full[*axis] * inner + start * inner;
                    let src = o * len * inner;
                    g.data_mut()[dst..dst + len * inner]
                        .copy_from_slice(&dy.data()[src..src + len * inner]);
                }
                acc(*x, g);
            }
            Op::Upsample2x(x) => acc(*x, tensor::upsample2x_backward(&dy)),
            Op::RepeatInterleave { x, times } => {
                let shape = self.shape(*x).to_vec();
                let inner = dy.numel() / (shape[0] * times);
                let mut g = Tensor::zeros(&shape);
                for r in 0..shape[0] {
                    for t in 0..*times {
                        let src = (r * times + t) * inner;
                        for j in 0..inner {
                            g.data_mut()[r * inner + j] += dy.data()[src + j];
                        }
                    }
                }
                acc(*x, g);
            }
            Op::WeightedMse {
                pred,
                target,
                weight,
            } => {
                let p = self.value(*pred);
                let scale = 2.0 * dy.data()[0] / p.numel() as f64;
                let mut g = p.zip_map(target, |a, t| a - t);
                for (e, w) in g.data_mut().iter_mut().zip(weight.data()) {
                    *e *= scale * w;
                }
                acc(*pred, g);
            }
        }
    }
}
