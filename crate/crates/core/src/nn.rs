//! Parameterised layers over the autograd graph.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Normal with std `gain / sqrt(fan_in)`.
    Fan(u32),
    Zero,
}

fn init_tensor(shape: &[usize], fan_in: usize, init: Init, rng: &mut impl Rng) -> Tensor {
    match init {
        Init::Zero => Tensor::zeros(shape),
        Init::Fan(gain_pct) => {
            let std = gain_pct as f64 / 100.0 / (fan_in as f64).sqrt();
            let d = Normal::new(0.0, std).expect("finite std");
            let n = shape.iter().product();
            Tensor::from_vec(shape, (0..n).map(|_| d.sample(rng)).collect()).expect("init shape")
        }
    }
}

/// 2D (`[B, C, H, W]`) or 3D (`[B, C, D, H, W]`) convolution.
#[derive(Debug, Clone)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    stride: [usize; 3],
    pad: [usize; 3],
}

impl Conv {
    /// `kernel` has 2 or 3 entries; padding is `k / 2` unless `pad` is given.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: &[usize],
        stride: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let pad: Vec<usize> = kernel.iter().map(|k| k / 2).collect();
        Self::with_pad(store, name, cin, cout, kernel, stride, &pad, init, rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_pad(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: &[usize],
        stride: usize,
        pad: &[usize],
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let mut shape = vec![cout, cin];
        shape.extend_from_slice(kernel);
        let fan_in = cin * kernel.iter().product::<usize>();
        let w = store.add(format!("{name}.w"), init_tensor(&shape, fan_in, init, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        let (stride3, pad3) = if kernel.len() == 2 {
            ([1, stride, stride], [0, pad[0], pad[1]])
        } else {
            ([stride; 3], [pad[0], pad[1], pad[2]])
        };
        Self {
            w,
            b,
            stride: stride3,
            pad: pad3,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        g.conv(x, w, Some(b), self.stride, self.pad)
    }
}

/// Group normalisation with learned per-channel affine terms.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    groups: usize,
}

impl GroupNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, groups: usize) -> Self {
        assert_eq!(channels % groups, 0, "{name}: {channels} channels, {groups} groups");
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            groups,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.group_norm(x, gamma, beta, self.groups, NORM_EPS)
    }
}

/// `x[M, in] W[in, out] + b[out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, din: usize, dout: usize, init: Init, rng: &mut impl Rng) -> Self {
        Self {
            w: store.add(format!("{name}.w"), init_tensor(&[din, dout], din, init, rng)),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[dout])),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w, false, false);
        g.add_channel(y, b)
    }
}

/// Norm -> SiLU -> conv -> norm -> SiLU -> conv with identity skip. The
/// optional hook adds a term right after the first convolution.
#[derive(Debug, Clone)]
pub struct ResBlock {
    n1: GroupNorm,
    c1: Conv,
    n2: GroupNorm,
    c2: Conv,
}

impl ResBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        groups: usize,
        kernel: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            n1: GroupNorm::new(store, &format!("{name}.n1"), channels, groups),
            c1: Conv::new(store, &format!("{name}.c1"), channels, channels, kernel, 1, Init::Fan(100), rng),
            n2: GroupNorm::new(store, &format!("{name}.n2"), channels, groups),
            c2: Conv::new(store, &format!("{name}.c2"), channels, channels, kernel, 1, Init::Fan(50), rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, hook: impl FnOnce(&mut Graph, Var) -> Var) -> Var {
        let h = self.n1.forward(g, x);
        let h = g.silu(h);
        let h = self.c1.forward(g, h);
        let h = hook(g, h);
        let h = self.n2.forward(g, h);
        let h = g.silu(h);
        let h = self.c2.forward(g, h);
        g.add(x, h)
    }
}

/// Sinusoidal features `[sin(2^i x), cos(2^i x)]` for `i < n`.
pub fn sinusoid(x: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        let f = (1u64 << i) as f64;
        out.push((f * x).sin());
        out.push((f * x).cos());
    }
    out
}
