//! Position controller: encodes pose-image sequences into multi-scale
//! features, and the adapters that inject them into residual blocks.

use rand::Rng;

use crate::autograd::{Graph, ParamStore, Var};
use crate::nn::{Conv, GroupNorm, Init, ResBlock};
use crate::tensor::Tensor;

/// Controller level consumed by denoiser block `k` of `2 * levels` blocks:
/// encoder blocks use their own level, decoder blocks the mirrored one.
pub fn mirror_index(k: usize, levels: usize) -> usize {
    assert!(k < 2 * levels, "block {k} out of range for {levels} levels");
    if k < levels {
        k
    } else {
        2 * levels - k - 1
    }
}

/// Swaps the frame and channel axes: `[B, N, C, H, W] <-> [B, C, N, H, W]`.
pub fn permute_frames(x: &Tensor) -> Tensor {
    x.permute(&[0, 2, 1, 3, 4])
}

#[derive(Debug, Clone)]
pub struct PositionController {
    stem: Conv,
    stages: Vec<(Option<Conv>, ResBlock)>,
}

impl PositionController {
    pub fn new(
        store: &mut ParamStore,
        channels: &[usize],
        patch: usize,
        groups: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let stem = Conv::with_pad(store, "pc.stem", 6, channels[0], &[patch, patch], patch, &[0, 0], Init::Fan(100), rng);
        let stages = channels
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let down = (k > 0).then(|| {
                    Conv::new(store, &format!("pc.down{k}"), channels[k - 1], c, &[3, 3], 2, Init::Fan(100), rng)
                });
                (down, ResBlock::new(store, &format!("pc.res{k}"), c, groups, &[3, 3], rng))
            })
            .collect();
        Self { stem, stages }
    }

    /// `[B*N, 6, H, W]` -> one `[B*N, C_k, H_k, W_k]` map per level.
    pub fn encode(&self, g: &mut Graph, pose: Var) -> Vec<Var> {
        let mut x = self.stem.forward(g, pose);
        let mut out = Vec::with_capacity(self.stages.len());
        for (down, res) in &self.stages {
            if let Some(d) = down {
                let h = g.silu(x);
                x = d.forward(g, h);
            }
            x = res.forward(g, x, |_, h| h);
            out.push(x);
        }
        out
    }
}

/// Activation -> normalisation -> convolution, output conv zero-initialised.
#[derive(Debug, Clone)]
pub struct Adapter {
    norm: GroupNorm,
    pub conv: Conv,
}

impl Adapter {
    /// `kernel` of length 2 builds the spatial adapter, length 3 the temporal one.
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, kernel: &[usize], rng: &mut impl Rng) -> Self {
        Self {
            norm: GroupNorm::new(store, &format!("{name}.norm"), channels, 1),
            conv: Conv::new(store, &format!("{name}.conv"), channels, channels, kernel, 1, Init::Zero, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = g.silu(x);
        let h = self.norm.forward(g, h);
        self.conv.forward(g, h)
    }
}

/// Spatial adapter input/output: `[B*N, C, h, w]`. Temporal adapter input:
/// the frame/channel permutation of `f`, output reshaped to `[B, C, N, h*w]`.
pub fn inject_temporal(g: &mut Graph, adapter: &Adapter, f: Var, batch: usize) -> Var {
    let s = g.shape(f).to_vec();
    let (bn, c, h, w) = (s[0], s[1], s[2], s[3]);
    let n = bn / batch;
    let x = g.reshape(f, &[batch, n, c, h, w]);
    let x = g.permute(x, &[0, 2, 1, 3, 4]);
    let y = adapter.forward(g, x);
    g.reshape(y, &[batch, c, n, h * w])
}
