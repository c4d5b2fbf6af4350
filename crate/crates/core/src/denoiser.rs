//! Latent video denoiser: EDM preconditioning around a hierarchical
//! encoder-decoder with spatial and temporal residual blocks,
//! cross-attention over semantic tokens, pose-feature adapters and
//! novel-view fusion gates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::codec::LatentCodec;
use crate::error::{Error, Result};
use crate::fusion::FusionGate;
use crate::geometry::{ProjectionMode, DEFAULT_FACE_GRID, DEFAULT_MAX_DEPTH};
use crate::nn::{sinusoid, Conv, GroupNorm, Init, Linear, ResBlock};
use crate::novel_view::{AzimuthSet, NovelViewPrior};
use crate::position::{inject_temporal, mirror_index, Adapter, PositionController};
use crate::tensor::{avg_pool, Tensor};

/// Frequencies used for each scalar in the vector conditioning.
const Y_FREQS: usize = 2;
const NOISE_FREQS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Latent patch size.
    pub patch: usize,
    /// Channels per level; the number of entries is the level count `L`.
    pub channels: Vec<usize>,
    pub groups: usize,
    pub token_dim: usize,
    pub attn_dim: usize,
    pub heads: usize,
    pub token_patch: usize,
    pub ref_size: usize,
    pub sigma_data: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub p_mean: f64,
    pub p_std: f64,
    pub projection: ProjectionMode,
    pub controller: bool,
    pub fusion: bool,
    pub azimuths: AzimuthSet,
    pub pose_grid: usize,
    pub max_depth: f64,
    pub sample_steps: usize,
    pub frozen_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 128,
            frames: 6,
            patch: 4,
            channels: vec![32, 64, 96],
            groups: 8,
            token_dim: 32,
            attn_dim: 32,
            heads: 2,
            token_patch: 4,
            ref_size: 16,
            sigma_data: 0.5,
            sigma_min: 0.002,
            sigma_max: 80.0,
            p_mean: -1.2,
            p_std: 1.2,
            projection: ProjectionMode::Depth,
            controller: true,
            fusion: true,
            azimuths: AzimuthSet::default(),
            pose_grid: DEFAULT_FACE_GRID,
            max_depth: DEFAULT_MAX_DEPTH,
            sample_steps: 25,
            frozen_seed: 1234,
        }
    }
}

impl ModelConfig {
    /// Smallest useful configuration (two levels, 8x16 latent, two frames).
    pub fn tiny() -> Self {
        Self {
            height: 32,
            width: 64,
            frames: 2,
            channels: vec![8, 16],
            groups: 4,
            token_dim: 8,
            attn_dim: 8,
            heads: 1,
            ref_size: 8,
            pose_grid: 8,
            ..Self::default()
        }
    }

    /// CPU-friendly configuration at 32x64 with a 2x2 latent patch.
    pub fn desk() -> Self {
        Self {
            height: 32,
            width: 64,
            frames: 4,
            patch: 2,
            channels: vec![16, 32, 48],
            groups: 8,
            token_dim: 16,
            attn_dim: 16,
            heads: 1,
            ..Self::default()
        }
    }

    pub fn num_levels(&self) -> usize {
        self.channels.len()
    }

    pub fn num_blocks(&self) -> usize {
        2 * self.channels.len()
    }

    pub fn block_level(&self, k: usize) -> usize {
        mirror_index(k, self.num_levels())
    }

    pub fn latent_hw(&self) -> (usize, usize) {
        (self.height / self.patch, self.width / self.patch)
    }

    pub fn latent_channels(&self) -> usize {
        3 * self.patch * self.patch
    }

    /// `(channels, height, width)` of block `k`'s output.
    pub fn block_shape(&self, k: usize) -> (usize, usize, usize) {
        let l = self.block_level(k);
        let (h, w) = self.latent_hw();
        (self.channels[l], h >> l, w >> l)
    }

    /// Image pixels per block-`k` pixel.
    pub fn block_factor(&self, k: usize) -> usize {
        self.patch << self.block_level(k)
    }

    pub fn bg_token_hw(&self) -> (usize, usize) {
        (self.height / 2 / self.token_patch, self.width / 2 / self.token_patch)
    }

    pub fn bg_tokens(&self) -> usize {
        let (h, w) = self.bg_token_hw();
        h * w
    }

    pub fn ref_tokens(&self) -> usize {
        (self.ref_size / self.token_patch).pow(2)
    }

    pub fn y_dim(&self) -> usize {
        2 * NOISE_FREQS + 4 * Y_FREQS
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::validation(format!("model.{f}"), m));
        let l = self.num_levels();
        if l < 2 {
            return bad("channels", "need at least two levels");
        }
        if self.channels.windows(2).any(|w| w[1] <= w[0]) {
            return bad("channels", "must be strictly increasing");
        }
        if self.channels.iter().any(|c| c % self.groups != 0) {
            return bad("groups", "must divide every channel count");
        }
        let unit = self.patch << (l - 1);
        if self.patch == 0 || !self.height.is_multiple_of(unit) || !self.width.is_multiple_of(unit) {
            return bad("height/width", "must be divisible by patch * 2^(levels-1)");
        }
        if self.frames == 0 {
            return bad("frames", "must be positive");
        }
        if self.heads == 0 || !self.attn_dim.is_multiple_of(self.heads) {
            return bad("heads", "must divide attn_dim");
        }
        let tp = self.token_patch;
        if tp == 0 || !(self.height / 2).is_multiple_of(tp) || !(self.width / 2).is_multiple_of(tp) || !self.ref_size.is_multiple_of(tp) {
            return bad("token_patch", "must divide half the frame size and ref_size");
        }
        if !(self.sigma_min > 0.0 && self.sigma_max > self.sigma_min && self.sigma_data > 0.0) {
            return bad("sigma", "need 0 < sigma_min < sigma_max and sigma_data > 0");
        }
        if self.pose_grid < 2 || self.max_depth <= 0.0 {
            return bad("pose_grid", "need pose_grid >= 2 and max_depth > 0");
        }
        if self.sample_steps == 0 {
            return bad("sample_steps", "must be positive");
        }
        Ok(())
    }

    pub fn c_skip(&self, s: f64) -> f64 {
        let d2 = self.sigma_data * self.sigma_data;
        d2 / (s * s + d2)
    }

    pub fn c_out(&self, s: f64) -> f64 {
        s * self.sigma_data / (s * s + self.sigma_data * self.sigma_data).sqrt()
    }

    pub fn c_in(&self, s: f64) -> f64 {
        1.0 / (s * s + self.sigma_data * self.sigma_data).sqrt()
    }

    pub fn c_noise(&self, s: f64) -> f64 {
        s.ln() / 4.0
    }

    /// Loss weight `(s^2 + d^2) / (s d)^2`.
    pub fn loss_weight(&self, s: f64) -> f64 {
        let d = self.sigma_data;
        (s * s + d * d) / (s * d).powi(2)
    }

    /// Training noise level: `ln s ~ N(p_mean, p_std^2)`.
    pub fn sample_sigma(&self, rng: &mut impl Rng) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        (self.p_mean + self.p_std * z).exp()
    }

    /// `steps` log-spaced levels from `sigma_max` to `sigma_min`, then 0.
    pub fn sigma_schedule(&self, steps: usize) -> Vec<f64> {
        let (a, b) = (self.sigma_max.ln(), self.sigma_min.ln());
        let mut s: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    self.sigma_max
                } else {
                    (a + (b - a) * i as f64 / (steps - 1) as f64).exp()
                }
            })
            .collect();
        s.push(0.0);
        s
    }
}

/// Sinusoidal features of the reference elevation and azimuth.
pub fn view_embedding(elevation: f64, azimuth: f64) -> Vec<f64> {
    let mut v = sinusoid(elevation, Y_FREQS);
    v.extend(sinusoid(azimuth, Y_FREQS));
    v
}

/// Frozen patch-embedding encoder producing semantic tokens.
#[derive(Debug, Clone)]
pub struct TokenEncoder {
    patch: usize,
    dim: usize,
    /// `[3 p^2, D]`
    w: Tensor,
    bg_type: Vec<f64>,
    ref_type: Vec<f64>,
}

impl TokenEncoder {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.frozen_seed ^ 0x70ce_4e11);
        let p = cfg.token_patch;
        let fan = 3 * p * p;
        let d = Normal::new(0.0, 1.0 / (fan as f64).sqrt()).expect("std");
        let w = Tensor::from_vec(&[fan, cfg.token_dim], (0..fan * cfg.token_dim).map(|_| d.sample(&mut rng)).collect())
            .expect("shape");
        let t = Normal::new(0.0, 0.3).expect("std");
        Self {
            patch: p,
            dim: cfg.token_dim,
            w,
            bg_type: (0..cfg.token_dim).map(|_| t.sample(&mut rng)).collect(),
            ref_type: (0..cfg.token_dim).map(|_| t.sample(&mut rng)).collect(),
        }
    }

    fn encode(&self, img: &Tensor, type_emb: &[f64]) -> Tensor {
        let (h, w) = (img.dim(1), img.dim(2));
        let p = self.patch;
        let (th, tw) = (h / p, w / p);
        let fan = 3 * p * p;
        let mut out = Tensor::zeros(&[th * tw, self.dim]);
        let mut patch = vec![0.0; fan];
        for ty in 0..th {
            for tx in 0..tw {
                for c in 0..3 {
                    for dy in 0..p {
                        for dx in 0..p {
                            patch[(c * p + dy) * p + dx] = img.data()[(c * h + ty * p + dy) * w + tx * p + dx];
                        }
                    }
                }
                let t = ty * tw + tx;
                let row = &mut out.data_mut()[t * self.dim..(t + 1) * self.dim];
                for (j, r) in row.iter_mut().enumerate() {
                    let mut s = type_emb[j];
                    for (i, pv) in patch.iter().enumerate() {
                        s += pv * self.w.data()[i * self.dim + j];
                    }
                    let freq = 1.0 / 10000f64.powf((j / 2 * 2) as f64 / self.dim as f64);
                    s += if j % 2 == 0 { (t as f64 * freq).sin() } else { (t as f64 * freq).cos() } * 0.5;
                    *r = s;
                }
            }
        }
        out
    }

    /// Tokens of a masked background frame `[3, H, W]` (pooled by 2).
    pub fn background(&self, frame: &Tensor) -> Tensor {
        let (h, w) = (frame.dim(1), frame.dim(2));
        let pooled = avg_pool(&frame.reshaped(&[1, 3, h, w]).expect("shape"), 2);
        let pooled = pooled.reshape(&[3, h / 2, w / 2]).expect("shape");
        self.encode(&pooled, &self.bg_type)
    }

    /// Tokens of a reference image already resized to `ref_size`.
    pub fn reference(&self, img: &Tensor) -> Tensor {
        self.encode(img, &self.ref_type)
    }
}

/// Per-batch conditioning tensors (all frame-major, `B*N` rows).
#[derive(Debug, Clone)]
pub struct Conditioning {
    pub batch: usize,
    pub frames: usize,
    /// `[B*N, C_lat + 1, h, w]`: encoded pasted masked video and latent mask.
    pub c_concat: Tensor,
    /// `[B*N, 1, h, w]`
    pub mask_latent: Tensor,
    /// Per sample `[T_bg, D]`.
    pub tokens_bg: Vec<Tensor>,
    /// Per sample `[T_ref, D]`; `None` selects the null embedding.
    pub tokens_ref: Vec<Option<Tensor>>,
    /// Per sample reference-view embedding.
    pub view_emb: Vec<Vec<f64>>,
    /// `[B*N, 6, H, W]`
    pub pose: Tensor,
    /// Per block: aligned novel-view features and block mask, both of the
    /// block's output shape. `None` when no sample carries a reference.
    pub fusion: Option<Vec<(Tensor, Tensor)>>,
}

impl Conditioning {
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let bn = self.batch * self.frames;
        let (h, w) = cfg.latent_hw();
        let check = |what: &str, t: &Tensor, want: Vec<usize>| {
            if t.shape() != want.as_slice() {
                Err(Error::ShapeMismatch {
                    what: what.into(),
                    expected: want,
                    got: t.shape().to_vec(),
                })
            } else {
                Ok(())
            }
        };
        check("c_concat", &self.c_concat, vec![bn, cfg.latent_channels() + 1, h, w])?;
        check("mask_latent", &self.mask_latent, vec![bn, 1, h, w])?;
        check("pose", &self.pose, vec![bn, 6, cfg.height, cfg.width])?;
        if self.tokens_bg.len() != self.batch || self.tokens_ref.len() != self.batch || self.view_emb.len() != self.batch {
            return Err(Error::BadShape("per-sample conditioning count differs from batch".into()));
        }
        for t in &self.tokens_bg {
            check("tokens_bg", t, vec![cfg.bg_tokens(), cfg.token_dim])?;
        }
        for t in self.tokens_ref.iter().flatten() {
            check("tokens_ref", t, vec![cfg.ref_tokens(), cfg.token_dim])?;
        }
        if let Some(f) = &self.fusion {
            if f.len() != cfg.num_blocks() {
                return Err(Error::BadShape("fusion needs one entry per block".into()));
            }
            for (k, (a, m)) in f.iter().enumerate() {
                let (c, bh, bw) = cfg.block_shape(k);
                check("fusion.aligned", a, vec![bn, c, bh, bw])?;
                check("fusion.mask", m, vec![bn, c, bh, bw])?;
            }
        }
        Ok(())
    }

    /// Copy with all pose images zeroed.
    pub fn without_pose(&self) -> Self {
        let mut c = self.clone();
        c.pose = Tensor::zeros(self.pose.shape());
        c
    }
}

#[derive(Debug, Clone)]
struct CrossAttn {
    norm: GroupNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl CrossAttn {
    fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, c: usize, rng: &mut impl Rng) -> Self {
        let d = cfg.attn_dim;
        Self {
            norm: GroupNorm::new(store, &format!("{name}.norm"), c, cfg.groups),
            q: Linear::new(store, &format!("{name}.q"), c, d, Init::Fan(100), rng),
            k: Linear::new(store, &format!("{name}.k"), cfg.token_dim, d, Init::Fan(100), rng),
            v: Linear::new(store, &format!("{name}.v"), cfg.token_dim, d, Init::Fan(100), rng),
            o: Linear::new(store, &format!("{name}.o"), d, c, Init::Fan(50), rng),
            heads: cfg.heads,
        }
    }

    /// `tokens`: `[B*T, D]`.
    fn forward(&self, g: &mut Graph, x: Var, tokens: Var, batch: usize, t: usize) -> Var {
        let s = g.shape(x).to_vec();
        let (bn, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (hw, nh) = (h * w, self.heads);
        let frames = bn / batch;
        let hn = self.norm.forward(g, x);
        let hn = g.reshape(hn, &[bn, c, hw]);
        let hn = g.permute(hn, &[0, 2, 1]);
        let hn = g.reshape(hn, &[bn * hw, c]);
        let q = self.q.forward(g, hn);
        let k = self.k.forward(g, tokens);
        let v = self.v.forward(g, tokens);
        let d = g.shape(q)[1];
        let dh = d / nh;
        let split_q = |g: &mut Graph, q: Var| {
            if nh == 1 {
                return g.reshape(q, &[bn, hw, d]);
            }
            let q = g.reshape(q, &[bn, hw, nh, dh]);
            let q = g.permute(q, &[0, 2, 1, 3]);
            g.reshape(q, &[bn * nh, hw, dh])
        };
        let split_kv = |g: &mut Graph, k: Var| {
            let k = if nh == 1 {
                k
            } else {
                let k = g.reshape(k, &[batch, t, nh, dh]);
                g.permute(k, &[0, 2, 1, 3])
            };
            let k = g.reshape(k, &[batch, t * d]);
            let k = g.repeat_interleave(k, frames);
            g.reshape(k, &[bn * nh, t, dh])
        };
        let q = split_q(g, q);
        let k = split_kv(g, k);
        let v = split_kv(g, v);
        let scores = g.matmul(q, k, false, true);
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let att = g.softmax(scores);
        let o = g.matmul(att, v, false, false);
        let o = if nh == 1 {
            g.reshape(o, &[bn * hw, d])
        } else {
            let o = g.reshape(o, &[bn, nh, hw, dh]);
            let o = g.permute(o, &[0, 2, 1, 3]);
            g.reshape(o, &[bn * hw, d])
        };
        let o = self.o.forward(g, o);
        let o = g.reshape(o, &[bn, hw, c]);
        let o = g.permute(o, &[0, 2, 1]);
        let o = g.reshape(o, &[bn, c, h, w]);
        g.add(x, o)
    }
}

#[derive(Debug, Clone)]
struct Block {
    spatial: ResBlock,
    y_proj: Linear,
    temporal: ResBlock,
    attn: CrossAttn,
    adapter2d: Adapter,
    adapter3d: Adapter,
    gate: FusionGate,
}

/// Full model: trainable parameters plus the frozen codec, token encoder
/// and novel-view prior.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub codec: LatentCodec,
    pub tokenizer: TokenEncoder,
    pub prior: NovelViewPrior,
    conv_in: Conv,
    downs: Vec<Conv>,
    merges: Vec<Conv>,
    blocks: Vec<Block>,
    out_norm: GroupNorm,
    conv_out: Conv,
    null_emb: ParamId,
    controller: PositionController,
}

/// Cached per-forward state.
struct Ctx<'a> {
    cond: &'a Conditioning,
    y: Var,
    tokens: Var,
    feats: Option<Vec<Var>>,
    t: usize,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let ch = cfg.channels.clone();
        let l = ch.len();
        let groups = cfg.groups;
        let conv_in = Conv::new(&mut p, "in", 2 * cfg.latent_channels() + 1, ch[0], &[3, 3], 1, Init::Fan(100), &mut rng);
        let downs = (1..l)
            .map(|k| Conv::new(&mut p, &format!("down{k}"), ch[k - 1], ch[k], &[3, 3], 2, Init::Fan(100), &mut rng))
            .collect();
        let merges = (l + 1..2 * l)
            .map(|k| {
                let lv = 2 * l - 1 - k;
                Conv::new(&mut p, &format!("merge{k}"), ch[lv + 1] + ch[lv], ch[lv], &[1, 1], 1, Init::Fan(100), &mut rng)
            })
            .collect();
        let blocks = (0..2 * l)
            .map(|k| {
                let c = ch[mirror_index(k, l)];
                let n = format!("b{k}");
                Block {
                    spatial: ResBlock::new(&mut p, &format!("{n}.sres"), c, groups, &[3, 3], &mut rng),
                    y_proj: Linear::new(&mut p, &format!("{n}.yproj"), cfg.y_dim(), c, Init::Fan(100), &mut rng),
                    temporal: ResBlock::new(&mut p, &format!("{n}.tres"), c, groups, &[3, 1], &mut rng),
                    attn: CrossAttn::new(&mut p, &format!("{n}.attn"), &cfg, c, &mut rng),
                    adapter2d: Adapter::new(&mut p, &format!("{n}.ad2"), c, &[1, 1], &mut rng),
                    adapter3d: Adapter::new(&mut p, &format!("{n}.ad3"), c, &[3, 1, 1], &mut rng),
                    gate: FusionGate::new(&mut p, &format!("{n}.fz"), c, &mut rng),
                }
            })
            .collect();
        let out_norm = GroupNorm::new(&mut p, "out.norm", ch[0], groups);
        let conv_out = Conv::new(&mut p, "out", ch[0], cfg.latent_channels(), &[3, 3], 1, Init::Fan(30), &mut rng);
        let d = Normal::new(0.0, 0.5).expect("std");
        let null_emb = p.add(
            "null_emb",
            Tensor::from_vec(&[1, cfg.token_dim], (0..cfg.token_dim).map(|_| d.sample(&mut rng)).collect())?,
        );
        let controller = PositionController::new(&mut p, &ch, cfg.patch, groups, &mut rng);
        Ok(Self {
            codec: LatentCodec::new(cfg.patch, cfg.frozen_seed),
            tokenizer: TokenEncoder::new(&cfg),
            prior: NovelViewPrior::new(&cfg),
            cfg,
            params: p,
            conv_in,
            downs,
            merges,
            blocks,
            out_norm,
            conv_out,
            null_emb,
            controller,
        })
    }

    pub fn null_embedding(&self) -> ParamId {
        self.null_emb
    }

    /// Parameter ids of every fusion gate.
    pub fn fusion_params(&self) -> Vec<ParamId> {
        self.blocks.iter().flat_map(|b| [b.gate.conv.w, b.gate.conv.b]).collect()
    }

    /// Parameter ids of the spatial (`temporal = false`) or temporal adapters.
    pub fn adapter_params(&self, temporal: bool) -> Vec<ParamId> {
        self.blocks
            .iter()
            .map(|b| if temporal { &b.adapter3d } else { &b.adapter2d })
            .flat_map(|a| [a.conv.w, a.conv.b])
            .collect()
    }

    /// Semantic token matrix `[B*T, D]` in the graph.
    fn tokens(&self, g: &mut Graph, cond: &Conditioning) -> Var {
        let tr = self.cfg.ref_tokens();
        let mut parts = Vec::with_capacity(2 * cond.batch);
        for (bg, rf) in cond.tokens_bg.iter().zip(&cond.tokens_ref) {
            parts.push(g.constant(bg.clone()));
            match rf {
                Some(t) => parts.push(g.constant(t.clone())),
                None => {
                    let ones = g.constant(Tensor::full(&[tr, 1], 1.0));
                    let null = g.param(self.null_emb);
                    parts.push(g.matmul(ones, null, false, false));
                }
            }
        }
        g.concat(&parts, 0)
    }

    /// Token matrix for one sample as concrete values (for inspection).
    pub fn token_values(&self, cond: &Conditioning, sample: usize) -> Tensor {
        let mut g = Graph::new(&self.params);
        let one = Conditioning {
            batch: 1,
            tokens_bg: vec![cond.tokens_bg[sample].clone()],
            tokens_ref: vec![cond.tokens_ref[sample].clone()],
            ..cond.clone()
        };
        let t = self.tokens(&mut g, &one);
        g.value(t).clone()
    }

    fn block(&self, g: &mut Graph, k: usize, x: Var, ctx: &Ctx) -> Var {
        let b = &self.blocks[k];
        let lv = self.cfg.block_level(k);
        let f = ctx.feats.as_ref().map(|f| f[lv]);
        let batch = ctx.cond.batch;
        let y = ctx.y;
        let x = b.spatial.forward(g, x, |g, h| {
            let e = b.y_proj.forward(g, y);
            let h = g.add_batch_channel(h, e);
            match f {
                Some(f) => {
                    let a = b.adapter2d.forward(g, f);
                    g.add(h, a)
                }
                None => h,
            }
        });
        let s = g.shape(x).to_vec();
        let (bn, c, h, w) = (s[0], s[1], s[2], s[3]);
        let n = bn / batch;
        let xt = g.reshape(x, &[batch, n, c, h * w]);
        let xt = g.permute(xt, &[0, 2, 1, 3]);
        let xt = b.temporal.forward(g, xt, |g, v| match f {
            Some(f) => {
                let a = inject_temporal(g, &b.adapter3d, f, batch);
                g.add(v, a)
            }
            None => v,
        });
        let xt = g.permute(xt, &[0, 2, 1, 3]);
        let x = g.reshape(xt, &[bn, c, h, w]);
        let x = b.attn.forward(g, x, ctx.tokens, batch, ctx.t);
        match (&ctx.cond.fusion, self.cfg.fusion) {
            (Some(fu), true) => b.gate.fuse(g, x, &fu[k].0, &fu[k].1),
            _ => x,
        }
    }

    /// Preconditioned denoiser `D(z; sigma)`; `sigma` has one entry per sample.
    pub fn denoise(&self, g: &mut Graph, cond: &Conditioning, z_noisy: &Tensor, sigma: &[f64]) -> Result<Var> {
        cond.validate(&self.cfg)?;
        let cfg = &self.cfg;
        let (b, n) = (cond.batch, cond.frames);
        let bn = b * n;
        let (h, w) = cfg.latent_hw();
        let lc = cfg.latent_channels();
        if z_noisy.shape() != [bn, lc, h, w] {
            return Err(Error::ShapeMismatch {
                what: "z_noisy".into(),
                expected: vec![bn, lc, h, w],
                got: z_noisy.shape().to_vec(),
            });
        }
        if sigma.len() != b {
            return Err(Error::BadShape(format!("{} sigmas for batch {b}", sigma.len())));
        }
        let row_sigma: Vec<f64> = (0..bn).map(|r| sigma[r / n]).collect();
        let plane = lc * h * w;
        let mut x_in = Vec::with_capacity(bn * (lc + 1) * h * w);
        let mut skip = z_noisy.clone();
        for r in 0..bn {
            let ci = cfg.c_in(row_sigma[r]);
            x_in.extend(z_noisy.data()[r * plane..(r + 1) * plane].iter().map(|v| v * ci));
            let cc = &cond.c_concat.data()[r * (lc + 1) * h * w..(r + 1) * (lc + 1) * h * w];
            x_in.extend_from_slice(cc);
            let cs = cfg.c_skip(row_sigma[r]);
            skip.data_mut()[r * plane..(r + 1) * plane].iter_mut().for_each(|v| *v *= cs);
        }
        let x_in = Tensor::from_vec(&[bn, 2 * lc + 1, h, w], x_in)?;
        let mut y = Vec::with_capacity(bn * cfg.y_dim());
        for r in 0..bn {
            y.extend(sinusoid(cfg.c_noise(row_sigma[r]), NOISE_FREQS));
            y.extend_from_slice(&cond.view_emb[r / n]);
        }
        let y = g.constant(Tensor::from_vec(&[bn, cfg.y_dim()], y)?);
        let tokens = self.tokens(g, cond);
        let feats = cfg.controller.then(|| {
            let pose = g.constant(cond.pose.clone());
            self.controller.encode(g, pose)
        });
        let ctx = Ctx {
            cond,
            y,
            tokens,
            feats,
            t: cfg.bg_tokens() + cfg.ref_tokens(),
        };
        let xin = g.constant(x_in);
        let mut x = self.conv_in.forward(g, xin);
        let l = cfg.num_levels();
        let mut skips = Vec::with_capacity(l);
        for k in 0..l {
            if k > 0 {
                let hsl = g.silu(x);
                x = self.downs[k - 1].forward(g, hsl);
            }
            x = self.block(g, k, x, &ctx);
            skips.push(x);
        }
        for k in l..2 * l {
            if k > l {
                let lv = 2 * l - 1 - k;
                let up = g.upsample2x(x);
                let cat = g.concat(&[up, skips[lv]], 1);
                x = self.merges[k - l - 1].forward(g, cat);
            }
            x = self.block(g, k, x, &ctx);
        }
        let o = self.out_norm.forward(g, x);
        let o = g.silu(o);
        let f = self.conv_out.forward(g, o);
        let c_out: Vec<f64> = row_sigma.iter().map(|&s| cfg.c_out(s)).collect();
        let fo = g.row_scale(f, c_out);
        let sk = g.constant(skip);
        Ok(g.add(sk, fo))
    }

    /// Deterministic Euler ODE sampler; returns the final latent `[B*N, C, h, w]`.
    pub fn sample_latent(&self, cond: &Conditioning, steps: usize, seed: u64) -> Result<Tensor> {
        let cfg = &self.cfg;
        let bn = cond.batch * cond.frames;
        let (h, w) = cfg.latent_hw();
        let shape = [bn, cfg.latent_channels(), h, w];
        let sched = cfg.sigma_schedule(steps.max(1));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let mut z = Tensor::from_vec(
            &shape,
            (0..n).map(|_| { let e: f64 = StandardNormal.sample(&mut rng); sched[0] * e }).collect::<Vec<f64>>(),
        )?;
        for i in 0..sched.len() - 1 {
            let (s, s_next) = (sched[i], sched[i + 1]);
            let mut g = Graph::new(&self.params);
            let d = self.denoise(&mut g, cond, &z, &vec![s; cond.batch])?;
            let dv = g.value(d);
            let zd = z.data_mut();
            for (zi, di) in zd.iter_mut().zip(dv.data()) {
                let slope = (*zi - di) / s;
                *zi += (s_next - s) * slope;
            }
        }
        Ok(z)
    }

    /// Latent `[B*N, C, h, w]` to video `[B*N, 3, H, W]` in `[0, 1]`.
    pub fn latent_to_video(&self, z: &Tensor) -> Result<Tensor> {
        Ok(self.codec.decode(z)?.map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0)))
    }

    /// Video `[*, 3, H, W]` in `[0, 1]` to latent (the codec sees `2V - 1`).
    pub fn video_to_latent(&self, v: &Tensor) -> Result<Tensor> {
        self.codec.encode(&v.map(|x| 2.0 * x - 1.0))
    }
}

/// Overwrites every parameter with seeded normal noise around its init
/// scale (norm gains around 1), so that zero-initialised paths carry gradient.
pub fn randomize_params(store: &mut ParamStore, seed: u64, std: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0, std).expect("std");
    for id in 0..store.len() {
        let gamma = store.name(id).ends_with(".gamma");
        for v in store.get_mut(id).data_mut() {
            *v = if gamma { 1.0 + d.sample(&mut rng) } else { d.sample(&mut rng) };
        }
    }
}
