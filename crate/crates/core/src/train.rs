//! Two-stage training on the reconstruction task, and checkpoints.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Graph, ParamId};
use crate::denoiser::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::geometry::DEFAULT_MASK_DILATION;
use crate::optim::Adam;
use crate::pipeline::{build_conditioning, EditInput};
use crate::scene::{make_masked_video, Dataset, Split, VideoClip, MASK_FILL};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"BXCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: PathBuf,
    pub output: PathBuf,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Loss weight inside the mask (outside is 1).
    pub mask_weight: f64,
    /// Caps on the number of object and inpainting clips used.
    pub train_clips: Option<usize>,
    pub inpaint_clips: Option<usize>,
    pub log_every: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data"),
            output: PathBuf::from("checkpoint.bxck"),
            stage1_steps: 2000,
            stage2_steps: 1000,
            batch_size: 4,
            lr: 1e-5,
            seed: 0,
            mask_weight: 5.0,
            train_clips: None,
            inpaint_clips: None,
            log_every: 100,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// CPU preset: 32x64, four frames and a learning rate suited to the
    /// short schedule.
    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            model: ModelConfig::desk(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::validation("lr", "must be positive"));
        }
        if self.mask_weight < 1.0 {
            return Err(Error::validation("mask_weight", "must be at least 1"));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.stage1_steps + self.stage2_steps
    }

    /// Loads the training clips named by the config from `dataset`.
    pub fn load_clips(&self, ds: &Dataset) -> Result<Vec<VideoClip>> {
        let mut clips = ds.load_clips(Split::Train)?;
        if let Some(n) = self.train_clips {
            clips.truncate(n);
        }
        let mut inp = ds.load_clips(Split::Inpaint)?;
        if let Some(n) = self.inpaint_clips {
            inp.truncate(n);
        }
        clips.extend(inp);
        Ok(clips)
    }
}

/// Per-element loss weights `lambda(sigma_b) (1 + (w - 1) M)` for latent
/// shape `[B*N, C, h, w]`; `mask_latent` is `[B*N, 1, h, w]`.
pub fn loss_weights(model: &ModelConfig, sigma: &[f64], mask_latent: &Tensor, channels: usize, mask_weight: f64) -> Tensor {
    let (bn, h, w) = (mask_latent.dim(0), mask_latent.dim(2), mask_latent.dim(3));
    let n = bn / sigma.len();
    let hw = h * w;
    let mut out = Vec::with_capacity(bn * channels * hw);
    for r in 0..bn {
        let lam = model.loss_weight(sigma[r / n]);
        let m = &mask_latent.data()[r * hw..(r + 1) * hw];
        for _ in 0..channels {
            out.extend(m.iter().map(|&v| lam * (1.0 + (mask_weight - 1.0) * v)));
        }
    }
    Tensor::from_vec(&[bn, channels, h, w], out).expect("weight shape")
}

/// Randomises the reference frame and mask jitter of a clip for one step.
pub fn augment(clip: &VideoClip, rng: &mut ChaCha8Rng) -> Result<VideoClip> {
    let mut c = clip.clone();
    if c.is_inpainting {
        return Ok(c);
    }
    let boxes = c.boxes.clone().expect("object clip has boxes");
    let (masked, mask) = make_masked_video(&c.video, &boxes, &c.intrinsics, DEFAULT_MASK_DILATION, MASK_FILL, Some(rng))?;
    c.masked = masked;
    c.mask = mask;
    let r = rng.random_range(0..c.len());
    c.set_ref_index(r)?;
    Ok(c)
}

/// Loss and gradients of one batch at fixed noise levels and noise.
pub fn batch_loss(
    model: &Model,
    inputs: &[EditInput],
    videos: &[&Tensor],
    sigma: &[f64],
    noise: &Tensor,
    with_fusion: bool,
    mask_weight: f64,
) -> Result<(f64, Gradients)> {
    let cond = build_conditioning(model, inputs, with_fusion)?;
    let z0: Vec<Tensor> = videos.iter().map(|v| model.video_to_latent(v)).collect::<Result<_>>()?;
    let z0 = Tensor::concat(&z0.iter().collect::<Vec<_>>(), 0)?;
    let n = model.cfg.frames;
    let per = z0.numel() / inputs.len();
    let mut z = z0.clone();
    for (i, (zv, e)) in z.data_mut().iter_mut().zip(noise.data()).enumerate() {
        *zv += sigma[i / per] * e;
    }
    debug_assert_eq!(z.dim(0), inputs.len() * n);
    let weight = loss_weights(&model.cfg, sigma, &cond.mask_latent, model.cfg.latent_channels(), mask_weight);
    let mut g = Graph::new(&model.params);
    let d = model.denoise(&mut g, &cond, &z, sigma)?;
    let loss = g.weighted_mse(d, z0, weight);
    let value = g.value(loss).data()[0];
    Ok((value, g.backward(loss)))
}

/// Training state: model, optimiser and global step.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    pub opt: Adam,
    pub step: usize,
    clips: Vec<VideoClip>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, clips: Vec<VideoClip>) -> Result<Self> {
        cfg.validate()?;
        let model = Model::new(cfg.model.clone(), cfg.seed)?;
        Self::with_model(cfg, model, clips)
    }

    fn with_model(cfg: TrainConfig, model: Model, clips: Vec<VideoClip>) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::Config("no training clips".into()));
        }
        let m = &cfg.model;
        for c in &clips {
            if c.video.shape() != [m.frames, 3, m.height, m.width] {
                return Err(Error::Config(format!(
                    "clip {} has shape {:?}, model expects [{}, 3, {}, {}]",
                    c.clip_id,
                    c.video.shape(),
                    m.frames,
                    m.height,
                    m.width
                )));
            }
        }
        let opt = Adam::new(&model.params, cfg.lr);
        Ok(Self {
            cfg,
            model,
            opt,
            step: 0,
            clips,
        })
    }

    /// Resumes from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(ck: Checkpoint, clips: Vec<VideoClip>) -> Result<Self> {
        let cfg = ck.train.clone().ok_or_else(|| Error::Checkpoint("no training state".into()))?;
        let opt = ck.adam.clone().ok_or_else(|| Error::Checkpoint("no optimiser state".into()))?;
        let mut t = Self::with_model(cfg, ck.model, clips)?;
        t.opt = opt;
        t.step = ck.step;
        Ok(t)
    }

    pub fn stage(&self) -> u8 {
        if self.step < self.cfg.stage1_steps {
            1
        } else {
            2
        }
    }

    pub fn done(&self) -> bool {
        self.step >= self.cfg.total_steps()
    }

    /// Parameters updated in the current stage.
    pub fn trainable(&self) -> Vec<ParamId> {
        let gates = self.model.fusion_params();
        (0..self.model.params.len())
            .filter(|id| self.stage() == 2 || !gates.contains(id))
            .collect()
    }

    fn step_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(self.step as u64 + 1);
        rng
    }

    /// Builds the batch of step `self.step`: inputs, videos, sigmas and noise.
    pub fn batch(&self) -> Result<(Vec<EditInput>, Vec<Tensor>, Vec<f64>, Tensor)> {
        let mut rng = self.step_rng();
        let m = &self.model.cfg;
        let mut inputs = Vec::with_capacity(self.cfg.batch_size);
        let mut videos = Vec::with_capacity(self.cfg.batch_size);
        let mut sigma = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size {
            let c = &self.clips[rng.random_range(0..self.clips.len())];
            let c = augment(c, &mut rng)?;
            inputs.push(EditInput::from_clip(&c)?);
            videos.push(c.video);
            sigma.push(m.sample_sigma(&mut rng));
        }
        let (h, w) = m.latent_hw();
        let shape = [self.cfg.batch_size * m.frames, m.latent_channels(), h, w];
        let n: usize = shape.iter().product();
        let noise = Tensor::from_vec(&shape, (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())?;
        Ok((inputs, videos, sigma, noise))
    }

    /// Loss of the current step's batch without updating anything.
    pub fn peek_loss(&self) -> Result<f64> {
        let (inputs, videos, sigma, noise) = self.batch()?;
        let v: Vec<&Tensor> = videos.iter().collect();
        let fusion = self.stage() == 2 && self.cfg.model.fusion;
        Ok(batch_loss(&self.model, &inputs, &v, &sigma, &noise, fusion, self.cfg.mask_weight)?.0)
    }

    /// One optimisation step; returns the pre-update loss.
    pub fn train_step(&mut self) -> Result<f64> {
        if self.step == self.cfg.stage1_steps && self.step > 0 {
            self.opt = Adam::new(&self.model.params, self.cfg.lr);
        }
        let (inputs, videos, sigma, noise) = self.batch()?;
        let v: Vec<&Tensor> = videos.iter().collect();
        let fusion = self.stage() == 2 && self.cfg.model.fusion;
        let (loss, grads) = batch_loss(&self.model, &inputs, &v, &sigma, &noise, fusion, self.cfg.mask_weight)?;
        let trainable = self.trainable();
        self.opt.step(&mut self.model.params, &grads, &trainable);
        self.step += 1;
        if self.cfg.log_every > 0 && self.step.is_multiple_of(self.cfg.log_every) {
            log::info!("step {} stage {} loss {loss:.5}", self.step, self.stage());
        }
        Ok(loss)
    }

    /// Trains to the end of both stages, returning every step's loss.
    pub fn run(&mut self) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        while !self.done() {
            out.push(self.train_step()?);
        }
        Ok(out)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            train: Some(self.cfg.clone()),
            adam: Some(self.opt.clone()),
            step: self.step,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: Option<TrainConfig>,
    step: usize,
    params: Vec<(String, Vec<usize>)>,
    adam: Option<AdamHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdamHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
}

/// Serialised model weights plus optional optimiser state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub train: Option<TrainConfig>,
    pub adam: Option<Adam>,
    pub step: usize,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let p = &self.model.params;
        let header = Header {
            model: self.model.cfg.clone(),
            train: self.train.clone(),
            step: self.step,
            params: p.iter().map(|(_, e)| (e.name.clone(), e.value.shape().to_vec())).collect(),
            adam: self.adam.as_ref().map(|a| AdamHeader {
                lr: a.lr,
                beta1: a.beta1,
                beta2: a.beta2,
                eps: a.eps,
                t: a.t,
            }),
        };
        let hj = serde_json::to_vec(&header)?;
        let mut buf = Vec::with_capacity(16 + hj.len() + 8 * p.num_scalars() * 3);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(hj.len() as u64).to_le_bytes());
        buf.extend_from_slice(&hj);
        let mut put = |t: &Tensor| t.data().iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        p.iter().for_each(|(_, e)| put(&e.value));
        if let Some(a) = &self.adam {
            a.m.iter().for_each(&mut put);
            a.v.iter().for_each(&mut put);
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hl = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + hl).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut model = Model::new(header.model, 0)?;
        let mut pos = 16 + hl;
        let mut take = |t: &mut Tensor| -> Result<()> {
            let n = t.numel() * 8;
            let chunk = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated data"))?;
            for (v, c) in t.data_mut().iter_mut().zip(chunk.chunks_exact(8)) {
                *v = f64::from_le_bytes(c.try_into().expect("8 bytes"));
            }
            pos += n;
            Ok(())
        };
        if header.params.len() != model.params.len() {
            return Err(bad("parameter count differs from the model"));
        }
        for (id, (name, shape)) in header.params.iter().enumerate() {
            if model.params.name(id) != name || model.params.get(id).shape() != shape.as_slice() {
                return Err(bad(&format!("parameter {name} does not match the model")));
            }
            take(model.params.get_mut(id))?;
        }
        let adam = match header.adam {
            Some(h) => {
                let mut a = Adam::new(&model.params, h.lr);
                a.beta1 = h.beta1;
                a.beta2 = h.beta2;
                a.eps = h.eps;
                a.t = h.t;
                for t in a.m.iter_mut() {
                    take(t)?;
                }
                for t in a.v.iter_mut() {
                    take(t)?;
                }
                Some(a)
            }
            None => None,
        };
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            model,
            train: header.train,
            adam,
            step: header.step,
        })
    }
}
