//! Frozen orbital-view feature provider over a fixed azimuth set, and the
//! per-frame view matcher.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::denoiser::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::sinusoid;
use crate::tensor::{avg_pool, conv_forward, resize_bilinear, ConvGeom, Tensor};

/// Default orbit azimuths in degrees, dense around the reference view.
pub const DEFAULT_AZIMUTHS: [f64; 21] = [
    0.0, 3.0, 6.0, 9.0, 12.0, 16.0, 23.0, 30.0, 45.0, 90.0, 135.0, 225.0, 270.0, 315.0, 330.0, 337.0,
    344.0, 348.0, 351.0, 354.0, 357.0,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AzimuthSet {
    angles: Vec<f64>,
}

impl Default for AzimuthSet {
    fn default() -> Self {
        Self {
            angles: DEFAULT_AZIMUTHS.to_vec(),
        }
    }
}

impl AzimuthSet {
    pub fn new(angles: Vec<f64>) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::validation("azimuths", "set is empty"));
        }
        if angles.iter().any(|a| !(0.0..360.0).contains(a)) {
            return Err(Error::validation("azimuths", "values must lie in [0, 360)"));
        }
        if angles.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation("azimuths", "values must be strictly increasing"));
        }
        Ok(Self { angles })
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    /// Worst-case matching error: half the largest wrapped gap.
    pub fn max_error(&self) -> f64 {
        let n = self.angles.len();
        (0..n)
            .map(|i| {
                let next = if i + 1 < n { self.angles[i + 1] } else { self.angles[0] + 360.0 };
                next - self.angles[i]
            })
            .fold(0.0, f64::max)
            / 2.0
    }
}

impl TryFrom<Vec<f64>> for AzimuthSet {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<AzimuthSet> for Vec<f64> {
    fn from(s: AzimuthSet) -> Self {
        s.angles
    }
}

/// Wrapped distance in degrees, in `[0, 180]`.
pub fn wrapped_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Index of the set member nearest to `a` (degrees) under wrap-around;
/// ties go to the lower index.
pub fn match_frame(a: f64, set: &AzimuthSet) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, &s) in set.angles.iter().enumerate() {
        let d = wrapped_deg(s, a);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

pub fn mean_elevation(e: &[f64]) -> f64 {
    assert!(!e.is_empty(), "mean of an empty elevation list");
    e.iter().sum::<f64>() / e.len() as f64
}

/// `views[j][k]`: block-`k` feature map `[C_k, h_k, w_k]` for orbit view `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct NovelViewFeatures {
    pub views: Vec<Vec<Tensor>>,
}

const EMB_FREQS: usize = 2;

/// Random-weight convolutional pyramid, never trained.
#[derive(Debug, Clone)]
pub struct NovelViewPrior {
    levels: Vec<(Tensor, Tensor)>,
    /// Per denoiser block: `[C_k, 4 * EMB_FREQS]` view modulation weights.
    modulation: Vec<Tensor>,
    latent_hw: (usize, usize),
    block_levels: Vec<usize>,
}

impl NovelViewPrior {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.frozen_seed ^ 0x0a1b_17e5);
        let mut levels = Vec::new();
        let mut cin = 3;
        for &c in &cfg.channels {
            let fan = (cin * 9) as f64;
            let d = Normal::new(0.0, 1.5 / fan.sqrt()).expect("std");
            let w = Tensor::from_vec(&[c, cin, 3, 3], (0..c * cin * 9).map(|_| d.sample(&mut rng)).collect())
                .expect("shape");
            let b = Tensor::from_vec(&[c], (0..c).map(|_| d.sample(&mut rng) * 0.1).collect()).expect("shape");
            levels.push((w, b));
            cin = c;
        }
        let d = Normal::new(0.0, 1.0).expect("std");
        let e = 4 * EMB_FREQS;
        let modulation = (0..cfg.num_blocks())
            .map(|k| {
                let c = cfg.block_shape(k).0;
                Tensor::from_vec(&[c, e], (0..c * e).map(|_| d.sample(&mut rng)).collect()).expect("shape")
            })
            .collect();
        Self {
            levels,
            modulation,
            latent_hw: cfg.latent_hw(),
            block_levels: (0..cfg.num_blocks()).map(|k| cfg.block_level(k)).collect(),
        }
    }

    /// View-independent pyramid of `reference` (`[3, h, w]`).
    fn pyramid(&self, reference: &Tensor) -> Vec<Tensor> {
        let (h0, w0) = self.latent_hw;
        let mut x = resize_bilinear(reference, h0, w0).reshape(&[1, 3, h0, w0]).expect("shape");
        let mut out = Vec::new();
        for (l, (w, b)) in self.levels.iter().enumerate() {
            if l > 0 {
                x = avg_pool(&x, 2);
            }
            let (h, ww) = (x.dim(2), x.dim(3));
            let g = ConvGeom {
                batch: 1,
                cin: w.dim(1),
                cout: w.dim(0),
                input: [1, h, ww],
                kernel: [1, 3, 3],
                stride: [1, 1, 1],
                pad: [0, 1, 1],
            };
            let y = conv_forward(&g, x.data(), w.data(), Some(b.data())).into_iter().map(f64::tanh).collect();
            x = Tensor::from_vec(&[1, w.dim(0), h, ww], y).expect("shape");
            out.push(x.clone());
        }
        out
    }

    fn modulate(&self, base: &[Tensor], azimuth_deg: f64, elevation: f64) -> Vec<Tensor> {
        let mut emb = sinusoid(azimuth_deg.to_radians(), EMB_FREQS);
        emb.extend(sinusoid(elevation, EMB_FREQS));
        self.block_levels
            .iter()
            .zip(&self.modulation)
            .map(|(&l, m)| {
                let f = &base[l];
                let (c, h, w) = (f.dim(1), f.dim(2), f.dim(3));
                let mut out = Tensor::zeros(&[c, h, w]);
                for ch in 0..c {
                    let z: f64 = m.data()[ch * emb.len()..(ch + 1) * emb.len()]
                        .iter()
                        .zip(&emb)
                        .map(|(a, b)| a * b)
                        .sum();
                    let s = 1.0 + 0.5 * z.tanh();
                    let n = h * w;
                    for (o, v) in out.data_mut()[ch * n..(ch + 1) * n]
                        .iter_mut()
                        .zip(&f.data()[ch * n..(ch + 1) * n])
                    {
                        *o = v * s;
                    }
                }
                out
            })
            .collect()
    }

    /// Features of every orbit view at mean elevation `elevation`.
    pub fn generate(&self, reference: &Tensor, set: &AzimuthSet, elevation: f64) -> NovelViewFeatures {
        let base = self.pyramid(reference);
        NovelViewFeatures {
            views: set.angles().iter().map(|&a| self.modulate(&base, a, elevation)).collect(),
        }
    }

    /// Features of selected views only (same values as `generate`).
    pub fn generate_views(&self, reference: &Tensor, azimuths_deg: &[f64], elevation: f64) -> Vec<Vec<Tensor>> {
        let base = self.pyramid(reference);
        azimuths_deg.iter().map(|&a| self.modulate(&base, a, elevation)).collect()
    }

    pub fn checksum(&self) -> u64 {
        let mut h = 0u64;
        for (w, b) in &self.levels {
            h = h.rotate_left(7) ^ w.checksum() ^ b.checksum().rotate_left(3);
        }
        for m in &self.modulation {
            h = h.rotate_left(7) ^ m.checksum();
        }
        h
    }
}
