//! Exactly invertible latent codec: space-to-depth followed by a frozen,
//! seeded orthonormal map per patch.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

#[derive(Debug, Clone)]
pub struct LatentCodec {
    patch: usize,
    /// Row-major `[C_lat, C_lat]` orthonormal matrix.
    q: Vec<f64>,
}

impl LatentCodec {
    pub fn new(patch: usize, seed: u64) -> Self {
        let n = 3 * patch * patch;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        let qr = a.qr();
        let q = qr.q();
        let r = qr.r();
        // fix column signs so the factorisation is unique
        let mut q_fixed = q.clone();
        for j in 0..n {
            if r[(j, j)] < 0.0 {
                for i in 0..n {
                    q_fixed[(i, j)] = -q[(i, j)];
                }
            }
        }
        let mut flat = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                flat[i * n + j] = q_fixed[(i, j)];
            }
        }
        Self { patch, q: flat }
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn latent_channels(&self) -> usize {
        3 * self.patch * self.patch
    }

    /// `[N, 3, H, W]` -> `[N, 3 s^2, H/s, W/s]`.
    pub fn encode(&self, video: &Tensor) -> Result<Tensor> {
        let s = self.patch;
        let [n, c, h, w] = shape4(video)?;
        if c != 3 || h % s != 0 || w % s != 0 {
            return Err(Error::BadShape(format!(
                "codec expects [N, 3, H, W] with H, W divisible by {s}, got {:?}",
                video.shape()
            )));
        }
        let (lh, lw, lc) = (h / s, w / s, self.latent_channels());
        let m = lh * lw;
        let mut patches = vec![0.0; lc * m];
        let mut out = vec![0.0; n * lc * m];
        for f in 0..n {
            let src = &video.data()[f * 3 * h * w..(f + 1) * 3 * h * w];
            for ch in 0..3 {
                for dy in 0..s {
                    for dx in 0..s {
                        let row = (ch * s + dy) * s + dx;
                        for y in 0..lh {
                            for x in 0..lw {
                                patches[row * m + y * lw + x] = src[(ch * h + y * s + dy) * w + x * s + dx];
                            }
                        }
                    }
                }
            }
            gemm(lc, lc, m, 1.0, &self.q, true, &patches, false, 0.0, &mut out[f * lc * m..(f + 1) * lc * m]);
        }
        Tensor::from_vec(&[n, lc, lh, lw], out)
    }

    /// Exact inverse of `encode`.
    pub fn decode(&self, latent: &Tensor) -> Result<Tensor> {
        let s = self.patch;
        let [n, lc, lh, lw] = shape4(latent)?;
        if lc != self.latent_channels() {
            return Err(Error::BadShape(format!(
                "codec expects {} latent channels, got {lc}",
                self.latent_channels()
            )));
        }
        let (h, w, m) = (lh * s, lw * s, lh * lw);
        let mut patches = vec![0.0; lc * m];
        let mut out = vec![0.0; n * 3 * h * w];
        for f in 0..n {
            gemm(lc, lc, m, 1.0, &self.q, false, &latent.data()[f * lc * m..(f + 1) * lc * m], false, 0.0, &mut patches);
            let dst = &mut out[f * 3 * h * w..(f + 1) * 3 * h * w];
            for ch in 0..3 {
                for dy in 0..s {
                    for dx in 0..s {
                        let row = (ch * s + dy) * s + dx;
                        for y in 0..lh {
                            for x in 0..lw {
                                dst[(ch * h + y * s + dy) * w + x * s + dx] = patches[row * m + y * lw + x];
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[n, 3, h, w], out)
    }
}

fn shape4(t: &Tensor) -> Result<[usize; 4]> {
    match t.shape() {
        [a, b, c, d] => Ok([*a, *b, *c, *d]),
        s => Err(Error::BadShape(format!("expected rank 4, got {s:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn zeros_roundtrip_and_norm() {
        let c = LatentCodec::new(4, 11);
        let z = c.encode(&Tensor::zeros(&[2, 3, 8, 16])).unwrap();
        assert_eq!(z.shape(), &[2, 48, 2, 4]);
        assert!(z.data().iter().all(|&v| v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_vec(&[2, 3, 8, 16], (0..768).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let z = c.encode(&x).unwrap();
        assert!(c.decode(&z).unwrap().max_abs_diff(&x) < 1e-12);
        assert!((z.norm() - x.norm()).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_shapes() {
        let c = LatentCodec::new(4, 0);
        assert!(matches!(c.encode(&Tensor::zeros(&[1, 3, 6, 8])), Err(Error::BadShape(_))));
        assert!(matches!(c.decode(&Tensor::zeros(&[1, 5, 2, 2])), Err(Error::BadShape(_))));
    }
}
