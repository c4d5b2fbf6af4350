//! Novel-view feature fusion: align orbit features to the object's
//! projected region and add them, mask-windowed and zero-conv gated, to
//! denoiser block outputs.

use rand::Rng;

use crate::autograd::{Graph, ParamStore, Var};
use crate::geometry::{project_box_rect, Box3D, CameraIntrinsics};
use crate::nn::{Conv, Init};
use crate::tensor::{resize_bilinear, Tensor};

/// Resizes `theta` (`[C, h, w]`) into the box's projected rect on a zero
/// canvas of `canvas_hw`; `factor` is image pixels per canvas pixel.
pub fn transform_feature(
    theta: &Tensor,
    bx: &Box3D,
    k: &CameraIntrinsics,
    factor: usize,
    canvas_hw: (usize, usize),
) -> Tensor {
    let (ch, cw) = canvas_hw;
    let c = theta.dim(0);
    let mut out = Tensor::zeros(&[c, ch, cw]);
    let Ok(rect) = project_box_rect(bx, k) else {
        return out;
    };
    let (x0, y0, x1, y1) = rect.scaled(1.0 / factor as f64).pixel_bounds();
    let (x1, y1) = (x1.min(cw), y1.min(ch));
    if x1 <= x0 || y1 <= y0 {
        return out;
    }
    let (rw, rh) = (x1 - x0, y1 - y0);
    let r = resize_bilinear(theta, rh, rw);
    let od = out.data_mut();
    for ci in 0..c {
        for y in 0..rh {
            let src = &r.data()[(ci * rh + y) * rw..(ci * rh + y + 1) * rw];
            let dst = (ci * ch + y0 + y) * cw + x0;
            od[dst..dst + rw].copy_from_slice(src);
        }
    }
    out
}

/// Area-average downsampling of an `H x W` binary mask followed by a 0.5
/// threshold.
pub fn downsample_mask(mask: &[f64], h: usize, w: usize, factor: usize) -> Vec<f64> {
    let (oh, ow) = (h / factor, w / factor);
    let mut out = vec![0.0; oh * ow];
    let area = (factor * factor) as f64;
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for dy in 0..factor {
                for dx in 0..factor {
                    s += mask[(y * factor + dy) * w + x * factor + dx];
                }
            }
            out[y * ow + x] = if s / area >= 0.5 { 1.0 } else { 0.0 };
        }
    }
    out
}

/// Zero-initialised 1x1 convolution of one block.
#[derive(Debug, Clone)]
pub struct FusionGate {
    pub conv: Conv,
}

impl FusionGate {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv: Conv::new(store, name, channels, channels, &[1, 1], 1, Init::Zero, rng),
        }
    }

    /// `delta + mask * Z(aligned)`; `aligned` and `mask` are graph constants
    /// of the block's output shape.
    pub fn fuse(&self, g: &mut Graph, delta: Var, aligned: &Tensor, mask: &Tensor) -> Var {
        let a = g.constant(aligned.clone());
        let z = self.conv.forward(g, a);
        let m = g.constant(mask.clone());
        let gated = g.mul(m, z);
        g.add(delta, gated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::ParamStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 64.0,
            cy: 32.0,
            width: 128,
            height: 64,
        }
    }

    fn ramp(c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(&[c, h, w], (0..c * h * w).map(|v| v as f64 + 1.0).collect()).unwrap()
    }

    #[test]
    fn full_frame_rect_is_pure_resize() {
        // a box whose hull covers the entire image
        let bx = Box3D::from_center_size_yaw([0.0, 0.0, 5.0], [40.0, 1.0, 40.0], 0.0);
        let theta = ramp(2, 4, 4);
        let out = transform_feature(&theta, &bx, &k(), 4, (16, 32));
        assert_eq!(out, resize_bilinear(&theta, 16, 32));
    }

    #[test]
    fn left_half_rect_leaves_right_half_zero() {
        // hull lies within the left half of a 128 px image
        let bx = Box3D::from_center_size_yaw([-2.4, 0.0, 10.0], [2.0, 2.0, 2.0], 0.0);
        let out = transform_feature(&ramp(1, 3, 3), &bx, &k(), 4, (16, 32));
        for y in 0..16 {
            for x in 16..32 {
                assert_eq!(out.data()[y * 32 + x], 0.0);
            }
        }
        assert!(out.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn offscreen_box_gives_zero_canvas() {
        let bx = Box3D::from_center_size_yaw([0.0, 0.0, -5.0], [2.0, 2.0, 2.0], 0.0);
        let out = transform_feature(&ramp(2, 3, 3), &bx, &k(), 4, (16, 32));
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gate_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let gate = FusionGate::new(&mut store, "fz", 2, &mut rng);
        let delta_t = ramp(2, 2, 2).reshape(&[1, 2, 2, 2]).unwrap();
        let aligned = Tensor::full(&[1, 2, 2, 2], 3.0);
        let mut mask = Tensor::zeros(&[1, 2, 2, 2]);
        mask.data_mut()[0] = 1.0;
        mask.data_mut()[4] = 1.0;
        {
            let mut g = Graph::new(&store);
            let d = g.constant(delta_t.clone());
            let out = gate.fuse(&mut g, d, &aligned, &mask);
            assert_eq!(g.value(out), &delta_t);
            let d = g.constant(delta_t.clone());
            let out = gate.fuse(&mut g, d, &aligned, &Tensor::zeros(&[1, 2, 2, 2]));
            assert_eq!(g.value(out), &delta_t);
        }
        // identity gate: change confined to the mask
        let w = store.get_mut(gate.conv.w);
        w.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let mut g = Graph::new(&store);
        let d = g.constant(delta_t.clone());
        let out = gate.fuse(&mut g, d, &aligned, &mask);
        let diff = g.value(out).zip_map(&delta_t, |a, b| a - b);
        for (i, v) in diff.data().iter().enumerate() {
            assert_eq!(*v != 0.0, mask.data()[i] == 1.0);
        }
    }

    #[test]
    fn mask_downsampling_threshold() {
        let mut m = vec![0.0; 16];
        m[0] = 1.0;
        m[1] = 1.0;
        assert_eq!(downsample_mask(&m, 4, 4, 2), vec![1.0, 0.0, 0.0, 0.0]);
        m[1] = 0.0;
        assert_eq!(downsample_mask(&m, 4, 4, 2), vec![0.0; 4]);
    }
}
