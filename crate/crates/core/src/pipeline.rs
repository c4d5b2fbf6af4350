//! Assembly of denoiser conditioning from training clips and compiled
//! edits, and the end-to-end edit runner.

use crate::denoiser::{view_embedding, Conditioning, Model};
use crate::edit::{choose_paste_frame, paste_reference, CompiledEdit};
use crate::error::{Error, Result};
use crate::fusion::{downsample_mask, transform_feature};
use crate::geometry::{
    project_box_rect, render_pose_image_with, BoxTrajectory, CameraIntrinsics, PoseRenderOptions, ViewAngles,
};
use crate::image::flatten_rgba;
use crate::novel_view::{match_frame, mean_elevation};
use crate::scene::{frame_of, VideoClip, MASK_FILL};
use crate::tensor::{resize_bilinear, Tensor};

/// Everything the model consumes for one video, independent of the task.
#[derive(Debug, Clone)]
pub struct EditInput {
    /// Masked video with the reference pasted, `[N, 3, H, W]`.
    pub pasted: Tensor,
    /// Binary `[N, 1, H, W]`.
    pub mask: Tensor,
    /// Boxes rendered into pose images; `None` gives all-zero pose input.
    pub pose_boxes: Option<BoxTrajectory>,
    /// RGBA reference; `None` selects the null embedding.
    pub reference: Option<Tensor>,
    pub ref_view: ViewAngles,
    pub elevations: Vec<f64>,
    pub azimuths: Vec<f64>,
    pub intrinsics: CameraIntrinsics,
    pub paste_frame: usize,
}

impl EditInput {
    /// Reconstruction input for a training or validation clip.
    pub fn from_clip(clip: &VideoClip) -> Result<Self> {
        if clip.is_inpainting || clip.reference.is_none() {
            return Ok(Self {
                pasted: clip.masked.clone(),
                mask: clip.mask.clone(),
                pose_boxes: None,
                reference: None,
                ref_view: ViewAngles {
                    elevation: 0.0,
                    azimuth: 0.0,
                },
                elevations: clip.elevations.clone(),
                azimuths: clip.azimuths.clone(),
                intrinsics: clip.intrinsics,
                paste_frame: clip.ref_index,
            });
        }
        let boxes = clip.boxes.clone().expect("object clip has boxes");
        let reference = clip.reference.clone().expect("checked above");
        let view = clip.ref_view();
        let f = choose_paste_frame(&clip.azimuths, &view);
        let rect = project_box_rect(boxes.get(f), &clip.intrinsics)?;
        Ok(Self {
            pasted: paste_reference(&clip.masked, &reference, f, &rect),
            mask: clip.mask.clone(),
            pose_boxes: Some(boxes),
            reference: Some(reference),
            ref_view: view,
            elevations: clip.elevations.clone(),
            azimuths: clip.azimuths.clone(),
            intrinsics: clip.intrinsics,
            paste_frame: f,
        })
    }

    /// Input for a compiled edit. Deletions get no pose boxes.
    pub fn from_compiled(e: &CompiledEdit, intrinsics: CameraIntrinsics) -> Self {
        Self {
            pasted: e.pasted.clone(),
            mask: e.mask.clone(),
            pose_boxes: (!e.deletion).then(|| e.boxes.clone()),
            reference: e.reference.clone(),
            ref_view: e.ref_view.unwrap_or(ViewAngles {
                elevation: 0.0,
                azimuth: 0.0,
            }),
            elevations: e.elevations.clone(),
            azimuths: e.azimuths.clone(),
            intrinsics,
            paste_frame: e.paste_frame,
        }
    }

    pub fn frames(&self) -> usize {
        self.pasted.dim(0)
    }
}

/// `[N, 6, H, W]` pose images; frames whose box misses the image stay zero.
pub fn pose_images(
    boxes: Option<&BoxTrajectory>,
    n: usize,
    k: &CameraIntrinsics,
    opts: &PoseRenderOptions,
) -> Result<Tensor> {
    let (h, w) = (k.height, k.width);
    let mut out = Tensor::zeros(&[n, 6, h, w]);
    let Some(boxes) = boxes else {
        return Ok(out);
    };
    let plane = 6 * h * w;
    for (i, b) in boxes.iter().enumerate().take(n) {
        match render_pose_image_with(b, k, opts) {
            Ok(img) => out.data_mut()[i * plane..(i + 1) * plane].copy_from_slice(&img.data),
            Err(Error::EmptyProjection) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn flat_reference(rgba: &Tensor) -> Tensor {
    flatten_rgba(rgba, MASK_FILL)
}

/// Per-block aligned novel-view features and masks for one input:
/// `(aligned, mask)` each `[N, C_k, h_k, w_k]`.
fn fusion_inputs(model: &Model, x: &EditInput) -> Result<Vec<(Tensor, Tensor)>> {
    let cfg = &model.cfg;
    let n = x.frames();
    let blocks = cfg.num_blocks();
    let shapes: Vec<_> = (0..blocks).map(|k| cfg.block_shape(k)).collect();
    let mut out: Vec<(Tensor, Tensor)> = shapes
        .iter()
        .map(|&(c, h, w)| (Tensor::zeros(&[n, c, h, w]), Tensor::zeros(&[n, c, h, w])))
        .collect();
    let (Some(rgba), Some(boxes)) = (&x.reference, &x.pose_boxes) else {
        return Ok(out);
    };
    let set = &cfg.azimuths;
    let matched: Vec<usize> = x
        .azimuths
        .iter()
        .map(|a| match_frame((a - x.ref_view.azimuth).to_degrees(), set))
        .collect();
    let mut unique = matched.clone();
    unique.sort_unstable();
    unique.dedup();
    let angles: Vec<f64> = unique.iter().map(|&j| set.angles()[j]).collect();
    let views = model
        .prior
        .generate_views(&flat_reference(rgba), &angles, mean_elevation(&x.elevations));
    let (hh, ww) = (cfg.height, cfg.width);
    for i in 0..n {
        let v = &views[unique.binary_search(&matched[i]).expect("present")];
        let m = &x.mask.data()[i * hh * ww..(i + 1) * hh * ww];
        for (k, &(c, h, w)) in shapes.iter().enumerate() {
            let factor = cfg.block_factor(k);
            let aligned = transform_feature(&v[k], boxes.get(i), &x.intrinsics, factor, (h, w));
            let dm = downsample_mask(m, hh, ww, factor);
            let plane = c * h * w;
            out[k].0.data_mut()[i * plane..(i + 1) * plane].copy_from_slice(aligned.data());
            let md = &mut out[k].1.data_mut()[i * plane..(i + 1) * plane];
            for ch in 0..c {
                md[ch * h * w..(ch + 1) * h * w].copy_from_slice(&dm);
            }
        }
    }
    Ok(out)
}

/// Batches inputs into denoiser conditioning. Fusion features are built
/// only when `with_fusion` is set and some input carries a reference.
pub fn build_conditioning(model: &Model, inputs: &[EditInput], with_fusion: bool) -> Result<Conditioning> {
    let cfg = &model.cfg;
    let b = inputs.len();
    if b == 0 {
        return Err(Error::BadShape("empty batch".into()));
    }
    let n = cfg.frames;
    for x in inputs {
        let want = [n, 3, cfg.height, cfg.width];
        if x.pasted.shape() != want {
            return Err(Error::ShapeMismatch {
                what: "video".into(),
                expected: want.to_vec(),
                got: x.pasted.shape().to_vec(),
            });
        }
    }
    let (h, w) = cfg.latent_hw();
    let lc = cfg.latent_channels();
    let opts = PoseRenderOptions {
        grid: cfg.pose_grid,
        max_depth: cfg.max_depth,
        mode: cfg.projection,
    };
    let mut c_concat = Vec::with_capacity(b * n * (lc + 1) * h * w);
    let mut mask_latent = Vec::with_capacity(b * n * h * w);
    let mut pose = Vec::with_capacity(b * n * 6 * cfg.height * cfg.width);
    let mut tokens_bg = Vec::with_capacity(b);
    let mut tokens_ref = Vec::with_capacity(b);
    let mut view_emb = Vec::with_capacity(b);
    for x in inputs {
        let z = model.video_to_latent(&x.pasted)?;
        let hw = cfg.height * cfg.width;
        for i in 0..n {
            c_concat.extend_from_slice(&z.data()[i * lc * h * w..(i + 1) * lc * h * w]);
            let m = downsample_mask(&x.mask.data()[i * hw..(i + 1) * hw], cfg.height, cfg.width, cfg.patch);
            c_concat.extend_from_slice(&m);
            mask_latent.extend(m);
        }
        pose.extend(pose_images(x.pose_boxes.as_ref(), n, &x.intrinsics, &opts)?.into_data());
        tokens_bg.push(model.tokenizer.background(&frame_of(&x.pasted, x.paste_frame)));
        tokens_ref.push(x.reference.as_ref().map(|r| {
            let img = resize_bilinear(&flat_reference(r), cfg.ref_size, cfg.ref_size);
            model.tokenizer.reference(&img)
        }));
        view_emb.push(view_embedding(x.ref_view.elevation, x.ref_view.azimuth));
    }
    let fusion = if with_fusion && inputs.iter().any(|x| x.reference.is_some()) {
        let per: Vec<Vec<(Tensor, Tensor)>> = inputs.iter().map(|x| fusion_inputs(model, x)).collect::<Result<_>>()?;
        let mut blocks = Vec::with_capacity(cfg.num_blocks());
        for k in 0..cfg.num_blocks() {
            let a: Vec<&Tensor> = per.iter().map(|p| &p[k].0).collect();
            let m: Vec<&Tensor> = per.iter().map(|p| &p[k].1).collect();
            blocks.push((Tensor::concat(&a, 0)?, Tensor::concat(&m, 0)?));
        }
        Some(blocks)
    } else {
        None
    };
    Ok(Conditioning {
        batch: b,
        frames: n,
        c_concat: Tensor::from_vec(&[b * n, lc + 1, h, w], c_concat)?,
        mask_latent: Tensor::from_vec(&[b * n, 1, h, w], mask_latent)?,
        tokens_bg,
        tokens_ref,
        view_emb,
        pose: Tensor::from_vec(&[b * n, 6, cfg.height, cfg.width], pose)?,
        fusion,
    })
}

/// `base (1 - M) + generated M`.
pub fn composite(base: &Tensor, generated: &Tensor, mask: &Tensor) -> Tensor {
    let (n, c, h, w) = (base.dim(0), base.dim(1), base.dim(2), base.dim(3));
    let mut out = base.clone();
    let (gd, md) = (generated.data(), mask.data());
    let od = out.data_mut();
    for f in 0..n {
        for ch in 0..c {
            for i in 0..h * w {
                let m = md[f * h * w + i];
                let o = (f * c + ch) * h * w + i;
                od[o] = od[o] * (1.0 - m) + gd[o] * m;
            }
        }
    }
    out
}

/// Samples the masked region of every input and composites it back into
/// the unmasked context. Returns one `[N, 3, H, W]` video per input.
pub fn generate(model: &Model, inputs: &[EditInput], steps: usize, seed: u64) -> Result<Vec<Tensor>> {
    let cond = build_conditioning(model, inputs, model.cfg.fusion)?;
    let z = model.sample_latent(&cond, steps, seed)?;
    let video = model.latent_to_video(&z)?;
    let n = model.cfg.frames;
    let per = video.numel() / inputs.len();
    inputs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let g = Tensor::from_vec(x.pasted.shape(), video.data()[i * per..(i + 1) * per].to_vec())?;
            debug_assert_eq!(g.dim(0), n);
            Ok(composite(&x.pasted, &g, &x.mask))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::ModelConfig;
    use crate::edit::{compile, EditSpec, Reference, ReferenceSpec, Task};
    use crate::geometry::CameraPose;
    use crate::scene::{materialize_clip, render_scene, Category, ClipRecord, GroundPose, SceneSpec, Split};

    fn setup() -> (Model, VideoClip) {
        let cfg = ModelConfig::tiny();
        let k = CameraIntrinsics::centered(cfg.width, cfg.height, 0.5);
        let poses: Vec<CameraPose> = (0..2).map(|i| CameraPose::level([i as f64 * 0.5, 0.0, 1.5], 0.0)).collect();
        let traj: Vec<GroundPose> = (0..2).map(|i| GroundPose { x: 9.0 + i as f64 * 0.4, y: -2.0, heading: 0.2 }).collect();
        let s = SceneSpec::new("s", 0, k, poses, vec![(Category::Car, [4.5, 1.9, 1.6], [0.8, 0.1, 0.1], traj)]).unwrap();
        let r = render_scene(&s);
        let rec = ClipRecord {
            clip_id: "c".into(),
            scene_id: "s".into(),
            object_id: Some(0),
            start: 0,
            len: 2,
            ref_index: 1,
            split: Split::Train,
            inpaint_rect: None,
        };
        (Model::new(cfg, 0).unwrap(), materialize_clip(&s, &r, &rec, None).unwrap())
    }

    #[test]
    fn clip_conditioning_shapes() {
        let (m, clip) = setup();
        let x = EditInput::from_clip(&clip).unwrap();
        let c = build_conditioning(&m, &[x.clone(), x], true).unwrap();
        c.validate(&m.cfg).unwrap();
        assert!(c.fusion.is_some());
        assert!(c.pose.data().iter().any(|&v| v > 0.0));
        assert!(c.mask_latent.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(c.mask_latent.data().contains(&1.0));
        let lc = m.cfg.latent_channels();
        let (h, w) = m.cfg.latent_hw();
        let last = &c.c_concat.data()[lc * h * w..(lc + 1) * h * w];
        assert_eq!(last, &c.mask_latent.data()[..h * w]);
    }

    #[test]
    fn deletion_gets_null_tokens_and_zero_pose() {
        let (m, clip) = setup();
        let spec = EditSpec {
            task: Task::Delete,
            scene_id: "s".into(),
            object_id: Some(0),
            reference: None,
            target_boxes: None,
            preset: None,
            start: 0,
        };
        let e = compile(&spec, &clip, None).unwrap();
        let c = build_conditioning(&m, &[EditInput::from_compiled(&e, clip.intrinsics)], true).unwrap();
        assert!(c.tokens_ref[0].is_none());
        assert!(c.pose.data().iter().all(|&v| v == 0.0));
        assert!(c.fusion.is_none());
    }

    #[test]
    fn fusion_mask_matches_edit_mask() {
        let (m, clip) = setup();
        let spec = EditSpec {
            task: Task::Replace,
            scene_id: "s".into(),
            object_id: Some(0),
            reference: Some(ReferenceSpec { bank_id: Some("x".into()), image_path: None }),
            target_boxes: None,
            preset: None,
            start: 0,
        };
        let r = Reference::from_rgb(&Tensor::full(&[3, 6, 8], 0.7));
        let e = compile(&spec, &clip, Some(&r)).unwrap();
        let x = EditInput::from_compiled(&e, clip.intrinsics);
        let c = build_conditioning(&m, std::slice::from_ref(&x), true).unwrap();
        let fu = c.fusion.unwrap();
        for k in 0..m.cfg.num_blocks() {
            let f = m.cfg.block_factor(k);
            let (ch, h, w) = m.cfg.block_shape(k);
            let want = downsample_mask(&x.mask.data()[..m.cfg.height * m.cfg.width], m.cfg.height, m.cfg.width, f);
            assert_eq!(&fu[k].1.data()[..h * w], want.as_slice());
            assert_eq!(&fu[k].1.data()[(ch - 1) * h * w..ch * h * w], want.as_slice());
        }
    }

    #[test]
    fn composite_keeps_context() {
        let base = Tensor::full(&[1, 3, 2, 2], 0.2);
        let gen = Tensor::full(&[1, 3, 2, 2], 0.9);
        let mut mask = Tensor::zeros(&[1, 1, 2, 2]);
        mask.data_mut()[3] = 1.0;
        let out = composite(&base, &gen, &mask);
        for ch in 0..3 {
            assert_eq!(&out.data()[ch * 4..ch * 4 + 4], &[0.2, 0.2, 0.2, 0.9]);
        }
    }

    #[test]
    fn generate_is_deterministic() {
        let (m, clip) = setup();
        let x = EditInput::from_clip(&clip).unwrap();
        let a = generate(&m, std::slice::from_ref(&x), 2, 5).unwrap();
        let b = generate(&m, std::slice::from_ref(&x), 2, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].shape(), x.pasted.shape());
    }
}
