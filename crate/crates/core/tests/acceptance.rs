//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `BOXEDIT_ACCEPTANCE=projection,codec,...` runs a subset. Names:
//! projection, neutrality, codec, gradient, smoke, ablation, azimuth,
//! compiler, metrics.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use boxedit::autograd::Graph;
use boxedit::codec::LatentCodec;
use boxedit::denoiser::{randomize_params, Model, ModelConfig};
use boxedit::edit::{compile, EditSpec, Preset, Reference, ReferenceSpec, Task};
use boxedit::eval::{evaluate, EvalOptions};
use boxedit::geometry::{
    mask_from_rects, project_box_rect, render_pose_image_with, Box3D, BoxTrajectory, CameraIntrinsics, Face,
    PoseRenderOptions, ProjectionMode, DEFAULT_MASK_DILATION,
};
use boxedit::metrics::{match_and_score, psnr, Detection, MatchScore};
use boxedit::novel_view::{match_frame, AzimuthSet};
use boxedit::pipeline::{build_conditioning, generate, pose_images, EditInput};
use boxedit::scene::{
    build_object_bank, generate_dataset, masks_to_tensor, Category, ClipRules, Dataset, DatasetConfig,
    ObjectBankEntry, SceneGenConfig, Split, VideoClip,
};
use boxedit::tensor::Tensor;
use boxedit::train::{batch_loss, TrainConfig, Trainer};

type Outcome = Result<(bool, String), String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal_tensor(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| StandardNormal.sample(r)).collect()).unwrap()
}

// ---------------------------------------------------------------------------
// shared data and training runs

struct Data {
    scenes: BTreeMap<String, boxedit::scene::SceneSpec>,
    train: Vec<VideoClip>,
    val: Vec<VideoClip>,
    bank: Vec<ObjectBankEntry>,
}

fn data() -> &'static Data {
    static DATA: OnceLock<Data> = OnceLock::new();
    DATA.get_or_init(|| {
        let cfg = DatasetConfig {
            scene: SceneGenConfig {
                height: 32,
                width: 64,
                num_frames: 8,
                ..SceneGenConfig::default()
            },
            rules: ClipRules {
                clip_len: 4,
                ..ClipRules::default()
            },
            train_clips: 28,
            inpaint_clips: 4,
            val_clips: 32,
            max_scenes: 2000,
        };
        let (scenes, clips) = generate_dataset(&cfg, 2024).expect("dataset");
        let ds = Dataset {
            root: Default::default(),
            scenes: scenes.into_iter().map(|s| (s.id.clone(), s)).collect(),
            clips,
        };
        let mut train = ds.load_clips(Split::Train).unwrap();
        let bank = build_object_bank(&train);
        train.extend(ds.load_clips(Split::Inpaint).unwrap());
        let val = ds.load_clips(Split::Val).unwrap();
        Data {
            scenes: ds.scenes,
            train,
            val,
            bank,
        }
    })
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum Arm {
    None,
    Edges,
    Full,
}

impl Arm {
    fn config(self) -> TrainConfig {
        let mut c = TrainConfig::desk();
        c.seed = 7;
        c.log_every = 500;
        let m = &mut c.model;
        match self {
            Arm::None => {
                m.controller = false;
                m.fusion = false;
            }
            Arm::Edges => {
                m.controller = true;
                m.projection = ProjectionMode::Edges;
                m.fusion = false;
            }
            Arm::Full => {
                m.controller = true;
                m.projection = ProjectionMode::Depth;
                m.fusion = true;
            }
        }
        c
    }
}

struct Trained {
    model: Model,
    elapsed: Duration,
    /// Max |D(fusion on) - D(fusion off)| per batch at the start of stage 2.
    handoff_diffs: Vec<f64>,
}

fn fusion_toggle_diff(t: &Trainer) -> f64 {
    let (inputs, videos, sigma, noise) = t.batch().unwrap();
    let m = &t.model;
    let z0: Vec<Tensor> = videos.iter().map(|v| m.video_to_latent(v).unwrap()).collect();
    let mut z = Tensor::concat(&z0.iter().collect::<Vec<_>>(), 0).unwrap();
    let per = z.numel() / inputs.len();
    for (i, (zv, e)) in z.data_mut().iter_mut().zip(noise.data()).enumerate() {
        *zv += sigma[i / per] * e;
    }
    let run = |fusion: bool| {
        let cond = build_conditioning(m, &inputs, fusion).unwrap();
        assert_eq!(cond.fusion.is_some(), fusion);
        let mut g = Graph::new(&m.params);
        let d = m.denoise(&mut g, &cond, &z, &sigma).unwrap();
        g.value(d).clone()
    };
    run(true).max_abs_diff(&run(false))
}

fn train_arm(arm: Arm) -> Trained {
    let d = data();
    let cfg = arm.config();
    let start = Instant::now();
    let mut t = Trainer::new(cfg.clone(), d.train.clone()).unwrap();
    while t.step < cfg.stage1_steps {
        t.train_step().unwrap();
    }
    let mut handoff_diffs = Vec::new();
    if arm == Arm::Full {
        let mut probe = t.clone();
        for i in 0..5 {
            probe.step = cfg.stage1_steps + 97 * i;
            handoff_diffs.push(fusion_toggle_diff(&probe));
        }
    }
    t.run().unwrap();
    eprintln!("trained arm {arm:?} in {:.0?}", start.elapsed());
    Trained {
        model: t.model,
        elapsed: start.elapsed(),
        handoff_diffs,
    }
}

fn trained(arm: Arm) -> &'static Trained {
    static RUNS: OnceLock<std::sync::Mutex<HashMap<Arm, &'static Trained>>> = OnceLock::new();
    let runs = RUNS.get_or_init(Default::default);
    if let Some(t) = runs.lock().unwrap().get(&arm) {
        return t;
    }
    let t: &'static Trained = Box::leak(Box::new(train_arm(arm)));
    runs.lock().unwrap().insert(arm, t);
    t
}

// ---------------------------------------------------------------------------
// 1. pose image against a per-point oracle

fn lerp(a: &Vector3<f64>, b: &Vector3<f64>, t: f64) -> Vector3<f64> {
    a + (b - a) * t
}

/// Independent per-point reference renderer: every face sample is projected
/// on its own and the nearest depth is kept per pixel and channel.
fn oracle_pose_image(bx: &Box3D, k: &CameraIntrinsics, opts: &PoseRenderOptions) -> HashMap<(usize, usize, usize), f64> {
    let mut best: HashMap<(usize, usize, usize), f64> = HashMap::new();
    let g = opts.grid;
    for (c, face) in Face::ALL.iter().enumerate() {
        let q = bx.face(*face);
        let mut pts = Vec::new();
        if opts.mode == ProjectionMode::Depth {
            for j in 0..g {
                let t = j as f64 / (g - 1) as f64;
                let left = lerp(&q[0], &q[3], t);
                let right = lerp(&q[1], &q[2], t);
                for i in 0..g {
                    pts.push(lerp(&left, &right, i as f64 / (g - 1) as f64));
                }
            }
        }
        let n = 4 * g;
        for e in 0..4 {
            for s in 0..n {
                pts.push(lerp(&q[e], &q[(e + 1) % 4], s as f64 / (n - 1) as f64));
            }
        }
        for p in pts {
            if p.z <= 1e-6 {
                continue;
            }
            let u = k.fx * p.x / p.z + k.cx;
            let v = k.fy * p.y / p.z + k.cy;
            if !(u >= 0.0 && v >= 0.0 && u < k.width as f64 && v < k.height as f64) {
                continue;
            }
            let val = match opts.mode {
                ProjectionMode::Depth => p.z.min(opts.max_depth) / opts.max_depth,
                ProjectionMode::Edges => 1.0,
            };
            let key = (c, v.floor() as usize, u.floor() as usize);
            let e = best.entry(key).or_insert(f64::INFINITY);
            *e = e.min(val);
        }
    }
    best
}

fn random_box(r: &mut ChaCha8Rng) -> Box3D {
    let straddle = r.random_bool(0.2);
    let z = if straddle { r.random_range(-3.0..4.0) } else { r.random_range(3.0..45.0) };
    Box3D::from_center_size_yaw(
        [r.random_range(-10.0..10.0), r.random_range(-1.0..2.5), z],
        [r.random_range(0.4..12.0), r.random_range(0.4..3.0), r.random_range(0.5..4.0)],
        r.random_range(-PI..PI),
    )
}

fn projection_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let cams = [CameraIntrinsics::centered(64, 32, 0.5), CameraIntrinsics::centered(128, 64, 0.5)];
    let (mut mismatched, mut max_depth_err, mut empties) = (0usize, 0.0f64, 0usize);
    for i in 0..50 {
        let bx = random_box(&mut r);
        let k = &cams[i % 2];
        let opts = PoseRenderOptions {
            grid: [8, 24, 48][i % 3],
            max_depth: 60.0,
            mode: if i % 4 == 3 { ProjectionMode::Edges } else { ProjectionMode::Depth },
        };
        let want = oracle_pose_image(&bx, k, &opts);
        match render_pose_image_with(&bx, k, &opts) {
            Ok(img) => {
                for c in 0..6 {
                    for y in 0..k.height {
                        for x in 0..k.width {
                            let got = img.at(c, y, x);
                            match want.get(&(c, y, x)) {
                                Some(w) => {
                                    if got == 0.0 {
                                        mismatched += 1;
                                    }
                                    max_depth_err = max_depth_err.max((got - w).abs());
                                }
                                None if got != 0.0 => mismatched += 1,
                                None => {}
                            }
                        }
                    }
                }
            }
            Err(_) => {
                empties += 1;
                if !want.is_empty() {
                    mismatched += want.len();
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = mismatched == 0 && max_depth_err <= 1e-12 && secs < 60.0;
    Ok((
        pass,
        format!("50 boxes ({empties} fully off-image): {mismatched} pixel mismatches, max depth diff {max_depth_err:.1e}, {secs:.1}s"),
    ))
}

// ---------------------------------------------------------------------------
// 2. zero-initialised fusion at the start of stage 2

fn zero_init_neutrality() -> Outcome {
    let t = trained(Arm::Full);
    let worst = t.handoff_diffs.iter().copied().fold(0.0, f64::max);
    Ok((
        t.handoff_diffs.len() == 5 && worst <= 1e-6,
        format!("5 batches after 2000 stage-1 steps: max |fusion on - off| = {worst:.1e}"),
    ))
}

// ---------------------------------------------------------------------------
// 3. latent codec

fn codec_round_trip() -> Outcome {
    let mut r = rng(3);
    let (mut max_rt, mut max_norm) = (0.0f64, 0.0f64);
    for i in 0..20 {
        let patch = [2, 4][i % 2];
        let codec = LatentCodec::new(patch, 100 + i as u64);
        let shape = [r.random_range(1..5), 3, 8 * r.random_range(1..5), 8 * r.random_range(1..9)];
        let x = normal_tensor(&shape, &mut r).map(|v| 0.5 + 0.25 * v);
        let z = codec.encode(&x).map_err(|e| e.to_string())?;
        let back = codec.decode(&z).map_err(|e| e.to_string())?;
        max_rt = max_rt.max(back.max_abs_diff(&x));
        max_norm = max_norm.max((z.norm() - x.norm()).abs());
    }
    Ok((
        max_rt <= 1e-5 && max_norm <= 1e-5,
        format!("20 videos: max round-trip error {max_rt:.1e}, max norm change {max_norm:.1e}"),
    ))
}

// ---------------------------------------------------------------------------
// 4. gradient check

fn group_of(name: &str) -> &'static str {
    if name == "null_emb" {
        "null_embedding"
    } else if name.contains(".ad2.conv") || name.contains(".ad3.conv") || name.contains(".fz.") {
        "zero_conv"
    } else if name.contains(".ad2.") || name.contains(".ad3.") || name.starts_with("pc.") {
        "adapter"
    } else {
        "denoiser"
    }
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let d = data();
    let mut cfg = ModelConfig::tiny();
    cfg.controller = true;
    cfg.fusion = true;
    let mut model = Model::new(cfg.clone(), 11).unwrap();
    randomize_params(&mut model.params, 12, 0.2);

    let clip_of = |c: &VideoClip| {
        let mut c = c.clone();
        c.video = c.video.slice_axis(0, 0, cfg.frames);
        c.masked = c.masked.slice_axis(0, 0, cfg.frames);
        c.mask = c.mask.slice_axis(0, 0, cfg.frames);
        c.boxes = c.boxes.map(|b| BoxTrajectory::new(b.boxes()[..cfg.frames].to_vec()));
        c.elevations.truncate(cfg.frames);
        c.azimuths.truncate(cfg.frames);
        c.ref_index = 0;
        c
    };
    let a = clip_of(&d.val[0]);
    let b = clip_of(&d.val[1]);
    let mut inputs = vec![EditInput::from_clip(&a).unwrap(), EditInput::from_clip(&b).unwrap()];
    inputs[1].reference = None;
    let videos = [&a.video, &b.video];
    let sigma = [0.6, 1.7];
    let (h, w) = cfg.latent_hw();
    let mut r = rng(13);
    let noise = normal_tensor(&[2 * cfg.frames, cfg.latent_channels(), h, w], &mut r);
    let loss = |m: &Model| batch_loss(m, &inputs, &videos, &sigma, &noise, true, 5.0).unwrap();

    let (_, grads) = loss(&model);
    let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (id, e) in model.params.iter() {
        by_group.entry(group_of(&e.name)).or_default().push(id);
    }
    // entries at roundoff level are not sampled
    let floor = 1e-6
        * model
            .params
            .iter()
            .filter_map(|(id, _)| grads.get(id))
            .flat_map(|g| g.data().iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
    let quota = [("denoiser", 20), ("adapter", 12), ("zero_conv", 12), ("null_embedding", 6)];
    let mut worst = 0.0f64;
    let mut checked = BTreeMap::new();
    let hstep = 1e-5;
    for (group, n) in quota {
        let ids = by_group.get(group).ok_or(format!("no parameters in group {group}"))?;
        let mut done = 0;
        let mut attempts = 0;
        while done < n {
            attempts += 1;
            if attempts > 50 * n {
                return Err(format!("could not find {n} non-vanishing gradients in {group}"));
            }
            let id = ids[r.random_range(0..ids.len())];
            let gt = grads.get(id).ok_or(format!("no gradient for {}", model.params.name(id)))?;
            let scale = gt.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let i = r.random_range(0..gt.numel());
            let an = gt.data()[i];
            if an.abs() < floor.max(1e-3 * scale) {
                continue;
            }
            let orig = model.params.get(id).data()[i];
            model.params.get_mut(id).data_mut()[i] = orig + hstep;
            let (lp, _) = loss(&model);
            model.params.get_mut(id).data_mut()[i] = orig - hstep;
            let (lm, _) = loss(&model);
            model.params.get_mut(id).data_mut()[i] = orig;
            let num = (lp - lm) / (2.0 * hstep);
            let rel = (an - num).abs() / an.abs().max(num.abs());
            worst = worst.max(rel);
            done += 1;
        }
        checked.insert(group, done);
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst < 1e-3 && secs < 300.0,
        format!("{checked:?}: max relative error {worst:.1e}, {secs:.1}s"),
    ))
}

// ---------------------------------------------------------------------------
// 5. training smoke

fn masked_psnr(model: &Model, clips: &[VideoClip]) -> f64 {
    let inputs: Vec<EditInput> = clips.iter().map(|c| EditInput::from_clip(c).unwrap()).collect();
    let mut vals = Vec::new();
    for (b, chunk) in inputs.chunks(4).enumerate() {
        let out = generate(model, chunk, model.cfg.sample_steps, 40 + b as u64).unwrap();
        for (v, c) in out.iter().zip(&clips[4 * b..]) {
            vals.push(psnr(v, &c.video, Some(&c.mask)).unwrap());
        }
    }
    vals.iter().sum::<f64>() / vals.len() as f64
}

fn training_smoke() -> Outcome {
    let d = data();
    let t = trained(Arm::Full);
    let start = Instant::now();
    let untrained = Model::new(Arm::Full.config().model, Arm::Full.config().seed).unwrap();
    let before = masked_psnr(&untrained, &d.val);
    let after = masked_psnr(&t.model, &d.val);
    let total = t.elapsed + start.elapsed();
    let gain = after - before;
    Ok((
        gain >= 3.0 && total.as_secs() <= 1800,
        format!(
            "{} train clips, {} held-out: masked PSNR {before:.2} -> {after:.2} dB ({gain:+.2} dB), {:.1} min",
            d.train.len(),
            d.val.len(),
            total.as_secs_f64() / 60.0
        ),
    ))
}

// ---------------------------------------------------------------------------
// 6. ablation ordering

fn ablation() -> Outcome {
    let d = data();
    let opts = EvalOptions {
        tasks: vec![Task::Reposition],
        steps: Arm::Full.config().model.sample_steps,
        seed: 5,
        max_clips: None,
        batch: 4,
    };
    let mut rows = Vec::new();
    for arm in [Arm::None, Arm::Edges, Arm::Full] {
        let rep = evaluate(&trained(arm).model, &d.val, &d.scenes, &d.bank, &opts).map_err(|e| e.to_string())?;
        let s = rep.tasks["reposition"].clone();
        rows.push((arm, s));
    }
    let key = |v: Option<f64>| v.unwrap_or(f64::INFINITY);
    let ordered = |f: &dyn Fn(&boxedit::eval::TaskScore) -> f64| f(&rows[2].1) < f(&rows[1].1) && f(&rows[1].1) < f(&rows[0].1);
    let pass = ordered(&|s| key(s.m_aoe)) && ordered(&|s| key(s.m_ate));
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
    let detail = rows
        .iter()
        .map(|(a, s)| format!("{a:?}: mAOE {} mATE {} recall {:.2}", fmt(s.m_aoe), fmt(s.m_ate), s.m_recall))
        .collect::<Vec<_>>()
        .join("; ");
    Ok((pass, format!("{} edits each; {detail}", rows[0].1.edits)))
}

// ---------------------------------------------------------------------------
// 7. azimuth matcher

fn azimuth_matcher() -> Outcome {
    let set = AzimuthSet::default();
    let dist = |a: f64, b: f64| {
        let d = ((a - b) % 360.0 + 360.0) % 360.0;
        if d > 180.0 {
            360.0 - d
        } else {
            d
        }
    };
    let mut r = rng(7);
    let mut wrong = 0;
    for _ in 0..10_000 {
        let a = r.random_range(-720.0..720.0);
        let got = match_frame(a, &set);
        let best = set.angles().iter().map(|&s| dist(a, s)).fold(f64::INFINITY, f64::min);
        if dist(a, set.angles()[got]) != best {
            wrong += 1;
        }
    }
    let errs: Vec<f64> = (0..10_000)
        .map(|_| {
            let a: f64 = r.random_range(-15.0..15.0);
            dist(a, set.angles()[match_frame(a, &set)])
        })
        .collect();
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    Ok((
        wrong == 0 && mean <= 2.0,
        format!("{wrong}/10000 not nearest; mean error on [-15, 15] deg = {mean:.3} deg"),
    ))
}

// ---------------------------------------------------------------------------
// 8. edit compiler conformance

fn rect_mask(boxes: &[&BoxTrajectory], clip: &VideoClip) -> Tensor {
    let k = &clip.intrinsics;
    let masks: Vec<_> = (0..clip.len())
        .map(|f| {
            let rects: Vec<_> = boxes.iter().filter_map(|b| project_box_rect(b.get(f), k).ok()).collect();
            mask_from_rects(&rects, k.height, k.width, DEFAULT_MASK_DILATION)
        })
        .collect();
    masks_to_tensor(&masks)
}

fn random_target(b: &BoxTrajectory, r: &mut ChaCha8Rng) -> BoxTrajectory {
    let (dx, dz, dyaw) = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-0.3..0.3));
    b.map(|_, bx| bx.translated(&Vector3::new(dx, 0.0, dz)).rotated_about_up(dyaw))
}

fn compiler_conformance() -> Outcome {
    let d = data();
    let model = Model::new(ModelConfig::desk(), 0).unwrap();
    let null = model.params.get(model.null_embedding()).clone();
    let mut r = rng(8);
    let mut failures: Vec<String> = Vec::new();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut check = |ok: bool, what: String| {
        if !ok {
            failures.push(what);
        }
    };
    for task in Task::ALL {
        let mut done = 0;
        let mut attempts = 0;
        while done < 20 && attempts < 200 {
            attempts += 1;
            let clip = &d.val[r.random_range(0..d.val.len())];
            let src = clip.boxes.clone().unwrap();
            let bank = &d.bank[r.random_range(0..d.bank.len())];
            let reference = Reference::from_bank(bank).unwrap();
            let bank_ref = Some(ReferenceSpec {
                bank_id: Some(bank.id.clone()),
                image_path: None,
            });
            let use_preset = r.random_bool(0.5);
            let preset = Preset::ALL[r.random_range(0..Preset::ALL.len())];
            let target = if use_preset { preset.apply(&src) } else { random_target(&src, &mut r) };
            let base = EditSpec {
                task,
                scene_id: clip.scene_id.clone(),
                object_id: clip.object_id,
                reference: None,
                target_boxes: None,
                preset: None,
                start: clip.start,
            };
            let spec = match task {
                Task::Delete => base,
                Task::Replace => EditSpec { reference: bank_ref, ..base },
                Task::Reposition if use_preset => EditSpec { preset: Some(preset), ..base },
                Task::Reposition => EditSpec { target_boxes: Some(target.clone()), ..base },
                Task::Insert => EditSpec {
                    object_id: None,
                    reference: bank_ref,
                    target_boxes: Some(target.clone()),
                    ..base
                },
            };
            let needs_ref = matches!(task, Task::Insert | Task::Replace);
            let e = match compile(&spec, clip, needs_ref.then_some(&reference)) {
                Ok(e) => e,
                Err(boxedit::Error::EmptyProjection) => continue,
                Err(e) => return Err(format!("{task:?}: {e}")),
            };
            let tag = |s: &str| format!("{} #{done}: {s}", task.as_str());
            let input = EditInput::from_compiled(&e, clip.intrinsics);
            let cond = build_conditioning(&model, std::slice::from_ref(&input), false).unwrap();
            let tokens = model.token_values(&cond, 0);
            let dtok = tokens.dim(1);
            let ref_rows = &tokens.data()[model.cfg.bg_tokens() * dtok..];
            let is_null = ref_rows.chunks(dtok).all(|row| row == null.data());
            let pose_zero = cond.pose.data().iter().all(|&v| v == 0.0);
            let delete_mask = rect_mask(&[&src], clip);
            match task {
                Task::Delete => {
                    check(e.deletion && e.reference.is_none(), tag("not flagged as deletion"));
                    check(is_null, tag("reference tokens are not the null embedding"));
                    check(pose_zero, tag("pose image is not zero"));
                    check(e.mask == delete_mask, tag("mask differs from the source-box mask"));
                    check(e.pasted == e.masked, tag("something was pasted"));
                }
                Task::Replace => {
                    check(e.mask == delete_mask, tag("mask differs from the deletion mask"));
                    check(!is_null && cond.tokens_ref[0].is_some(), tag("reference tokens missing"));
                    check(e.boxes == src, tag("boxes are not the source boxes"));
                    let want = pose_images(Some(&src), clip.len(), &clip.intrinsics, &pose_opts(&model)).unwrap();
                    check(cond.pose == want, tag("pose image is not the source-box pose"));
                }
                Task::Reposition => {
                    let want_mask = rect_mask(&[&src, &target], clip);
                    let union = delete_mask.zip_map(&rect_mask(&[&target], clip), f64::max);
                    check(e.mask == want_mask && e.mask == union, tag("mask is not the source/target union"));
                    check(e.boxes == target, tag("boxes are not the target boxes"));
                    check(!is_null, tag("reference tokens missing"));
                    let want = pose_images(Some(&target), clip.len(), &clip.intrinsics, &pose_opts(&model)).unwrap();
                    check(cond.pose == want, tag("pose image is not the target-box pose"));
                }
                Task::Insert => {
                    check(e.mask == rect_mask(&[&target], clip), tag("mask is not the target mask"));
                    check(e.source_boxes.is_none(), tag("insert carries source boxes"));
                    check(!is_null, tag("reference tokens missing"));
                    let want = pose_images(Some(&target), clip.len(), &clip.intrinsics, &pose_opts(&model)).unwrap();
                    check(cond.pose == want, tag("pose image is not the target-box pose"));
                }
            }
            done += 1;
        }
        counts.insert(task.as_str(), done);
    }
    let all = counts.values().all(|&n| n == 20);
    Ok((
        all && failures.is_empty(),
        if failures.is_empty() {
            format!("specs per task {counts:?}, all structural checks hold")
        } else {
            format!("{} violations, first: {}", failures.len(), failures[0])
        },
    ))
}

fn pose_opts(model: &Model) -> PoseRenderOptions {
    PoseRenderOptions {
        grid: model.cfg.pose_grid,
        max_depth: model.cfg.max_depth,
        mode: model.cfg.projection,
    }
}

// ---------------------------------------------------------------------------
// 9. metrics unit suite

fn det(x: f64, y: f64, yaw: f64, category: Category) -> Detection {
    Detection {
        center: [x, y],
        yaw,
        category,
    }
}

fn metrics_suite() -> Outcome {
    use Category::*;
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    let opt_close = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => close(a, b),
        (None, None) => true,
        _ => false,
    };
    // (name, preds, gts, matched, total, mATE, mAOE)
    type Case = (&'static str, Vec<Detection>, Vec<Detection>, usize, usize, Option<f64>, Option<f64>);
    let cases: Vec<Case> = vec![
        ("exact hit", vec![det(1.0, 2.0, 0.3, Car)], vec![det(1.0, 2.0, 0.3, Car)], 1, 1, Some(0.0), Some(0.0)),
        ("beyond threshold", vec![det(3.0, 4.0, 0.0, Car)], vec![det(0.0, 0.0, 0.0, Car)], 0, 1, None, None),
        ("at threshold", vec![det(1.2, 1.6, 0.5, Car)], vec![det(0.0, 0.0, 0.0, Car)], 1, 1, Some(2.0), Some(0.5)),
        ("category mismatch", vec![det(0.0, 0.0, 0.0, Bus)], vec![det(0.0, 0.0, 0.0, Car)], 0, 1, None, None),
        (
            "yaw wrap-around",
            vec![det(0.0, 0.0, -3.1, Car), det(10.0, 0.0, 0.1, Truck)],
            vec![det(0.0, 0.0, 3.1, Car), det(10.0, 0.0, 0.1 + PI, Truck)],
            2,
            2,
            Some(0.0),
            Some((2.0 * PI - 6.2 + PI) / 2.0),
        ),
        (
            "tie goes to the first prediction",
            vec![det(1.0, 0.0, 0.5, Car), det(-1.0, 0.0, 0.2, Car)],
            vec![det(0.0, 0.0, 0.0, Car)],
            1,
            1,
            Some(1.0),
            Some(0.5),
        ),
        (
            "greedy by distance",
            vec![det(0.9, 0.0, 0.0, Car), det(-0.5, 0.0, 0.0, Car)],
            vec![det(0.0, 0.0, 0.0, Car), det(1.5, 0.0, 0.0, Car)],
            2,
            2,
            Some(0.55),
            Some(0.0),
        ),
        (
            "extra false positive",
            vec![det(0.3, 0.4, 0.0, Car), det(30.0, 0.0, 0.0, Car)],
            vec![det(0.0, 0.0, 0.0, Car)],
            1,
            1,
            Some(0.5),
            Some(0.0),
        ),
        ("no predictions", vec![], vec![det(0.0, 0.0, 0.0, Car), det(5.0, 5.0, 0.0, Cone)], 0, 2, None, None),
        (
            "one prediction for two ground truths",
            vec![det(0.0, 0.6, 0.25, Cone)],
            vec![det(0.0, 0.0, 0.0, Cone), det(0.0, 1.0, 0.0, Cone)],
            1,
            2,
            Some(0.4),
            Some(0.25),
        ),
    ];
    let mut bad = Vec::new();
    for (name, preds, gts, m, t, ate, aoe) in &cases {
        let s: MatchScore = match_and_score(preds, gts, 2.0);
        if s.matched != *m || s.total != *t || !opt_close(s.ate(), *ate) || !opt_close(s.aoe(), *aoe) {
            bad.push(format!("{name}: got {s:?}"));
        }
    }
    Ok((
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} crafted cases reproduce hand-computed values", cases.len())
        } else {
            bad.join("; ")
        },
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let only: Option<Vec<String>> = std::env::var("BOXEDIT_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').map(|p| p.trim().to_string()).collect());
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("projection", projection_oracle),
        ("codec", codec_round_trip),
        ("gradient", gradient_check),
        ("azimuth", azimuth_matcher),
        ("compiler", compiler_conformance),
        ("metrics", metrics_suite),
        ("neutrality", zero_init_neutrality),
        ("smoke", training_smoke),
        ("ablation", ablation),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.iter().any(|n| n == name)) {
            continue;
        }
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        if !pass {
            failed += 1;
        }
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
