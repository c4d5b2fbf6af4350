//! Evaluation harness: compiles one edit per clip and task, samples it and
//! scores the edited object with the oracle detector.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::denoiser::Model;
use crate::edit::{compile, pick_replacement, CompiledEdit, EditSpec, Preset, Reference, ReferenceSpec, Task};
use crate::error::{Error, Result};
use crate::metrics::{detect, match_and_score, psnr, Detection, MatchScore, MATCH_THRESHOLD};
use crate::pipeline::{generate, EditInput};
use crate::scene::{frame_of, shaded_color, ObjectBankEntry, SceneSpec, VideoClip, PALETTE};
use crate::tensor::Tensor;

/// Lateral offset of inserted objects from the clip's own object, metres.
const INSERT_OFFSET: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub tasks: Vec<Task>,
    pub steps: usize,
    pub seed: u64,
    pub max_clips: Option<usize>,
    /// Edits sampled together in one batch.
    pub batch: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            tasks: Task::ALL.to_vec(),
            steps: 12,
            seed: 0,
            max_clips: None,
            batch: 4,
        }
    }
}

/// One report row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub edits: usize,
    #[serde(rename = "mRecall")]
    pub m_recall: f64,
    #[serde(rename = "mATE")]
    pub m_ate: Option<f64>,
    #[serde(rename = "mAOE")]
    pub m_aoe: Option<f64>,
    pub psnr_masked: f64,
    pub psnr_full: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub options: EvalOptions,
    pub tasks: BTreeMap<String, TaskScore>,
}

/// An edit prepared for sampling together with what the detector needs.
pub struct PreparedEdit {
    pub task: Task,
    pub clip: usize,
    pub compiled: CompiledEdit,
    pub input: EditInput,
    /// Body colour of the object expected inside the mask.
    pub color: [f64; 3],
}

/// Palette colour whose face shades explain most opaque pixels of an RGBA
/// crop.
pub fn palette_color(rgba: &Tensor) -> [f64; 3] {
    let (h, w) = (rgba.dim(1), rgba.dim(2));
    let d = rgba.data();
    let mut best = (PALETTE[0], 0usize);
    for c in PALETTE.map(|c| c.map(crate::image::quantize)) {
        let shades: Vec<[f64; 3]> = (0..6).map(|f| shaded_color(c, f)).collect();
        let hits = (0..h * w)
            .filter(|&i| d[3 * h * w + i] > 0.5)
            .filter(|&i| {
                shades.iter().any(|s| (0..3).all(|ch| (d[ch * h * w + i] - s[ch]).abs() < 0.02))
            })
            .count();
        if hits > best.1 {
            best = (c, hits);
        }
    }
    best.0
}

fn insert_boxes(clip: &VideoClip) -> Option<crate::geometry::BoxTrajectory> {
    let b = clip.boxes.as_ref()?;
    let side = if b.get(0).center().x > 0.0 { -1.0 } else { 1.0 };
    Some(b.map(|_, bx| bx.translated(&Vector3::new(side * INSERT_OFFSET, 0.0, 0.0))))
}

/// Builds the edit of `task` for `clip`, or `None` when the clip cannot host
/// it (e.g. the target leaves the image or no bank entry fits).
pub fn prepare_edit(
    task: Task,
    index: usize,
    clip: &VideoClip,
    scene: &SceneSpec,
    bank: &[ObjectBankEntry],
) -> Result<Option<PreparedEdit>> {
    let Some(object_id) = clip.object_id else {
        return Ok(None);
    };
    let own = scene.object(object_id)?.color;
    let mut spec = EditSpec {
        task,
        scene_id: clip.scene_id.clone(),
        object_id: Some(object_id),
        reference: None,
        target_boxes: None,
        preset: None,
        start: clip.start,
    };
    let (reference, color) = match task {
        Task::Reposition => {
            spec.preset = Some(if index.is_multiple_of(2) { Preset::Forward } else { Preset::Backward });
            (None, own)
        }
        Task::Delete => (None, own),
        Task::Insert | Task::Replace => {
            let boxes = if task == Task::Insert {
                match insert_boxes(clip) {
                    Some(b) => b,
                    None => return Ok(None),
                }
            } else {
                clip.boxes.clone().expect("object clip")
            };
            let b0 = boxes.get(0);
            let az = crate::geometry::compute_view_angles(b0, &clip.poses[0])?.azimuth;
            let candidates: Vec<ObjectBankEntry> = bank
                .iter()
                .filter(|e| e.clip_id != clip.clip_id && e.crop.as_ref().is_some_and(|c| palette_color(c) != own))
                .cloned()
                .collect();
            let category = clip.category.expect("object clip");
            let Ok(entry) = pick_replacement(&candidates, category, b0.center().norm(), az) else {
                return Ok(None);
            };
            spec.reference = Some(ReferenceSpec {
                bank_id: Some(entry.id.clone()),
                image_path: None,
            });
            if task == Task::Insert {
                spec.object_id = None;
                spec.target_boxes = Some(boxes);
            }
            let r = Reference::from_bank(entry)?;
            let color = palette_color(&r.rgba);
            (Some(r), color)
        }
    };
    let compiled = match compile(&spec, clip, reference.as_ref()) {
        Ok(c) => c,
        Err(Error::EmptyProjection) => return Ok(None),
        Err(e) => return Err(e),
    };
    let input = EditInput::from_compiled(&compiled, clip.intrinsics);
    Ok(Some(PreparedEdit {
        task,
        clip: index,
        compiled,
        input,
        color,
    }))
}

/// Detector score of the edited object over every frame of `video`.
pub fn score_edit(edit: &PreparedEdit, clip: &VideoClip, scene: &SceneSpec, video: &Tensor) -> Result<MatchScore> {
    let mut total = MatchScore::default();
    let category = clip.category.expect("object clip");
    let (h, w) = (clip.height(), clip.width());
    for f in 0..clip.len() {
        let bx = edit.compiled.boxes.get(f);
        let pose = &clip.poses[f];
        let gt = Detection::from_box(bx, pose, category);
        let m = &edit.compiled.mask.data()[f * h * w..(f + 1) * h * w];
        let region = crate::geometry::Mask {
            height: h,
            width: w,
            data: m.iter().map(|&v| v > 0.5).collect(),
        };
        let preds: Vec<Detection> = detect(
            &frame_of(video, f),
            scene,
            pose,
            edit.color,
            bx.size(),
            category,
            Some(&region),
        )
        .into_iter()
        .collect();
        total.merge(&match_and_score(&preds, &[gt], MATCH_THRESHOLD));
    }
    Ok(total)
}

/// Samples and scores every task on every clip.
pub fn evaluate(
    model: &Model,
    clips: &[VideoClip],
    scenes: &BTreeMap<String, SceneSpec>,
    bank: &[ObjectBankEntry],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if opts.batch == 0 || opts.steps == 0 {
        return Err(Error::validation("eval", "batch and steps must be positive"));
    }
    let clips: Vec<&VideoClip> = clips
        .iter()
        .filter(|c| !c.is_inpainting)
        .take(opts.max_clips.unwrap_or(usize::MAX))
        .collect();
    let mut tasks = BTreeMap::new();
    for &task in &opts.tasks {
        let mut edits = Vec::new();
        for (i, clip) in clips.iter().enumerate() {
            let scene = scenes
                .get(&clip.scene_id)
                .ok_or_else(|| Error::UnknownScene(clip.scene_id.clone()))?;
            if let Some(e) = prepare_edit(task, i, clip, scene, bank)? {
                edits.push(e);
            }
        }
        let mut score = MatchScore::default();
        let (mut psnr_m, mut psnr_f) = (Vec::new(), Vec::new());
        for (b, chunk) in edits.chunks(opts.batch).enumerate() {
            let inputs: Vec<EditInput> = chunk.iter().map(|e| e.input.clone()).collect();
            let videos = generate(model, &inputs, opts.steps, opts.seed.wrapping_add(b as u64))?;
            for (e, v) in chunk.iter().zip(&videos) {
                let clip = clips[e.clip];
                score.merge(&score_edit(e, clip, &scenes[&clip.scene_id], v)?);
                psnr_m.push(psnr(v, &clip.video, Some(&e.compiled.mask))?);
                psnr_f.push(psnr(v, &clip.video, None)?);
            }
        }
        let mean = |v: &[f64]| {
            let finite: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
            if finite.is_empty() {
                f64::INFINITY
            } else {
                finite.iter().sum::<f64>() / finite.len() as f64
            }
        };
        let (m_recall, m_ate, m_aoe) = score.triple();
        tasks.insert(
            task.as_str().to_string(),
            TaskScore {
                edits: edits.len(),
                m_recall,
                m_ate,
                m_aoe,
                psnr_masked: mean(&psnr_m),
                psnr_full: mean(&psnr_f),
            },
        );
    }
    Ok(EvalReport {
        options: opts.clone(),
        tasks,
    })
}
