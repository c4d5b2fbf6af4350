//! Edit specifications and their compilation into model inputs for the
//! four editing tasks.

use std::path::PathBuf;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    angle_diff, compute_view_angles, mask_from_rects, project_box_rect, BoxTrajectory, Mask, Rect2D,
    ViewAngles, DEFAULT_MASK_DILATION,
};
use crate::image::paste_rgba;
use crate::scene::{
    apply_mask, frame_of, masks_to_tensor, object_crop, Category, ObjectBankEntry, VideoClip, MASK_FILL,
};
use crate::tensor::Tensor;

/// Distance scale of the replacement score, in metres.
pub const REPLACE_DISTANCE_SCALE: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Reposition,
    Insert,
    Delete,
    Replace,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Reposition, Task::Insert, Task::Delete, Task::Replace];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Reposition => "reposition",
            Task::Insert => "insert",
            Task::Delete => "delete",
            Task::Replace => "replace",
        }
    }
}

/// Reference source: exactly one of an object-bank id or a PNG path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<PathBuf>,
}

/// Named repositioning trajectories, applied as a linear ramp over the clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 1.6 m along the heading.
    Forward,
    /// 1.6 m against the heading.
    Backward,
    /// 1.1 m to the object's left with 3.5 degrees of yaw.
    LaneChangeLeft,
    LaneChangeRight,
    /// 1 m toward the camera's left.
    StaticLeft,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Forward,
        Preset::Backward,
        Preset::LaneChangeLeft,
        Preset::LaneChangeRight,
        Preset::StaticLeft,
    ];

    /// Target trajectory for source boxes `b` (camera coordinates).
    pub fn apply(self, b: &BoxTrajectory) -> BoxTrajectory {
        let n = b.len();
        b.map(|i, bx| {
            let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 1.0 };
            let (fwd, left, _) = bx.axes();
            match self {
                Preset::Forward => bx.translated(&(fwd * 1.6 * t)),
                Preset::Backward => bx.translated(&(fwd * -1.6 * t)),
                Preset::LaneChangeLeft | Preset::LaneChangeRight => {
                    let s = if self == Preset::LaneChangeLeft { 1.0 } else { -1.0 };
                    bx.translated(&(left * s * 1.1 * t)).rotated_about_up(s * 3.5f64.to_radians() * t)
                }
                Preset::StaticLeft => bx.translated(&(Vector3::new(-1.0, 0.0, 0.0) * t)),
            }
        })
    }
}

/// User-facing edit request (the JSON exchanged with the UI and CLI).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditSpec {
    pub task: Task,
    pub scene_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_boxes: Option<BoxTrajectory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    /// First scene frame of the edited window.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub start: usize,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

impl EditSpec {
    /// Checks that field presence matches the task.
    pub fn validate(&self) -> Result<()> {
        let t = self.task.as_str();
        let forbid = |present: bool, field: &str| {
            if present {
                Err(Error::validation(field, format!("not allowed for task {t}")))
            } else {
                Ok(())
            }
        };
        if self.scene_id.is_empty() {
            return Err(Error::validation("scene_id", "must not be empty"));
        }
        if let Some(r) = &self.reference {
            if r.bank_id.is_some() == r.image_path.is_some() {
                return Err(Error::validation("reference", "give exactly one of bank_id or image_path"));
            }
        }
        let needs_object = self.task != Task::Insert;
        if needs_object && self.object_id.is_none() {
            return Err(Error::validation("object_id", format!("required for task {t}")));
        }
        forbid(!needs_object && self.object_id.is_some(), "object_id")?;
        match self.task {
            Task::Reposition => {
                forbid(self.reference.is_some(), "reference")?;
                if self.target_boxes.is_some() && self.preset.is_some() {
                    return Err(Error::validation("preset", "give target_boxes or preset, not both"));
                }
                if self.target_boxes.is_none() && self.preset.is_none() {
                    return Err(Error::MissingTargetBoxes(t.into()));
                }
            }
            Task::Insert => {
                if self.reference.is_none() {
                    return Err(Error::MissingReference(t.into()));
                }
                if self.target_boxes.is_none() {
                    return Err(Error::MissingTargetBoxes(t.into()));
                }
                forbid(self.preset.is_some(), "preset")?;
            }
            Task::Delete => {
                forbid(self.reference.is_some(), "reference")?;
                forbid(self.target_boxes.is_some(), "target_boxes")?;
                forbid(self.preset.is_some(), "preset")?;
            }
            Task::Replace => {
                if self.reference.is_none() {
                    return Err(Error::MissingReference(t.into()));
                }
                forbid(self.target_boxes.is_some(), "target_boxes")?;
                forbid(self.preset.is_some(), "preset")?;
            }
        }
        if let Some(tb) = &self.target_boxes {
            if tb.is_empty() {
                return Err(Error::validation("target_boxes", "must not be empty"));
            }
        }
        Ok(())
    }

    /// Canonical JSON (sorted keys, no whitespace) used for content hashing.
    pub fn canonical_json(&self) -> Result<String> {
        let v = serde_json::to_value(self)?;
        Ok(serde_json::to_string(&v)?)
    }
}

/// A resolved reference image (`[4, h, w]` RGBA) and its viewpoint if known.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub rgba: Tensor,
    pub view: Option<ViewAngles>,
}

impl Reference {
    /// Opaque RGBA from an RGB image.
    pub fn from_rgb(rgb: &Tensor) -> Self {
        let (h, w) = (rgb.dim(1), rgb.dim(2));
        let mut d = rgb.data().to_vec();
        d.extend(std::iter::repeat_n(1.0, h * w));
        Self {
            rgba: Tensor::from_vec(&[4, h, w], d).expect("rgba"),
            view: None,
        }
    }

    pub fn from_bank(e: &ObjectBankEntry) -> Result<Self> {
        Ok(Self {
            rgba: e
                .crop
                .clone()
                .ok_or_else(|| Error::validation("reference.bank_id", "bank entry has no crop loaded"))?,
            view: Some(e.view),
        })
    }
}

/// Compiled model inputs for one edit.
#[derive(Debug, Clone)]
pub struct CompiledEdit {
    pub task: Task,
    /// `V_m`, `[N, 3, H, W]`, before pasting.
    pub masked: Tensor,
    /// `V_m` with the reference pasted into `paste_frame`.
    pub pasted: Tensor,
    /// Binary `[N, 1, H, W]`.
    pub mask: Tensor,
    /// Boxes that place the mask and drive conditioning.
    pub boxes: BoxTrajectory,
    /// The object's boxes in the source clip, if it has one.
    pub source_boxes: Option<BoxTrajectory>,
    pub reference: Option<Tensor>,
    pub ref_view: Option<ViewAngles>,
    pub elevations: Vec<f64>,
    pub azimuths: Vec<f64>,
    pub paste_frame: usize,
    pub deletion: bool,
}

/// Frame whose azimuth is nearest (wrapped) to the reference view; ties go
/// to the lowest index.
pub fn choose_paste_frame(azimuths: &[f64], ref_view: &ViewAngles) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &a) in azimuths.iter().enumerate() {
        let d = angle_diff(a, ref_view.azimuth);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Pastes `rgba` into frame `frame` of `video`, covering `rect`.
pub fn paste_reference(video: &Tensor, rgba: &Tensor, frame: usize, rect: &Rect2D) -> Tensor {
    let (n, c, h, w) = (video.dim(0), video.dim(1), video.dim(2), video.dim(3));
    assert!(frame < n, "paste frame {frame} out of {n}");
    let mut f = frame_of(video, frame);
    let (x0, y0, x1, y1) = rect.pixel_bounds();
    paste_rgba(&mut f, rgba, x0, y0, x1.min(w), y1.min(h));
    let mut out = video.clone();
    let plane = c * h * w;
    out.data_mut()[frame * plane..(frame + 1) * plane].copy_from_slice(f.data());
    out
}

/// Same-category bank entry minimising `|dd| / 20 m + |da| / pi`; ties go to
/// the first entry in bank order.
pub fn pick_replacement(
    bank: &[ObjectBankEntry],
    category: Category,
    distance: f64,
    azimuth: f64,
) -> Result<&ObjectBankEntry> {
    let mut best: Option<(&ObjectBankEntry, f64)> = None;
    for e in bank.iter().filter(|e| e.category == category) {
        let s = replacement_score(e, distance, azimuth);
        if best.is_none_or(|(_, b)| s < b) {
            best = Some((e, s));
        }
    }
    best.map(|(e, _)| e).ok_or_else(|| Error::EmptyCategory(category.as_str().into()))
}

pub fn replacement_score(e: &ObjectBankEntry, distance: f64, azimuth: f64) -> f64 {
    (e.distance - distance).abs() / REPLACE_DISTANCE_SCALE + angle_diff(e.view.azimuth, azimuth) / std::f64::consts::PI
}

fn rect_masks(boxes: &[&BoxTrajectory], clip: &VideoClip) -> Result<Vec<Mask>> {
    let k = &clip.intrinsics;
    (0..clip.len())
        .map(|i| {
            let rects = boxes
                .iter()
                .map(|b| project_box_rect(b.get(i), k))
                .collect::<Result<Vec<_>>>()?;
            Ok(mask_from_rects(&rects, k.height, k.width, DEFAULT_MASK_DILATION))
        })
        .collect()
}

/// Frame with the largest instance mask (ties: lowest index).
pub fn largest_instance_frame(clip: &VideoClip) -> usize {
    let mut best = (0, 0);
    for (i, m) in clip.instance.iter().enumerate() {
        let c = m.count();
        if c > best.1 {
            best = (i, c);
        }
    }
    best.0
}

/// Derives `V_m`, `M`, effective boxes and reference for `spec` over `clip`.
/// `reference` must be the resolved `spec.reference` for insert and replace.
pub fn compile(spec: &EditSpec, clip: &VideoClip, reference: Option<&Reference>) -> Result<CompiledEdit> {
    spec.validate()?;
    let n = clip.len();
    let source = match spec.object_id {
        Some(id) => {
            if clip.object_id != Some(id) {
                return Err(Error::UnknownObject(id.to_string()));
            }
            Some(clip.boxes.clone().ok_or_else(|| Error::UnknownObject(id.to_string()))?)
        }
        None => None,
    };
    let target = match (&spec.target_boxes, spec.preset, &source) {
        (Some(t), _, _) => Some(t.clone()),
        (None, Some(p), Some(b)) => Some(p.apply(b)),
        _ => None,
    };
    if let Some(t) = &target {
        if t.len() != n {
            return Err(Error::validation(
                "target_boxes",
                format!("expected {n} boxes, got {}", t.len()),
            ));
        }
        for b in t.iter() {
            b.validate()?;
        }
    }
    let needs_ref = matches!(spec.task, Task::Insert | Task::Replace);
    if needs_ref && reference.is_none() {
        return Err(Error::MissingReference(spec.task.as_str().into()));
    }
    let (masks, boxes, reference) = match spec.task {
        Task::Reposition => {
            let (b, t) = (source.clone().expect("validated"), target.expect("validated"));
            let masks = rect_masks(&[&b, &t], clip)?;
            let r = largest_instance_frame(clip);
            let rect = project_box_rect(b.get(r), &clip.intrinsics)?;
            let crop = object_crop(&frame_of(&clip.video, r), &clip.instance[r], &rect);
            let view = ViewAngles {
                elevation: clip.elevations[r],
                azimuth: clip.azimuths[r],
            };
            (masks, t, Some(Reference { rgba: crop, view: Some(view) }))
        }
        Task::Insert => {
            let t = target.expect("validated");
            (rect_masks(&[&t], clip)?, t, reference.cloned())
        }
        Task::Delete => {
            let b = source.clone().expect("validated");
            (rect_masks(&[&b], clip)?, b, None)
        }
        Task::Replace => {
            let b = source.clone().expect("validated");
            (rect_masks(&[&b], clip)?, b, reference.cloned())
        }
    };
    let mask = masks_to_tensor(&masks);
    let masked = apply_mask(&clip.video, &mask, MASK_FILL);
    let mut elevations = Vec::with_capacity(n);
    let mut azimuths = Vec::with_capacity(n);
    for (b, p) in boxes.iter().zip(&clip.poses) {
        let a = compute_view_angles(b, p)?;
        elevations.push(a.elevation);
        azimuths.push(a.azimuth);
    }
    let (pasted, paste_frame, ref_view) = match &reference {
        Some(r) => {
            let view = r.view.unwrap_or(ViewAngles {
                elevation: elevations[0],
                azimuth: azimuths[0],
            });
            let f = choose_paste_frame(&azimuths, &view);
            let rect = project_box_rect(boxes.get(f), &clip.intrinsics)?;
            (paste_reference(&masked, &r.rgba, f, &rect), f, Some(view))
        }
        None => (masked.clone(), 0, None),
    };
    Ok(CompiledEdit {
        task: spec.task,
        deletion: reference.is_none(),
        masked,
        pasted,
        mask,
        boxes,
        source_boxes: source,
        reference: reference.map(|r| r.rgba),
        ref_view,
        elevations,
        azimuths,
        paste_frame,
    })
}
