//! Edit execution shared by the CLI and the HTTP service: resolves an
//! [`EditSpec`] against a dataset, samples it and reports on the result.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::denoiser::Model;
use crate::edit::{compile, EditSpec, Reference, Task};
use crate::error::{Error, Result};
use crate::eval::palette_color;
use crate::image::{read_rgb_png, write_rgb_png};
use crate::metrics::{detect, match_and_score, Detection, MatchScore, MATCH_THRESHOLD};
use crate::pipeline::{generate, EditInput};
use crate::scene::{
    frame_of, materialize_clip, render_scene, ClipRecord, Dataset, ObjectBankEntry, Split, VideoClip,
};
use crate::tensor::Tensor;

/// Content hash of an edit request: hex SHA-256 of its canonical JSON.
pub fn job_id(spec: &EditSpec) -> Result<String> {
    Ok(hex::encode(Sha256::digest(spec.canonical_json()?.as_bytes())))
}

/// Read-only state needed to run edits.
pub struct EditContext {
    pub dataset: Dataset,
    pub model: Model,
    pub bank: Vec<ObjectBankEntry>,
    pub steps: usize,
    pub seed: u64,
}

impl EditContext {
    /// Builds the context with an object bank from the dataset's training
    /// clips.
    pub fn new(dataset: Dataset, model: Model, steps: usize, seed: u64) -> Result<Self> {
        let bank = crate::scene::build_object_bank(&dataset.load_clips(Split::Train)?);
        Ok(Self {
            dataset,
            model,
            bank,
            steps,
            seed,
        })
    }

    pub fn bank_entry(&self, id: &str) -> Result<&ObjectBankEntry> {
        self.bank
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::UnknownBankEntry(id.to_string()))
    }

    /// The `frames`-long window of the spec's scene starting at `spec.start`.
    pub fn resolve_clip(&self, spec: &EditSpec) -> Result<VideoClip> {
        let scene = self.dataset.scene(&spec.scene_id)?;
        let n = self.model.cfg.frames;
        if spec.start + n > scene.num_frames {
            return Err(Error::validation(
                "start",
                format!("window of {n} frames exceeds scene length {}", scene.num_frames),
            ));
        }
        if let Some(oid) = spec.object_id {
            if !scene.objects.iter().any(|o| o.id == oid) {
                return Err(Error::UnknownObject(oid.to_string()));
            }
        }
        let rec = ClipRecord {
            clip_id: format!("{}:{}", spec.scene_id, spec.start),
            scene_id: spec.scene_id.clone(),
            object_id: spec.object_id,
            start: spec.start,
            len: n,
            ref_index: 0,
            split: Split::Val,
            inpaint_rect: spec.object_id.is_none().then_some([0, 0, 0, 0]),
        };
        materialize_clip(scene, &render_scene(scene), &rec, None)
    }

    pub fn resolve_reference(&self, spec: &EditSpec) -> Result<Option<Reference>> {
        let Some(r) = &spec.reference else {
            return Ok(None);
        };
        match (&r.bank_id, &r.image_path) {
            (Some(id), None) => Ok(Some(Reference::from_bank(self.bank_entry(id)?)?)),
            (None, Some(path)) => Ok(Some(Reference::from_rgb(&read_rgb_png(Path::new(path))?))),
            _ => Err(Error::validation("reference", "give exactly one of bank_id or image_path")),
        }
    }

    /// Compiles, samples and scores one edit.
    pub fn run(&self, spec: &EditSpec) -> Result<EditOutcome> {
        spec.validate()?;
        let id = job_id(spec)?;
        let clip = self.resolve_clip(spec)?;
        let reference = self.resolve_reference(spec)?;
        let compiled = compile(spec, &clip, reference.as_ref())?;
        let input = EditInput::from_compiled(&compiled, clip.intrinsics);
        let video = generate(&self.model, std::slice::from_ref(&input), self.steps, self.seed)?
            .pop()
            .expect("one input");
        let scene = self.dataset.scene(&spec.scene_id)?;
        let (color, size, category) = match (spec.task, spec.object_id, &reference) {
            (Task::Insert | Task::Replace, _, Some(r)) => {
                let cat = match &spec.reference.as_ref().and_then(|r| r.bank_id.clone()) {
                    Some(bid) => self.bank_entry(bid)?.category,
                    None => clip.category.unwrap_or(crate::scene::Category::Car),
                };
                (palette_color(&r.rgba), None, cat)
            }
            (_, Some(oid), _) => {
                let o = scene.object(oid)?;
                (o.color, Some(o.size), o.category)
            }
            _ => unreachable!("validated spec"),
        };
        let (h, w) = (clip.height(), clip.width());
        let mut detections = Vec::with_capacity(clip.len());
        let mut score = MatchScore::default();
        for f in 0..clip.len() {
            let bx = compiled.boxes.get(f);
            let region = crate::geometry::Mask {
                height: h,
                width: w,
                data: compiled.mask.data()[f * h * w..(f + 1) * h * w].iter().map(|&v| v > 0.5).collect(),
            };
            let d = detect(
                &frame_of(&video, f),
                scene,
                &clip.poses[f],
                color,
                size.unwrap_or(bx.size()),
                category,
                Some(&region),
            );
            let gt = Detection::from_box(bx, &clip.poses[f], category);
            score.merge(&match_and_score(d.as_slice(), &[gt], MATCH_THRESHOLD));
            detections.push(d);
        }
        let (m_recall, m_ate, m_aoe) = score.triple();
        Ok(EditOutcome {
            video,
            report: EditReport {
                job_id: id,
                spec: spec.clone(),
                frames: clip.len(),
                paste_frame: compiled.paste_frame,
                masked_pixels: compiled.mask.data().iter().filter(|&&v| v > 0.5).count(),
                steps: self.steps,
                seed: self.seed,
                detections,
                m_recall,
                m_ate,
                m_aoe,
            },
        })
    }
}

/// Summary written next to the edited frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditReport {
    pub job_id: String,
    pub spec: EditSpec,
    pub frames: usize,
    pub paste_frame: usize,
    pub masked_pixels: usize,
    pub steps: usize,
    pub seed: u64,
    /// Oracle detection of the edited object per frame.
    pub detections: Vec<Option<Detection>>,
    #[serde(rename = "mRecall")]
    pub m_recall: f64,
    #[serde(rename = "mATE")]
    pub m_ate: Option<f64>,
    #[serde(rename = "mAOE")]
    pub m_aoe: Option<f64>,
}

pub struct EditOutcome {
    /// `[N, 3, H, W]` in `[0, 1]`.
    pub video: Tensor,
    pub report: EditReport,
}

impl EditOutcome {
    /// Writes `frame_<i>.png` per frame and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for f in 0..self.video.dim(0) {
            write_rgb_png(&dir.join(format!("frame_{f:03}.png")), &frame_of(&self.video, f))?;
        }
        std::fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&self.report)?)?;
        Ok(())
    }
}
