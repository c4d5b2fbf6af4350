//! Image quality and box-placement metrics, and the colour-keyed oracle
//! detector for synthetic scenes.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_diff, Box3D, CameraIntrinsics, CameraPose, Face, Mask};
use crate::image::quantize;
use crate::scene::{
    face_visible, shaded_color, world_box, Category, GroundPose, SceneSpec, GROUND_COLORS, MASK_FILL,
    SKY_COLOR,
};
use crate::tensor::Tensor;

/// Centre-distance threshold for a detection to count as a match, metres.
pub const MATCH_THRESHOLD: f64 = 2.0;
/// Largest colour distance at which a pixel is keyed to an object.
pub const KEY_TOLERANCE: f64 = 0.12;
/// Inside a detection region, pixels farther than this from every
/// background colour and not keyed to another object also join the blob.
pub const BACKGROUND_TOLERANCE: f64 = 0.15;
/// Such pixels keep a face label when a face shade is this close.
const LOOSE_FACE_TOLERANCE: f64 = 0.25;
/// Edge softness schedule of the silhouette model, pixels.
const SOFT_EDGES: [f64; 3] = [0.5, 0.15, 0.04];
/// Coarse search grid around the initial guess: half-width and spacing in
/// metres, and the number of headings.
const GRID_RADIUS: f64 = 3.0;
const GRID_STEP: f64 = 0.5;
const GRID_HEADINGS: usize = 16;
/// Coarse candidates refined to convergence.
const GRID_KEEP: usize = 4;

/// PSNR in dB of videos in `[0, 1]`, optionally restricted to `mask`
/// (`[N, 1, H, W]`, broadcast over channels). Identical inputs give
/// `f64::INFINITY`.
pub fn psnr(a: &Tensor, b: &Tensor, mask: Option<&Tensor>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            what: "psnr".into(),
            expected: a.shape().to_vec(),
            got: b.shape().to_vec(),
        });
    }
    let (mut se, mut count) = (0.0, 0usize);
    match mask {
        None => {
            for (x, y) in a.data().iter().zip(b.data()) {
                se += (x - y) * (x - y);
            }
            count = a.numel();
        }
        Some(m) => {
            let (n, c) = (a.dim(0), a.dim(1));
            let hw = a.numel() / (n * c);
            if m.numel() != n * hw {
                return Err(Error::BadShape("psnr mask must be [N, 1, H, W]".into()));
            }
            for f in 0..n {
                for i in 0..hw {
                    if m.data()[f * hw + i] > 0.5 {
                        for ch in 0..c {
                            let o = (f * c + ch) * hw + i;
                            se += (a.data()[o] - b.data()[o]).powi(2);
                        }
                        count += c;
                    }
                }
            }
            if count == 0 {
                return Err(Error::validation("mask", "no masked pixels"));
            }
        }
    }
    let mse = se / count as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Ground-plane centre in world coordinates, metres.
    pub center: [f64; 2],
    /// World heading, radians.
    pub yaw: f64,
    pub category: Category,
}

impl Detection {
    /// Ground truth from a camera-frame box.
    pub fn from_box(bx: &Box3D, pose: &CameraPose, category: Category) -> Self {
        let c = bx.to_world(pose).center();
        Self {
            center: [c.x, c.y],
            yaw: bx.world_heading(pose),
            category,
        }
    }

    fn distance(&self, o: &Detection) -> f64 {
        (self.center[0] - o.center[0]).hypot(self.center[1] - o.center[1])
    }
}

/// Recall and mean errors over matched pairs. Errors are `None` when
/// nothing matched.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchScore {
    pub matched: usize,
    pub total: usize,
    pub sum_translation: f64,
    pub sum_orientation: f64,
}

impl MatchScore {
    pub fn recall(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.matched as f64 / self.total as f64
        }
    }

    pub fn ate(&self) -> Option<f64> {
        (self.matched > 0).then(|| self.sum_translation / self.matched as f64)
    }

    pub fn aoe(&self) -> Option<f64> {
        (self.matched > 0).then(|| self.sum_orientation / self.matched as f64)
    }

    /// Pools the matches of another evaluation unit.
    pub fn merge(&mut self, o: &MatchScore) {
        self.matched += o.matched;
        self.total += o.total;
        self.sum_translation += o.sum_translation;
        self.sum_orientation += o.sum_orientation;
    }

    /// `(mRecall, mATE, mAOE)`.
    pub fn triple(&self) -> (f64, Option<f64>, Option<f64>) {
        (self.recall(), self.ate(), self.aoe())
    }
}

/// Greedy one-to-one matching by ascending centre distance within the same
/// category; a pair matches when its distance is at most `threshold`.
pub fn match_and_score(preds: &[Detection], gts: &[Detection], threshold: f64) -> MatchScore {
    assert!(threshold > 0.0, "threshold must be positive");
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            let d = p.distance(g);
            if p.category == g.category && d <= threshold {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut used_p, mut used_g) = (vec![false; preds.len()], vec![false; gts.len()]);
    let mut s = MatchScore {
        total: gts.len(),
        ..MatchScore::default()
    };
    for (d, i, j) in pairs {
        if used_p[i] || used_g[j] {
            continue;
        }
        used_p[i] = true;
        used_g[j] = true;
        s.matched += 1;
        s.sum_translation += d;
        s.sum_orientation += angle_diff(preds[i].yaw, gts[j].yaw);
    }
    s
}

/// Pixels of `frame` (`[3, H, W]`) keyed to object `object_id` of `scene`:
/// the nearest reference colour belongs to the object and lies within
/// [`KEY_TOLERANCE`]. An optional `region` restricts the result and also
/// admits pixels that match no background colour (see
/// [`BACKGROUND_TOLERANCE`]).
pub fn key_object(frame: &Tensor, scene: &SceneSpec, object_id: usize, region: Option<&Mask>) -> Result<Mask> {
    let target = scene.object(object_id)?;
    key_color(frame, scene, target.color, region)
}

/// As [`key_object`] for an arbitrary body colour.
pub fn key_color(frame: &Tensor, scene: &SceneSpec, color: [f64; 3], region: Option<&Mask>) -> Result<Mask> {
    Ok(segment(frame, scene, color, region).blob)
}

/// Per-pixel keying of one object.
struct Segmentation {
    blob: Mask,
    /// Pixels keyed to some other object.
    occluder: Mask,
    /// Index of the nearest face shade for blob pixels, `NO_LABEL` elsewhere.
    labels: Vec<u8>,
    /// `same[f][g]`: faces `f` and `g` have indistinguishable shades.
    same: [[bool; 6]; 6],
}

const NO_LABEL: u8 = u8::MAX;
const UNKNOWN_FACE: u8 = u8::MAX - 1;

fn color_dist(p: [f64; 3], c: &[f64; 3]) -> f64 {
    ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt()
}

fn segment(frame: &Tensor, scene: &SceneSpec, color: [f64; 3], region: Option<&Mask>) -> Segmentation {
    let (h, w) = (frame.dim(1), frame.dim(2));
    let mut background: Vec<[f64; 3]> = vec![SKY_COLOR.map(quantize), [quantize(MASK_FILL); 3]];
    background.extend(GROUND_COLORS.iter().map(|c| c.map(quantize)));
    let objects: Vec<[f64; 3]> = scene
        .objects
        .iter()
        .filter(|o| o.color != color)
        .flat_map(|o| (0..6).map(move |f| shaded_color(o.color, f)))
        .collect();
    let mine: Vec<[f64; 3]> = (0..6).map(|f| shaded_color(color, f)).collect();
    let mut same = [[false; 6]; 6];
    for (f, row) in same.iter_mut().enumerate() {
        for (g, v) in row.iter_mut().enumerate() {
            *v = color_dist(mine[f], &mine[g]) < 0.02;
        }
    }
    let mut seg = Segmentation {
        blob: Mask::new(h, w),
        occluder: Mask::new(h, w),
        labels: vec![NO_LABEL; h * w],
        same,
    };
    let d = frame.data();
    let nearest = |p: [f64; 3], cs: &[[f64; 3]]| {
        cs.iter()
            .enumerate()
            .map(|(i, c)| (i, color_dist(p, c)))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
    };
    for y in 0..h {
        for x in 0..w {
            if region.is_some_and(|r| !r.get(y, x)) {
                continue;
            }
            let p = [d[y * w + x], d[(h + y) * w + x], d[(2 * h + y) * w + x]];
            let (face, dm) = nearest(p, &mine);
            let (_, db) = nearest(p, &background);
            let (_, dobj) = nearest(p, &objects);
            if dm <= KEY_TOLERANCE && dm < db.min(dobj) {
                seg.blob.set(y, x, true);
                seg.labels[y * w + x] = face as u8;
            } else if dobj <= KEY_TOLERANCE && dobj < db {
                seg.occluder.set(y, x, true);
            } else if region.is_some() && db > BACKGROUND_TOLERANCE {
                seg.blob.set(y, x, true);
                seg.labels[y * w + x] = if dm <= LOOSE_FACE_TOLERANCE { face as u8 } else { UNKNOWN_FACE };
            }
        }
    }
    seg
}

fn cross(o: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Counter-clockwise convex hull (monotone chain).
fn convex_hull(mut pts: Vec<Vector2<f64>>) -> Vec<Vector2<f64>> {
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Vector2<f64>> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Vector2<f64>> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

#[cfg(test)]
fn area(poly: &[Vector2<f64>]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i].x * poly[(i + 1) % n].y - poly[(i + 1) % n].x * poly[i].y).sum::<f64>().abs() / 2.0
}

fn project(k: &CameraIntrinsics, v: &Vector3<f64>) -> Vector2<f64> {
    Vector2::new(k.fx * v.x / v.z + k.cx, k.fy * v.y / v.z + k.cy)
}

/// Convex polygon as `(point, outward unit normal)` per edge.
struct Edges(Vec<(Vector2<f64>, Vector2<f64>)>);

impl Edges {
    fn new(poly: &[Vector2<f64>]) -> Option<Self> {
        let n = poly.len();
        let signed: f64 = (0..n).map(|i| poly[i].x * poly[(i + 1) % n].y - poly[(i + 1) % n].x * poly[i].y).sum();
        if n < 3 || signed.abs() < 1e-9 {
            return None;
        }
        let o = signed.signum();
        Some(Edges(
            (0..n)
                .map(|i| {
                    let (a, b) = (poly[i], poly[(i + 1) % n]);
                    let d = (b - a).normalize();
                    (a, Vector2::new(d.y, -d.x) * o)
                })
                .collect(),
        ))
    }

    /// Smoothed indicator that `q` lies inside.
    fn inside(&self, q: &Vector2<f64>, soft: f64) -> f64 {
        let sd = self.0.iter().map(|(a, n)| n.dot(&(q - a))).fold(f64::NEG_INFINITY, f64::max);
        1.0 / (1.0 + (sd / soft).exp())
    }
}

struct Fit<'a> {
    seg: &'a Segmentation,
    soft: f64,
    bounds: (usize, usize, usize, usize),
    k: &'a CameraIntrinsics,
    pose: &'a CameraPose,
    size: [f64; 3],
}

impl Fit<'_> {
    fn boxed(&self, p: &[f64; 3]) -> Box3D {
        world_box(&GroundPose { x: p[0], y: p[1], heading: p[2] }, self.size).to_camera(self.pose)
    }

    /// Squared disagreement between smoothed silhouette and face indicators
    /// of the candidate and the keyed pixels and their face labels.
    fn cost(&self, p: &[f64; 3]) -> f64 {
        let bx = self.boxed(p);
        if (0..8).any(|i| bx.vertex(i).z < 0.1) {
            return f64::INFINITY;
        }
        let verts: Vec<Vector2<f64>> = (0..8).map(|i| project(self.k, &bx.vertex(i))).collect();
        let Some(hull) = Edges::new(&convex_hull(verts.clone())) else {
            return f64::INFINITY;
        };
        let faces: Vec<(usize, Edges)> = Face::ALL
            .iter()
            .enumerate()
            .filter(|(_, f)| face_visible(&bx, **f))
            .filter_map(|(i, f)| {
                let q: Vec<Vector2<f64>> = f.vertex_indices().iter().map(|&v| verts[v]).collect();
                Edges::new(&convex_hull(q)).map(|e| (i, e))
            })
            .collect();
        let (w, h) = (self.k.width as f64, self.k.height as f64);
        let m = 3.0 * self.soft;
        let lo = |f: fn(&Vector2<f64>) -> f64| verts.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = |f: fn(&Vector2<f64>) -> f64| verts.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        let (bx0, by0, bx1, by1) = self.bounds;
        let x0 = ((lo(|v| v.x) - m).floor().clamp(0.0, w) as usize).min(bx0);
        let y0 = ((lo(|v| v.y) - m).floor().clamp(0.0, h) as usize).min(by0);
        let x1 = ((hi(|v| v.x) + m).ceil().clamp(0.0, w) as usize).max(bx1);
        let y1 = ((hi(|v| v.y) + m).ceil().clamp(0.0, h) as usize).max(by1);
        let width = self.k.width;
        let mut c = 0.0;
        for y in y0..y1 {
            for x in x0..x1 {
                if self.seg.occluder.get(y, x) {
                    continue;
                }
                let q = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                let label = self.seg.labels[y * width + x];
                let t = if label == NO_LABEL { 0.0 } else { 1.0 };
                c += (hull.inside(&q, self.soft) - t).powi(2);
                if label == UNKNOWN_FACE {
                    continue;
                }
                for (fi, e) in &faces {
                    let t = if label != NO_LABEL && self.seg.same[*fi][label as usize] { 1.0 } else { 0.0 };
                    c += (e.inside(&q, self.soft) - t).powi(2);
                }
            }
        }
        c
    }

    fn refine(&self, mut p: [f64; 3], scale: f64) -> ([f64; 3], f64) {
        let mut best = self.cost(&p);
        let (mut sxy, mut syaw) = (0.5 * scale, 0.3 * scale);
        for _ in 0..400 {
            if sxy < 1e-3 {
                break;
            }
            let mut improved = None;
            for (i, s) in [(0, sxy), (0, -sxy), (1, sxy), (1, -sxy), (2, syaw), (2, -syaw)] {
                let mut q = p;
                q[i] += s;
                let c = self.cost(&q);
                if c < improved.map_or(best, |(_, b)| b) {
                    improved = Some((q, c));
                }
            }
            match improved {
                Some((q, c)) => {
                    p = q;
                    best = c;
                }
                None => {
                    sxy /= 2.0;
                    syaw /= 2.0;
                }
            }
        }
        (p, best)
    }
}

fn wrap_pi(a: f64) -> f64 {
    let t = (a + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
    if t <= -std::f64::consts::PI {
        t + 2.0 * std::f64::consts::PI
    } else {
        t
    }
}

/// Fits a ground-standing box of known `size` to a segmentation. Returns
/// the pose and the final cost.
fn fit_box(seg: &Segmentation, k: &CameraIntrinsics, pose: &CameraPose, size: [f64; 3]) -> Option<(GroundPose, f64)> {
    let blob = &seg.blob;
    let bounds = blob.bounds()?;
    if blob.count() < 3 {
        return None;
    }
    let (x0, _, x1, _) = bounds;
    let rt = pose.r().transpose();
    let cam = pose.position();
    let mut ground = Vec::new();
    for x in x0..x1 {
        let Some(y) = (0..blob.height).rev().find(|&y| blob.get(y, x)) else {
            continue;
        };
        let d = rt * k.ray(x as f64 + 0.5, y as f64 + 1.0);
        if d.z < -1e-6 {
            ground.push(cam + d * (-cam.z / d.z));
        }
    }
    if ground.is_empty() {
        return None;
    }
    let mean = ground.iter().fold(Vector3::zeros(), |a, b| a + b) / ground.len() as f64;
    let away = Vector3::new(mean.x - cam.x, mean.y - cam.y, 0.0).normalize();
    let c0 = mean + away * (size[1] / 2.0);
    let mut fit = Fit {
        seg,
        soft: SOFT_EDGES[0],
        bounds,
        k,
        pose,
        size,
    };
    let mut coarse: Vec<([f64; 3], f64)> = Vec::new();
    let steps = (GRID_RADIUS / GRID_STEP).round() as i32;
    for i in -steps..=steps {
        for j in -steps..=steps {
            for a in 0..GRID_HEADINGS {
                let p = [
                    c0.x + i as f64 * GRID_STEP,
                    c0.y + j as f64 * GRID_STEP,
                    a as f64 * std::f64::consts::TAU / GRID_HEADINGS as f64,
                ];
                coarse.push((p, fit.cost(&p)));
            }
        }
    }
    coarse.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut best: Option<([f64; 3], f64)> = None;
    for &(start, _) in coarse.iter().take(GRID_KEEP) {
        let (mut p, mut c) = (start, 0.0);
        for (n, &soft) in SOFT_EDGES.iter().enumerate() {
            fit.soft = soft;
            (p, c) = fit.refine(p, if n == 0 { 0.5 } else { 0.2 });
        }
        if best.is_none_or(|(_, b)| c < b) {
            best = Some((p, c));
        }
    }
    let (p, cost) = best?;
    Some((GroundPose { x: p[0], y: p[1], heading: wrap_pi(p[2]) }, cost))
}

/// Detects an object of known `size`, body `color` and `category` in a
/// `[3, H, W]` frame seen from `pose`, optionally restricted to `region`.
pub fn detect(
    frame: &Tensor,
    scene: &SceneSpec,
    pose: &CameraPose,
    color: [f64; 3],
    size: [f64; 3],
    category: Category,
    region: Option<&Mask>,
) -> Option<Detection> {
    let seg = segment(frame, scene, color, region);
    let (g, _) = fit_box(&seg, &scene.intrinsics, pose, size)?;
    Some(Detection {
        center: [g.x, g.y],
        yaw: g.heading,
        category,
    })
}

/// Detects object `object_id` of `scene`, optionally keyed with a
/// substitute colour and restricted to a region.
pub fn detect_object(
    frame: &Tensor,
    scene: &SceneSpec,
    pose: &CameraPose,
    object_id: usize,
    color: Option<[f64; 3]>,
    region: Option<&Mask>,
) -> Result<Detection> {
    let obj = scene.object(object_id)?;
    detect(frame, scene, pose, color.unwrap_or(obj.color), obj.size, obj.category, region)
        .ok_or(Error::NoDetection(object_id))
}

/// Detections of every object of `scene` found in a `[3, H, W]` frame
/// rendered from scene frame `scene_frame`.
pub fn oracle_detect(frame: &Tensor, scene: &SceneSpec, scene_frame: usize) -> Vec<(usize, Detection)> {
    let pose = &scene.poses[scene_frame];
    scene
        .objects
        .iter()
        .filter_map(|o| detect_object(frame, scene, pose, o.id, None, None).ok().map(|d| (o.id, d)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn det(x: f64, y: f64, yaw: f64) -> Detection {
        Detection { center: [x, y], yaw, category: Category::Car }
    }

    #[test]
    fn psnr_examples() {
        let a = Tensor::full(&[1, 3, 2, 2], 0.5);
        assert_eq!(psnr(&a, &a, None).unwrap(), f64::INFINITY);
        let b = Tensor::full(&[1, 3, 2, 2], 0.6);
        assert!((psnr(&a, &b, None).unwrap() - 20.0).abs() < 1e-9);
        let mut c = a.clone();
        for ch in 0..3 {
            c.data_mut()[ch * 4] = 0.7;
            c.data_mut()[ch * 4 + 1] = 0.7;
        }
        let mut m = Tensor::zeros(&[1, 1, 2, 2]);
        m.data_mut()[0] = 1.0;
        m.data_mut()[1] = 1.0;
        let full = psnr(&a, &c, None).unwrap();
        let masked = psnr(&a, &c, Some(&m)).unwrap();
        assert!(masked < full);
        assert!((full - masked - 10.0 * 2f64.log10()).abs() < 1e-9);
        assert!(psnr(&a, &c, Some(&Tensor::zeros(&[1, 1, 2, 2]))).is_err());
    }

    #[test]
    fn scoring_examples() {
        let g = [det(0.0, 0.0, 0.3)];
        assert_eq!(match_and_score(&g, &g, 2.0).triple(), (1.0, Some(0.0), Some(0.0)));
        let s = match_and_score(&[det(1.0, 0.0, 0.3 + FRAC_PI_2)], &g, 2.0);
        assert_eq!(s.recall(), 1.0);
        assert!((s.ate().unwrap() - 1.0).abs() < 1e-12);
        assert!((s.aoe().unwrap() - 1.5708).abs() < 1e-4);
        assert_eq!(match_and_score(&[det(3.0, 0.0, 0.3)], &g, 2.0).triple(), (0.0, None, None));
    }

    #[test]
    fn scoring_is_permutation_invariant() {
        let preds = [det(0.4, 0.0, 0.1), det(5.0, 5.0, 1.0), det(9.0, 0.0, -3.0)];
        let gts = [det(0.0, 0.0, 0.0), det(5.5, 5.0, 1.2), det(20.0, 0.0, 0.0)];
        let a = match_and_score(&preds, &gts, 2.0);
        let mut p2 = preds;
        p2.reverse();
        let mut g2 = gts;
        g2.rotate_left(1);
        let b = match_and_score(&p2, &g2, 2.0);
        assert_eq!(a.matched, b.matched);
        assert!((a.sum_translation - b.sum_translation).abs() < 1e-12);
        assert!((a.sum_orientation - b.sum_orientation).abs() < 1e-12);
        assert!(a.aoe().unwrap() <= PI);
    }

    #[test]
    fn hull_and_inside_test() {
        let sq = vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(2.0, 0.0),
            Vector2::new(2.0, 2.0),
            Vector2::new(0.0, 2.0),
            Vector2::new(1.0, 1.0),
        ];
        let h = convex_hull(sq);
        assert_eq!(h.len(), 4);
        assert!((area(&h) - 4.0).abs() < 1e-12);
        let e = Edges::new(&h).unwrap();
        assert!(e.inside(&Vector2::new(1.0, 1.0), 0.01) > 0.999);
        assert!((e.inside(&Vector2::new(2.0, 1.0), 0.01) - 0.5).abs() < 1e-12);
        assert!(e.inside(&Vector2::new(2.5, 1.0), 0.01) < 1e-6);
        let mut cw = h.clone();
        cw.reverse();
        let e = Edges::new(&cw).unwrap();
        assert!(e.inside(&Vector2::new(1.0, 1.0), 0.01) > 0.999);
    }

    fn calibration(h: usize, w: usize, seeds: u64) -> (usize, usize, f64, f64) {
        use crate::scene::{render_scene, sample_scene, SceneGenConfig};
        let cfg = SceneGenConfig { height: h, width: w, num_frames: 2, ..SceneGenConfig::default() };
        let (mut total, mut found, mut ate, mut aoe) = (0, 0, 0.0, 0.0);
        for s in 0..seeds {
            let spec = sample_scene(&cfg, 7, s).unwrap();
            let r = render_scene(&spec);
            let frame = r.frame(0);
            for o in &spec.objects {
                let bx = o.boxes.get(0);
                if r.instance[0][o.id].count() < 24 || bx.center().norm() > 20.0 {
                    continue;
                }
                total += 1;
                if let Ok(d) = detect_object(&frame, &spec, &spec.poses[0], o.id, None, None) {
                    let gt = Detection::from_box(bx, &spec.poses[0], o.category);
                    let sc = match_and_score(&[d], &[gt], MATCH_THRESHOLD);
                    if let (Some(t), Some(a)) = (sc.ate(), sc.aoe()) {
                        found += 1;
                        ate += t;
                        aoe += a;
                    }
                }
            }
        }
        (total, found, ate / found.max(1) as f64, aoe / found.max(1) as f64)
    }

    #[test]
    fn detector_recovers_rendered_boxes() {
        let (total, found, ate, aoe) = calibration(64, 128, 6);
        assert!(total >= 8, "{total}");
        assert!(found as f64 >= 0.9 * total as f64, "{found}/{total}");
        assert!(ate < 0.1, "ate {ate}");
        assert!(aoe < 0.1, "aoe {aoe}");
        let (total, found, ate, aoe) = calibration(32, 64, 16);
        assert!(total >= 8 && found as f64 >= 0.9 * total as f64, "{found}/{total}");
        assert!(ate < 0.3 && aoe < 0.1, "desk ate {ate} aoe {aoe}");
    }

    #[test]
    fn distinct_objects_are_detected_separately() {
        use crate::scene::{render_scene, SceneSpec};
        let k = CameraIntrinsics::centered(128, 64, 0.5);
        let pose = CameraPose::level([0.0, 0.0, 1.5], 0.0);
        let objs = vec![
            (Category::Car, [4.5, 1.9, 1.6], [0.8, 0.1, 0.1], vec![GroundPose { x: 10.0, y: 3.0, heading: 0.3 }]),
            (Category::Car, [4.5, 1.9, 1.6], [0.1, 0.3, 0.9], vec![GroundPose { x: 12.0, y: -3.0, heading: -0.2 }]),
        ];
        let spec = SceneSpec::new("two", 0, k, vec![pose], objs).unwrap();
        let dets = oracle_detect(&render_scene(&spec).frame(0), &spec, 0);
        assert_eq!(dets.len(), 2);
        assert!((dets[0].1.center[0] - 10.0).abs() < 0.5 && (dets[0].1.center[1] - 3.0).abs() < 0.5);
        assert!((dets[1].1.center[0] - 12.0).abs() < 0.5 && (dets[1].1.center[1] + 3.0).abs() < 0.5);
    }

    #[test]
    fn off_colour_object_is_found_inside_region() {
        use crate::scene::{render_scene, SceneSpec};
        let k = CameraIntrinsics::centered(128, 64, 0.5);
        let pose = CameraPose::level([0.0, 0.0, 1.5], 0.0);
        let size = [4.5, 1.9, 1.6];
        let scene = |color| {
            let traj = vec![GroundPose { x: 10.0, y: 1.0, heading: 0.3 }];
            SceneSpec::new("drift", 0, k, vec![pose], vec![(Category::Car, size, color, traj)]).unwrap()
        };
        let (spec, drifted) = (scene([0.8, 0.1, 0.1]), scene([0.6, 0.3, 0.4]));
        let frame = render_scene(&drifted).frame(0);
        let red = spec.objects[0].color;
        assert!(detect(&frame, &spec, &pose, red, size, Category::Car, None).is_none());
        let mut region = Mask::new(64, 128);
        for y in 8..56 {
            for x in 20..108 {
                region.set(y, x, true);
            }
        }
        let d = detect(&frame, &spec, &pose, red, size, Category::Car, Some(&region)).unwrap();
        assert!((d.center[0] - 10.0).abs() < 0.5 && (d.center[1] - 1.0).abs() < 0.5, "{d:?}");
    }

    #[test]
    fn deleted_object_is_not_detected() {
        use crate::scene::{render_scene, sample_scene, SceneGenConfig};
        let cfg = SceneGenConfig { num_frames: 1, ..SceneGenConfig::default() };
        let spec = sample_scene(&cfg, 3, 0).unwrap();
        let mut without = spec.clone();
        without.objects.remove(0);
        let frame = render_scene(&without).frame(0);
        let o = &spec.objects[0];
        assert!(matches!(
            detect_object(&frame, &spec, &spec.poses[0], o.id, None, None),
            Err(Error::NoDetection(_))
        ));
    }

    #[test]
    fn wrap_range() {
        for a in [-7.0, -PI, 0.0, PI, 3.5, 10.0] {
            let w = wrap_pi(a);
            assert!(w > -PI - 1e-12 && w <= PI + 1e-12);
            assert!(angle_diff(w, a) < 1e-9);
        }
    }
}
