//! Synthetic driving scenes: generation, rasterisation, clip extraction,
//! masking, inpainting windows, the object bank and on-disk layout.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    compute_view_angles, mask_from_rects, project_box_rect, Box3D, BoxTrajectory, CameraIntrinsics,
    CameraPose, Face, Mask, Rect2D, ViewAngles, DEFAULT_MASK_DILATION,
};
use crate::image::{crop, quantize, read_rgb_png, write_rgb_png};
use crate::tensor::Tensor;

/// Gray level written into masked pixels.
pub const MASK_FILL: f64 = 0.5;
/// Objects farther than this (m) never form clips.
pub const DEFAULT_RADIUS: f64 = 20.0;
/// Maximum outward push of each mask side, as a fraction of the rect extent.
pub const MASK_JITTER: f64 = 0.15;

const NEAR_PLANE: f64 = 0.1;
const INPAINT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Car,
    Bus,
    Truck,
    Trailer,
    Cone,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Car,
        Category::Bus,
        Category::Truck,
        Category::Trailer,
        Category::Cone,
    ];

    /// Nominal `[length, width, height]` in meters.
    pub fn nominal_size(self) -> [f64; 3] {
        match self {
            Category::Car => [4.5, 1.9, 1.6],
            Category::Bus => [11.0, 2.9, 3.2],
            Category::Truck => [7.0, 2.5, 3.0],
            Category::Trailer => [9.0, 2.5, 3.6],
            Category::Cone => [0.4, 0.4, 0.7],
        }
    }

    pub fn is_vehicle(self) -> bool {
        self != Category::Cone
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Car => "car",
            Category::Bus => "bus",
            Category::Truck => "truck",
            Category::Trailer => "trailer",
            Category::Cone => "cone",
        }
    }
}

impl std::str::FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::validation("category", format!("unknown category `{s}`")))
    }
}

/// Body colors available to objects; one per object within a scene so the
/// oracle detector can key on them.
pub const PALETTE: [[f64; 3]; 12] = [
    [0.85, 0.10, 0.10],
    [0.10, 0.25, 0.85],
    [0.90, 0.75, 0.05],
    [0.05, 0.70, 0.20],
    [0.75, 0.10, 0.75],
    [0.05, 0.75, 0.80],
    [0.95, 0.45, 0.05],
    [0.45, 0.20, 0.05],
    [0.60, 0.85, 0.10],
    [0.95, 0.55, 0.70],
    [0.30, 0.05, 0.55],
    [0.98, 0.98, 0.98],
];

/// Per-face brightness factors in `Face::ALL` order.
pub const FACE_SHADES: [f64; 6] = [1.0, 0.8, 0.9, 0.7, 0.95, 0.6];
pub const SKY_COLOR: [f64; 3] = [0.62, 0.75, 0.9];
pub const GROUND_COLORS: [[f64; 3]; 2] = [[0.4, 0.4, 0.4], [0.47, 0.47, 0.47]];
const CHECKER_SIZE: f64 = 2.0;

pub fn shaded_color(color: [f64; 3], face: usize) -> [f64; 3] {
    color.map(|c| quantize(c * FACE_SHADES[face]))
}

/// Ground-plane pose of an object (world frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: usize,
    pub category: Category,
    pub size: [f64; 3],
    pub color: [f64; 3],
    pub trajectory: Vec<GroundPose>,
    /// Per-frame boxes in camera coordinates.
    pub boxes: BoxTrajectory,
}

/// A fully specified scene; serialised as the scene's `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub id: String,
    pub seed: u64,
    pub num_frames: usize,
    pub height: usize,
    pub width: usize,
    pub intrinsics: CameraIntrinsics,
    pub poses: Vec<CameraPose>,
    pub objects: Vec<SceneObject>,
}

impl SceneSpec {
    /// Builds a scene from world-frame trajectories, deriving camera boxes.
    pub fn new(
        id: impl Into<String>,
        seed: u64,
        intrinsics: CameraIntrinsics,
        poses: Vec<CameraPose>,
        objects: Vec<(Category, [f64; 3], [f64; 3], Vec<GroundPose>)>,
    ) -> Result<Self> {
        let n = poses.len();
        let mut objs = Vec::with_capacity(objects.len());
        for (id, (category, size, color, trajectory)) in objects.into_iter().enumerate() {
            if trajectory.len() != n {
                return Err(Error::Config(format!(
                    "object {id} has {} poses for {n} frames",
                    trajectory.len()
                )));
            }
            if size.iter().any(|&s| s <= 0.0) {
                return Err(Error::Config(format!("object {id} has a non-positive size")));
            }
            let boxes = trajectory
                .iter()
                .zip(&poses)
                .map(|(g, pose)| world_box(g, size).to_camera(pose).with_camera_yaw())
                .collect();
            objs.push(SceneObject {
                id,
                category,
                size,
                color: color.map(quantize),
                trajectory,
                boxes: BoxTrajectory::new(boxes),
            });
        }
        Ok(Self {
            id: id.into(),
            seed,
            num_frames: n,
            height: intrinsics.height,
            width: intrinsics.width,
            intrinsics,
            poses,
            objects: objs,
        })
    }

    pub fn object(&self, id: usize) -> Result<&SceneObject> {
        self.objects
            .iter()
            .find(|o| o.id == id)
            .ok_or_else(|| Error::UnknownObject(id.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.poses.len() != self.num_frames {
            return Err(Error::validation("poses", "one pose per frame required"));
        }
        for p in &self.poses {
            p.validate()?;
        }
        for o in &self.objects {
            if o.boxes.len() != self.num_frames {
                return Err(Error::validation("objects.boxes", "one box per frame required"));
            }
        }
        Ok(())
    }
}

/// World-frame box of an object standing on the ground at `g`.
pub fn world_box(g: &GroundPose, size: [f64; 3]) -> Box3D {
    let (s, c) = g.heading.sin_cos();
    let center = Vector3::new(g.x, g.y, size[2] / 2.0);
    Box3D::from_frame(
        &center,
        &Vector3::new(c, s, 0.0),
        &Vector3::new(-s, c, 0.0),
        &Vector3::z(),
        size,
        g.heading,
    )
}

trait CameraYaw {
    fn with_camera_yaw(self) -> Self;
}

impl CameraYaw for Box3D {
    /// Re-expresses `yaw` as the heading angle in the camera's x-z plane.
    fn with_camera_yaw(mut self) -> Self {
        let (f, _, _) = self.axes();
        self.yaw = f.z.atan2(f.x);
        self
    }
}

/// Knobs for random scene sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneGenConfig {
    pub height: usize,
    pub width: usize,
    pub num_frames: usize,
    /// Horizontal focal length as a fraction of the image width.
    pub focal_ratio: f64,
    pub camera_height: f64,
    pub min_vehicles: usize,
    pub max_vehicles: usize,
    pub max_cones: usize,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 128,
            num_frames: 24,
            focal_ratio: 0.5,
            camera_height: 1.5,
            min_vehicles: 2,
            max_vehicles: 5,
            max_cones: 2,
        }
    }
}

/// Samples a random scene; deterministic in `(seed, index)`.
pub fn sample_scene(cfg: &SceneGenConfig, seed: u64, index: u64) -> Result<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let k = CameraIntrinsics::centered(cfg.width, cfg.height, cfg.focal_ratio);
    let n = cfg.num_frames;
    let ego_speed = rng.random_range(0.0..1.0);
    let ego_yaw_rate = rng.random_range(-0.01..0.01);
    let mut ego = Vec::with_capacity(n);
    let (mut ex, mut ey, mut eyaw) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..n {
        ego.push((ex, ey, eyaw));
        ex += ego_speed * eyaw.cos();
        ey += ego_speed * eyaw.sin();
        eyaw += ego_yaw_rate;
    }
    let poses: Vec<CameraPose> = ego
        .iter()
        .map(|&(x, y, yaw)| CameraPose::level([x, y, cfg.camera_height], yaw))
        .collect();

    let n_vehicles = rng.random_range(cfg.min_vehicles..=cfg.max_vehicles);
    let n_cones = rng.random_range(0..=cfg.max_cones);
    let mut colors: Vec<usize> = (0..PALETTE.len()).collect();
    let mut objects = Vec::new();
    let mut placed: Vec<(f64, Vec<GroundPose>)> = Vec::new();
    let ego_traj: Vec<GroundPose> = ego
        .iter()
        .map(|&(x, y, yaw)| GroundPose { x, y, heading: yaw })
        .collect();
    placed.push((2.0, ego_traj));
    for i in 0..n_vehicles + n_cones {
        let category = if i < n_vehicles {
            match rng.random_range(0..10) {
                0..=5 => Category::Car,
                6 => Category::Bus,
                7 | 8 => Category::Truck,
                _ => Category::Trailer,
            }
        } else {
            Category::Cone
        };
        let nominal = category.nominal_size();
        let size = nominal.map(|s| s * rng.random_range(0.9..1.1));
        let radius = 0.5 * size[0].hypot(size[1]);
        for _attempt in 0..30 {
            let traj = sample_trajectory(&mut rng, category, n);
            let clear = placed.iter().all(|(r, other)| {
                traj.iter()
                    .zip(other)
                    .all(|(a, b)| (a.x - b.x).hypot(a.y - b.y) > radius + r + 0.5)
            });
            if clear {
                let ci = rng.random_range(0..colors.len());
                let color = PALETTE[colors.swap_remove(ci)];
                placed.push((radius, traj.clone()));
                objects.push((category, size, color, traj));
                break;
            }
        }
        if colors.is_empty() {
            break;
        }
    }
    SceneSpec::new(format!("scene{index:05}"), seed, k, poses, objects)
}

fn sample_trajectory(rng: &mut ChaCha8Rng, category: Category, n: usize) -> Vec<GroundPose> {
    if !category.is_vehicle() {
        let x = rng.random_range(4.0..30.0);
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let y = side * rng.random_range(5.5..9.0);
        return vec![GroundPose { x, y, heading: 0.0 }; n];
    }
    let kind = rng.random_range(0..10);
    let (y0, heading, speed) = match kind {
        // same-direction lanes
        0..=3 => (
            [-3.5, 0.0, -7.0][rng.random_range(0..3)],
            0.0,
            rng.random_range(0.0..1.3),
        ),
        // oncoming lanes
        4..=6 => (
            [3.5, 7.0][rng.random_range(0..2)],
            std::f64::consts::PI,
            rng.random_range(0.0..1.0),
        ),
        // parked at the curb
        7 | 8 => {
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let h = if rng.random_bool(0.5) { 0.0 } else { std::f64::consts::PI };
            (side * rng.random_range(9.5..12.0), h, 0.0)
        }
        // crossing or turning
        _ => {
            let h = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            (rng.random_range(-8.0..8.0), h, rng.random_range(0.0..0.6))
        }
    };
    let heading = heading + rng.random_range(-0.15..0.15);
    let yaw_rate = if kind == 9 { rng.random_range(-0.05..0.05) } else { 0.0 };
    let mut x = rng.random_range(5.0..35.0);
    let mut y = y0;
    let mut h = heading;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(GroundPose { x, y, heading: h });
        x += speed * h.cos();
        y += speed * h.sin();
        h += yaw_rate;
    }
    out
}

/// Rendered frames plus per-object instance masks.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedScene {
    /// `[N, 3, H, W]`
    pub frames: Tensor,
    /// `instance[frame][object index]`
    pub instance: Vec<Vec<Mask>>,
}

impl RenderedScene {
    pub fn frame(&self, i: usize) -> Tensor {
        let s = self.frames.shape();
        Tensor::from_vec(&s[1..], self.frames.slice_axis(0, i, 1).into_data()).expect("frame")
    }
}

/// Renders every frame. Deterministic: the spec fully determines the output.
pub fn render_scene(spec: &SceneSpec) -> RenderedScene {
    let (h, w) = (spec.height, spec.width);
    let n = spec.num_frames;
    let mut frames = Tensor::zeros(&[n, 3, h, w]);
    let mut instance = Vec::with_capacity(n);
    let frame_len = 3 * h * w;
    for f in 0..n {
        let out = &mut frames.data_mut()[f * frame_len..(f + 1) * frame_len];
        render_background(spec, f, out);
        let mut order: Vec<usize> = (0..spec.objects.len()).collect();
        let dist = |i: usize| spec.objects[i].boxes.get(f).center().norm();
        order.sort_by(|&a, &b| dist(b).total_cmp(&dist(a)).then(a.cmp(&b)));
        let mut owner = vec![usize::MAX; h * w];
        for &oi in &order {
            let obj = &spec.objects[oi];
            for (fi, face) in Face::ALL.iter().enumerate() {
                let bx = obj.boxes.get(f);
                if !face_visible(bx, *face) {
                    continue;
                }
                let color = shaded_color(obj.color, fi);
                fill_polygon(&bx.face(*face), &spec.intrinsics, |y, x| {
                    owner[y * w + x] = oi;
                    for (c, v) in color.iter().enumerate() {
                        out[(c * h + y) * w + x] = *v;
                    }
                });
            }
        }
        let masks = (0..spec.objects.len())
            .map(|oi| Mask {
                height: h,
                width: w,
                data: owner.iter().map(|&o| o == oi).collect(),
            })
            .collect();
        instance.push(masks);
    }
    RenderedScene { frames, instance }
}

/// Pixels covered by a box when rendered alone.
pub fn rasterize_box(bx: &Box3D, k: &CameraIntrinsics) -> Mask {
    let mut m = Mask::new(k.height, k.width);
    for face in Face::ALL {
        if face_visible(bx, face) {
            fill_polygon(&bx.face(face), k, |y, x| m.set(y, x, true));
        }
    }
    m
}

fn face_normal(bx: &Box3D, face: Face) -> Vector3<f64> {
    let (f, l, u) = bx.axes();
    match face {
        Face::Front => f,
        Face::Back => -f,
        Face::Left => l,
        Face::Right => -l,
        Face::Top => u,
        Face::Bottom => -u,
    }
}

/// Whether the face points toward the camera origin.
pub fn face_visible(bx: &Box3D, face: Face) -> bool {
    let q = bx.face(face);
    let c = (q[0] + q[1] + q[2] + q[3]) / 4.0;
    face_normal(bx, face).dot(&(-c)) > 0.0
}

fn render_background(spec: &SceneSpec, f: usize, out: &mut [f64]) {
    let (h, w) = (spec.height, spec.width);
    let pose = &spec.poses[f];
    let rt = pose.r().transpose();
    let cam = pose.position();
    let ground = GROUND_COLORS.map(|c| c.map(quantize));
    let sky = SKY_COLOR.map(quantize);
    for y in 0..h {
        for x in 0..w {
            let ray = rt * spec.intrinsics.ray(x as f64 + 0.5, y as f64 + 0.5);
            let color = if ray.z < -1e-9 {
                let t = -cam.z / ray.z;
                let hit = cam + ray * t;
                let parity = ((hit.x / CHECKER_SIZE).floor() + (hit.y / CHECKER_SIZE).floor())
                    .rem_euclid(2.0) as usize;
                ground[parity]
            } else {
                sky
            };
            for (c, v) in color.iter().enumerate() {
                out[(c * h + y) * w + x] = *v;
            }
        }
    }
}

/// Clips a polygon to `z >= NEAR_PLANE` (Sutherland-Hodgman).
fn clip_near(poly: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (ina, inb) = (a.z >= NEAR_PLANE, b.z >= NEAR_PLANE);
        if ina {
            out.push(a);
        }
        if ina != inb {
            let t = (NEAR_PLANE - a.z) / (b.z - a.z);
            out.push(a + (b - a) * t);
        }
    }
    out
}

/// Calls `put(y, x)` for every pixel whose center lies inside the projected
/// convex quad.
pub fn fill_polygon(quad: &[Vector3<f64>; 4], k: &CameraIntrinsics, mut put: impl FnMut(usize, usize)) {
    let clipped = clip_near(quad);
    if clipped.len() < 3 {
        return;
    }
    let pts: Vec<Vector2<f64>> = clipped
        .iter()
        .map(|p| Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
        .collect();
    let area: f64 = (0..pts.len())
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
            a.x * b.y - b.x * a.y
        })
        .sum();
    if area.abs() < 1e-12 {
        return;
    }
    let sign = area.signum();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &pts {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let xs = (x0 - 0.5).ceil().max(0.0) as i64;
    let xe = ((x1 - 0.5).floor() as i64).min(k.width as i64 - 1);
    let ys = (y0 - 0.5).ceil().max(0.0) as i64;
    let ye = ((y1 - 0.5).floor() as i64).min(k.height as i64 - 1);
    for y in ys..=ye {
        for x in xs..=xe {
            let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            if point_in_convex(&pts, &p, sign) {
                put(y as usize, x as usize);
            }
        }
    }
}

/// Inside test against a convex polygon with orientation `sign`.
pub fn point_in_convex(pts: &[Vector2<f64>], p: &Vector2<f64>, sign: f64) -> bool {
    (0..pts.len()).all(|i| {
        let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
        let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        cross * sign >= 0.0
    })
}

/// Clip-extraction rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClipRules {
    pub clip_len: usize,
    pub radius: f64,
    /// Minimum instance-mask area (px) in every frame.
    pub min_area: usize,
}

impl Default for ClipRules {
    fn default() -> Self {
        Self {
            clip_len: 6,
            radius: DEFAULT_RADIUS,
            min_area: 24,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Inpaint,
}

/// One line of `clips.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub scene_id: String,
    pub object_id: Option<usize>,
    pub start: usize,
    pub len: usize,
    pub ref_index: usize,
    pub split: Split,
    /// Inpainting clips only: `[x0, y0, x1, y1]` pixel window (exclusive end).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inpaint_rect: Option<[usize; 4]>,
}

/// Whether `obj` qualifies for clip membership in frame `f`.
fn frame_qualifies(spec: &SceneSpec, r: &RenderedScene, oi: usize, f: usize, rules: &ClipRules) -> bool {
    let bx = spec.objects[oi].boxes.get(f);
    if bx.center().norm() > rules.radius {
        return false;
    }
    let k = &spec.intrinsics;
    for i in 0..8 {
        let v = bx.vertex(i);
        if v.z <= NEAR_PLANE {
            return false;
        }
        let (u, vv) = (k.fx * v.x / v.z + k.cx, k.fy * v.y / v.z + k.cy);
        if u < 0.0 || vv < 0.0 || u > k.width as f64 || vv > k.height as f64 {
            return false;
        }
    }
    let inst = &r.instance[f][oi];
    inst.count() >= rules.min_area && *inst == rasterize_box(bx, k)
}

/// Non-overlapping `clip_len` windows over each object's qualifying runs.
pub fn extract_clips(
    spec: &SceneSpec,
    rendered: &RenderedScene,
    rules: &ClipRules,
    rng: &mut impl Rng,
) -> Vec<ClipRecord> {
    assert!(rules.clip_len >= 2, "clip length must be at least 2");
    let n = rules.clip_len;
    let mut out = Vec::new();
    for (oi, obj) in spec.objects.iter().enumerate() {
        let mut run_start = None;
        for f in 0..=spec.num_frames {
            let ok = f < spec.num_frames && frame_qualifies(spec, rendered, oi, f, rules);
            match (ok, run_start) {
                (true, None) => run_start = Some(f),
                (false, Some(s)) => {
                    let mut start = s;
                    while start + n <= f {
                        out.push(ClipRecord {
                            clip_id: format!("{}-o{}-f{:04}", spec.id, obj.id, start),
                            scene_id: spec.id.clone(),
                            object_id: Some(obj.id),
                            start,
                            len: n,
                            ref_index: rng.random_range(0..n),
                            split: Split::Train,
                            inpaint_rect: None,
                        });
                        start += n;
                    }
                    run_start = None;
                }
                _ => {}
            }
        }
    }
    out
}

/// RGBA crop `[4, h, w]` with alpha from the instance mask.
pub fn object_crop(frame: &Tensor, inst: &Mask, rect: &Rect2D) -> Tensor {
    let (x0, y0, x1, y1) = rect.pixel_bounds();
    let (x1, y1) = (x1.min(inst.width).max(x0 + 1), y1.min(inst.height).max(y0 + 1));
    let rgb = crop(frame, x0, y0, x1, y1);
    let (ch, cw) = (y1 - y0, x1 - x0);
    let mut data = rgb.into_data();
    for y in 0..ch {
        for x in 0..cw {
            data.push(if inst.get(y0 + y, x0 + x) { 1.0 } else { 0.0 });
        }
    }
    Tensor::from_vec(&[4, ch, cw], data).expect("crop shape")
}

/// Training/editing record with all derived signals materialised.
#[derive(Debug, Clone)]
pub struct VideoClip {
    pub clip_id: String,
    pub scene_id: String,
    pub object_id: Option<usize>,
    pub start: usize,
    pub intrinsics: CameraIntrinsics,
    pub poses: Vec<CameraPose>,
    /// `[N, 3, H, W]`
    pub video: Tensor,
    /// `[N, 3, H, W]`
    pub masked: Tensor,
    /// Binary `[N, 1, H, W]`
    pub mask: Tensor,
    pub boxes: Option<BoxTrajectory>,
    /// `[4, h, w]` RGBA crop
    pub reference: Option<Tensor>,
    pub ref_index: usize,
    pub elevations: Vec<f64>,
    pub azimuths: Vec<f64>,
    pub is_inpainting: bool,
    /// Per-frame instance masks of the clip's object (all-false for inpainting).
    pub instance: Vec<Mask>,
    pub category: Option<Category>,
}

impl VideoClip {
    pub fn len(&self) -> usize {
        self.video.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.video.dim(2)
    }

    pub fn width(&self) -> usize {
        self.video.dim(3)
    }

    pub fn ref_view(&self) -> ViewAngles {
        ViewAngles {
            elevation: self.elevations[self.ref_index],
            azimuth: self.azimuths[self.ref_index],
        }
    }

    /// Sets a new reference frame and re-crops the reference image.
    pub fn set_ref_index(&mut self, r: usize) -> Result<()> {
        self.ref_index = r;
        if let Some(b) = &self.boxes {
            let rect = project_box_rect(b.get(r), &self.intrinsics)?;
            self.reference = Some(object_crop(&frame_of(&self.video, r), &self.instance[r], &rect));
        }
        Ok(())
    }
}

pub fn frame_of(video: &Tensor, i: usize) -> Tensor {
    let s = video.shape();
    Tensor::from_vec(&s[1..], video.slice_axis(0, i, 1).into_data()).expect("frame")
}

/// Stacks per-frame masks into a binary `[N, 1, H, W]` tensor.
pub fn masks_to_tensor(masks: &[Mask]) -> Tensor {
    let (h, w) = (masks[0].height, masks[0].width);
    let data = masks
        .iter()
        .flat_map(|m| m.data.iter().map(|&b| if b { 1.0 } else { 0.0 }))
        .collect();
    Tensor::from_vec(&[masks.len(), 1, h, w], data).expect("mask stack")
}

/// `V (1 - M) + fill M`.
pub fn apply_mask(video: &Tensor, mask: &Tensor, fill: f64) -> Tensor {
    let (n, c, h, w) = (video.dim(0), video.dim(1), video.dim(2), video.dim(3));
    let mut out = video.clone();
    let md = mask.data();
    let od = out.data_mut();
    for f in 0..n {
        for ch in 0..c {
            for i in 0..h * w {
                if md[f * h * w + i] > 0.5 {
                    od[((f * c + ch) * h * w) + i] = fill;
                }
            }
        }
    }
    out
}

/// Pushes each side of `rect` outward by up to `MASK_JITTER` of its extent.
pub fn jitter_rect(rect: &Rect2D, rng: &mut impl Rng) -> Rect2D {
    let (w, h) = (rect.width(), rect.height());
    Rect2D {
        u_min: rect.u_min - rng.random_range(0.0..=MASK_JITTER) * w,
        v_min: rect.v_min - rng.random_range(0.0..=MASK_JITTER) * h,
        u_max: rect.u_max + rng.random_range(0.0..=MASK_JITTER) * w,
        v_max: rect.v_max + rng.random_range(0.0..=MASK_JITTER) * h,
    }
}

/// Box-derived masks and the masked video. With `jitter`, mask rects are
/// randomly enlarged (never shrunk, so object coverage is preserved).
pub fn make_masked_video(
    video: &Tensor,
    boxes: &BoxTrajectory,
    k: &CameraIntrinsics,
    dilation: usize,
    fill: f64,
    mut jitter: Option<&mut ChaCha8Rng>,
) -> Result<(Tensor, Tensor)> {
    let mut masks = Vec::with_capacity(boxes.len());
    for b in boxes.iter() {
        let mut rect = project_box_rect(b, k)?;
        if let Some(rng) = jitter.as_deref_mut() {
            rect = jitter_rect(&rect, rng);
        }
        masks.push(mask_from_rects(&[rect], k.height, k.width, dilation));
    }
    let m = masks_to_tensor(&masks);
    Ok((apply_mask(video, &m, fill), m))
}

/// Loads the `rec` window of a rendered scene into a `VideoClip`.
pub fn materialize_clip(
    spec: &SceneSpec,
    rendered: &RenderedScene,
    rec: &ClipRecord,
    jitter: Option<&mut ChaCha8Rng>,
) -> Result<VideoClip> {
    let (n, s) = (rec.len, rec.start);
    if s + n > spec.num_frames {
        return Err(Error::validation("clip", "window exceeds scene length"));
    }
    let (h, w) = (spec.height, spec.width);
    let video = Tensor::from_vec(
        &[n, 3, h, w],
        rendered.frames.slice_axis(0, s, n).into_data(),
    )?;
    let poses = spec.poses[s..s + n].to_vec();
    let k = spec.intrinsics;
    if let Some(rect) = rec.inpaint_rect {
        let mut m = Mask::new(h, w);
        m.fill_rect(rect[0], rect[1], rect[2], rect[3]);
        let mask = masks_to_tensor(&vec![m; n]);
        return Ok(VideoClip {
            clip_id: rec.clip_id.clone(),
            scene_id: spec.id.clone(),
            object_id: None,
            start: s,
            intrinsics: k,
            poses,
            masked: apply_mask(&video, &mask, MASK_FILL),
            video,
            mask,
            boxes: None,
            reference: None,
            ref_index: rec.ref_index,
            elevations: vec![0.0; n],
            azimuths: vec![0.0; n],
            is_inpainting: true,
            instance: vec![Mask::new(h, w); n],
            category: None,
        });
    }
    let oid = rec
        .object_id
        .ok_or_else(|| Error::validation("object_id", "object clip without object"))?;
    let oi = spec
        .objects
        .iter()
        .position(|o| o.id == oid)
        .ok_or_else(|| Error::UnknownObject(oid.to_string()))?;
    let obj = &spec.objects[oi];
    let boxes = BoxTrajectory::new(obj.boxes.boxes()[s..s + n].to_vec());
    let (masked, mask) = make_masked_video(&video, &boxes, &k, DEFAULT_MASK_DILATION, MASK_FILL, jitter)?;
    let mut elevations = Vec::with_capacity(n);
    let mut azimuths = Vec::with_capacity(n);
    for (b, p) in boxes.iter().zip(&poses) {
        let a = compute_view_angles(b, p)?;
        elevations.push(a.elevation);
        azimuths.push(a.azimuth);
    }
    let instance: Vec<Mask> = (s..s + n).map(|f| rendered.instance[f][oi].clone()).collect();
    let mut clip = VideoClip {
        clip_id: rec.clip_id.clone(),
        scene_id: spec.id.clone(),
        object_id: Some(oid),
        start: s,
        intrinsics: k,
        poses,
        video,
        masked,
        mask,
        boxes: Some(boxes),
        reference: None,
        ref_index: rec.ref_index,
        elevations,
        azimuths,
        is_inpainting: false,
        instance,
        category: Some(obj.category),
    };
    clip.set_ref_index(rec.ref_index)?;
    Ok(clip)
}

/// Random object-free window of `clip_len` frames with a fixed rect mask.
pub fn make_inpainting_clip(
    spec: &SceneSpec,
    rendered: &RenderedScene,
    clip_len: usize,
    rng: &mut impl Rng,
) -> Result<ClipRecord> {
    let (h, w) = (spec.height, spec.width);
    if spec.num_frames < clip_len {
        return Err(Error::Config("scene shorter than clip length".into()));
    }
    let (mw_lo, mw_hi) = ((w / 8).max(1), (w / 4).max(2));
    let (mh_lo, mh_hi) = ((h / 6).max(1), (h / 3).max(2));
    for _ in 0..INPAINT_ATTEMPTS {
        let start = rng.random_range(0..=spec.num_frames - clip_len);
        let mw = rng.random_range(mw_lo..mw_hi);
        let mh = rng.random_range(mh_lo..mh_hi);
        let x0 = rng.random_range(0..=w - mw);
        let y0 = rng.random_range(0..=h - mh);
        let mut m = Mask::new(h, w);
        m.fill_rect(x0, y0, x0 + mw, y0 + mh);
        let free = (start..start + clip_len)
            .all(|f| rendered.instance[f].iter().all(|inst| !inst.intersects(&m)));
        if free {
            return Ok(ClipRecord {
                clip_id: format!("{}-inpaint-f{:04}-{x0}-{y0}", spec.id, start),
                scene_id: spec.id.clone(),
                object_id: None,
                start,
                len: clip_len,
                ref_index: rng.random_range(0..clip_len),
                split: Split::Inpaint,
                inpaint_rect: Some([x0, y0, x0 + mw, y0 + mh]),
            });
        }
    }
    Err(Error::NoFreeRegion(INPAINT_ATTEMPTS))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectBankEntry {
    pub id: String,
    pub clip_id: String,
    pub frame: usize,
    pub category: Category,
    pub view: ViewAngles,
    pub distance: f64,
    /// `[4, h, w]` RGBA crop, not serialised.
    #[serde(skip)]
    pub crop: Option<Tensor>,
}

/// One entry per clip frame.
pub fn build_object_bank(clips: &[VideoClip]) -> Vec<ObjectBankEntry> {
    let mut out = Vec::new();
    for c in clips.iter().filter(|c| !c.is_inpainting) {
        let boxes = c.boxes.as_ref().expect("object clip has boxes");
        for f in 0..c.len() {
            let b = boxes.get(f);
            let Ok(rect) = project_box_rect(b, &c.intrinsics) else {
                continue;
            };
            out.push(ObjectBankEntry {
                id: format!("{}:{f}", c.clip_id),
                clip_id: c.clip_id.clone(),
                frame: f,
                category: c.category.expect("object clip has a category"),
                view: ViewAngles {
                    elevation: c.elevations[f],
                    azimuth: c.azimuths[f],
                },
                distance: b.center().norm(),
                crop: Some(object_crop(&frame_of(&c.video, f), &c.instance[f], &rect)),
            });
        }
    }
    out
}

/// Dataset-generation configuration (`gen-data --config`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub scene: SceneGenConfig,
    pub rules: ClipRules,
    pub train_clips: usize,
    pub inpaint_clips: usize,
    pub val_clips: usize,
    pub max_scenes: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            scene: SceneGenConfig::default(),
            rules: ClipRules::default(),
            train_clips: 512,
            inpaint_clips: 96,
            val_clips: 64,
            max_scenes: 5000,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.scene;
        if s.height == 0 || s.width == 0 || !s.height.is_multiple_of(16) || !s.width.is_multiple_of(16) {
            return Err(Error::validation("scene.height/width", "must be positive multiples of 16"));
        }
        if self.rules.clip_len < 2 || self.rules.clip_len > s.num_frames {
            return Err(Error::validation("rules.clip_len", "must be in 2..=scene.num_frames"));
        }
        if s.min_vehicles > s.max_vehicles {
            return Err(Error::validation("scene.min_vehicles", "exceeds max_vehicles"));
        }
        Ok(())
    }
}

/// Every 5th scene feeds the validation split so val scenes never overlap
/// training scenes.
fn is_val_scene(index: u64) -> bool {
    index % 5 == 4
}

/// Generates scenes until every split count is met exactly.
pub fn generate_dataset(cfg: &DatasetConfig, seed: u64) -> Result<(Vec<SceneSpec>, Vec<ClipRecord>)> {
    cfg.validate()?;
    let mut scenes = Vec::new();
    let mut records = Vec::new();
    let (mut n_train, mut n_val, mut n_inp) = (0, 0, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c11b);
    for index in 0..cfg.max_scenes as u64 {
        if n_train >= cfg.train_clips && n_val >= cfg.val_clips && n_inp >= cfg.inpaint_clips {
            break;
        }
        let spec = sample_scene(&cfg.scene, seed, index)?;
        let rendered = render_scene(&spec);
        let val = is_val_scene(index);
        let mut used = false;
        for mut rec in extract_clips(&spec, &rendered, &cfg.rules, &mut rng) {
            if val && n_val < cfg.val_clips {
                rec.split = Split::Val;
                n_val += 1;
            } else if !val && n_train < cfg.train_clips {
                n_train += 1;
            } else {
                continue;
            }
            records.push(rec);
            used = true;
        }
        if !val && n_inp < cfg.inpaint_clips {
            if let Ok(rec) = make_inpainting_clip(&spec, &rendered, cfg.rules.clip_len, &mut rng) {
                records.push(rec);
                n_inp += 1;
                used = true;
            }
        }
        if used {
            scenes.push(spec);
        }
    }
    if n_train < cfg.train_clips || n_val < cfg.val_clips || n_inp < cfg.inpaint_clips {
        return Err(Error::Config(format!(
            "only {n_train}/{n_val}/{n_inp} train/val/inpaint clips after {} scenes",
            cfg.max_scenes
        )));
    }
    Ok((scenes, records))
}

/// On-disk dataset: `scenes/<id>/{meta.json,frames/<i>.png}` and `clips.jsonl`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub scenes: BTreeMap<String, SceneSpec>,
    pub clips: Vec<ClipRecord>,
}

impl Dataset {
    pub fn write(root: &Path, scenes: &[SceneSpec], clips: &[ClipRecord]) -> Result<()> {
        for s in scenes {
            write_scene(root, s)?;
        }
        let mut f = fs::File::create(root.join("clips.jsonl"))?;
        for c in clips {
            writeln!(f, "{}", serde_json::to_string(c)?)?;
        }
        Ok(())
    }

    pub fn open(root: &Path) -> Result<Self> {
        let mut scenes = BTreeMap::new();
        let sdir = root.join("scenes");
        if sdir.is_dir() {
            let mut entries: Vec<_> = fs::read_dir(&sdir)?.collect::<std::io::Result<_>>()?;
            entries.sort_by_key(|e| e.file_name());
            for e in entries {
                let meta = e.path().join("meta.json");
                if meta.is_file() {
                    let spec: SceneSpec = serde_json::from_reader(BufReader::new(fs::File::open(meta)?))?;
                    scenes.insert(spec.id.clone(), spec);
                }
            }
        }
        let mut clips = Vec::new();
        let cpath = root.join("clips.jsonl");
        if cpath.is_file() {
            for line in BufReader::new(fs::File::open(cpath)?).lines() {
                let line = line?;
                if !line.trim().is_empty() {
                    clips.push(serde_json::from_str(&line)?);
                }
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            scenes,
            clips,
        })
    }

    pub fn scene(&self, id: &str) -> Result<&SceneSpec> {
        self.scenes.get(id).ok_or_else(|| Error::UnknownScene(id.to_string()))
    }

    pub fn frame_path(&self, scene: &str, i: usize) -> PathBuf {
        self.root.join("scenes").join(scene).join("frames").join(format!("{i}.png"))
    }

    /// Materialises every clip of `split`, rendering each scene once.
    pub fn load_clips(&self, split: Split) -> Result<Vec<VideoClip>> {
        let mut cache: BTreeMap<&str, RenderedScene> = BTreeMap::new();
        let mut out = Vec::new();
        for rec in self.clips.iter().filter(|c| c.split == split) {
            let spec = self.scene(&rec.scene_id)?;
            let rendered = cache
                .entry(rec.scene_id.as_str())
                .or_insert_with(|| render_scene(spec));
            out.push(materialize_clip(spec, rendered, rec, None)?);
        }
        Ok(out)
    }
}

pub fn write_scene(root: &Path, spec: &SceneSpec) -> Result<()> {
    let dir = root.join("scenes").join(&spec.id);
    fs::create_dir_all(dir.join("frames"))?;
    fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(spec)?)?;
    let r = render_scene(spec);
    for i in 0..spec.num_frames {
        write_rgb_png(&dir.join("frames").join(format!("{i}.png")), &r.frame(i))?;
    }
    Ok(())
}

/// Reads a frame from disk.
pub fn read_frame(root: &Path, scene: &str, i: usize) -> Result<Tensor> {
    read_rgb_png(&root.join("scenes").join(scene).join("frames").join(format!("{i}.png")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SceneGenConfig {
        SceneGenConfig {
            height: 32,
            width: 64,
            num_frames: 12,
            ..SceneGenConfig::default()
        }
    }

    fn one_object_scene(frames: usize, x: impl Fn(usize) -> f64) -> SceneSpec {
        let k = CameraIntrinsics::centered(64, 32, 0.5);
        let poses = vec![CameraPose::level([0.0, 0.0, 1.5], 0.0); frames];
        let traj = (0..frames)
            .map(|f| GroundPose { x: x(f), y: 0.5, heading: 0.3 })
            .collect();
        SceneSpec::new("t", 0, k, poses, vec![(Category::Car, [4.5, 1.9, 1.6], PALETTE[0], traj)]).unwrap()
    }

    #[test]
    fn empty_scene_is_background_only() {
        let k = CameraIntrinsics::centered(64, 32, 0.5);
        let spec = SceneSpec::new("e", 0, k, vec![CameraPose::level([0.0; 3], 0.0); 2], vec![]).unwrap();
        let r = render_scene(&spec);
        assert!(r.instance.iter().all(|f| f.is_empty()));
        let sky = quantize(SKY_COLOR[0]);
        assert_eq!(r.frames.data()[0], sky);
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = sample_scene(&small_cfg(), 3, 1).unwrap();
        let b = sample_scene(&small_cfg(), 3, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(render_scene(&a), render_scene(&b));
    }

    #[test]
    fn instance_mask_matches_point_in_quad_oracle() {
        let spec = one_object_scene(1, |_| 9.0);
        let r = render_scene(&spec);
        let bx = spec.objects[0].boxes.get(0);
        let k = spec.intrinsics;
        let mut oracle = Mask::new(32, 64);
        for face in Face::ALL {
            let pts: Vec<Vector2<f64>> = bx
                .face(face)
                .iter()
                .map(|p| Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
                .collect();
            let a: f64 = (0..4).map(|i| pts[i].x * pts[(i + 1) % 4].y - pts[(i + 1) % 4].x * pts[i].y).sum();
            for y in 0..32 {
                for x in 0..64 {
                    let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                    if a.abs() > 1e-12 && point_in_convex(&pts, &p, a.signum()) {
                        oracle.set(y, x, true);
                    }
                }
            }
        }
        assert!(oracle.count() > 50);
        assert_eq!(r.instance[0][0], oracle);
    }

    #[test]
    fn far_objects_yield_no_clips() {
        let spec = one_object_scene(12, |_| 25.0);
        let r = render_scene(&spec);
        let rules = ClipRules { clip_len: 4, ..ClipRules::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(extract_clips(&spec, &r, &rules, &mut rng).is_empty());
    }

    #[test]
    fn window_enumeration() {
        let rules = ClipRules { clip_len: 4, ..ClipRules::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // inside for frames 0..4 only
        let spec = one_object_scene(10, |f| if f < 4 { 9.0 } else { 30.0 });
        let clips = extract_clips(&spec, &render_scene(&spec), &rules, &mut rng);
        assert_eq!(clips.len(), 1);
        // inside for frames 0..8 -> two disjoint windows
        let spec = one_object_scene(10, |f| if f < 8 { 9.0 } else { 30.0 });
        let clips = extract_clips(&spec, &render_scene(&spec), &rules, &mut rng);
        assert_eq!(clips.len(), 2);
        assert_eq!((clips[0].start, clips[1].start), (0, 4));
        assert!(clips.iter().all(|c| c.ref_index < 4));
    }

    #[test]
    fn masked_video_contract() {
        let spec = one_object_scene(4, |f| 9.0 + f as f64 * 0.3);
        let r = render_scene(&spec);
        let rec = ClipRecord {
            clip_id: "c".into(),
            scene_id: "t".into(),
            object_id: Some(0),
            start: 0,
            len: 4,
            ref_index: 1,
            split: Split::Train,
            inpaint_rect: None,
        };
        let clip = materialize_clip(&spec, &r, &rec, None).unwrap();
        let boxes = clip.boxes.clone().unwrap();
        // no dilation, no jitter -> exactly the rect footprint
        let (vm, m) = make_masked_video(&clip.video, &boxes, &spec.intrinsics, 0, MASK_FILL, None).unwrap();
        for f in 0..4 {
            let rect = project_box_rect(boxes.get(f), &spec.intrinsics).unwrap();
            let want = mask_from_rects(&[rect], 32, 64, 0);
            let got: Vec<bool> = m.slice_axis(0, f, 1).data().iter().map(|&v| v > 0.5).collect();
            assert_eq!(got, want.data);
        }
        for (i, &mv) in m.data().iter().enumerate() {
            if mv > 0.5 {
                let (f, p) = (i / (32 * 64), i % (32 * 64));
                for ch in 0..3 {
                    assert_eq!(vm.data()[(f * 3 + ch) * 32 * 64 + p], MASK_FILL);
                }
            }
        }
        // jittered masks still cover the object
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let (_, m) = make_masked_video(&clip.video, &boxes, &spec.intrinsics, 0, MASK_FILL, Some(&mut rng)).unwrap();
            for f in 0..4 {
                let mm = Mask {
                    height: 32,
                    width: 64,
                    data: m.slice_axis(0, f, 1).data().iter().map(|&v| v > 0.5).collect(),
                };
                assert!(mm.contains(&clip.instance[f]));
            }
        }
        // stored angles match a recomputation
        for f in 0..4 {
            let a = compute_view_angles(boxes.get(f), &clip.poses[f]).unwrap();
            assert!((a.azimuth - clip.azimuths[f]).abs() < 1e-9);
        }
        // reference crop placement round-trips to the projected rect
        let rect = project_box_rect(boxes.get(1), &spec.intrinsics).unwrap();
        let (x0, y0, x1, y1) = rect.pixel_bounds();
        let refimg = clip.reference.as_ref().unwrap();
        assert_eq!((refimg.dim(1), refimg.dim(2)), (y1 - y0, x1 - x0));
    }

    #[test]
    fn inpainting_clip_placement() {
        let k = CameraIntrinsics::centered(64, 32, 0.5);
        let empty = SceneSpec::new("e", 0, k, vec![CameraPose::level([0.0, 0.0, 1.5], 0.0); 6], vec![]).unwrap();
        let r = render_scene(&empty);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            make_inpainting_clip(&empty, &r, 4, &mut rng).unwrap();
        }
        // frame fully covered by an object instance
        let mut full = r.clone();
        for f in &mut full.instance {
            f.push(Mask {
                height: 32,
                width: 64,
                data: vec![true; 32 * 64],
            });
        }
        assert!(matches!(
            make_inpainting_clip(&empty, &full, 4, &mut rng),
            Err(Error::NoFreeRegion(100))
        ));
        let spec = sample_scene(&small_cfg(), 5, 0).unwrap();
        let r = render_scene(&spec);
        if let Ok(rec) = make_inpainting_clip(&spec, &r, 4, &mut rng) {
            let [x0, y0, x1, y1] = rec.inpaint_rect.unwrap();
            let mut m = Mask::new(32, 64);
            m.fill_rect(x0, y0, x1, y1);
            for f in rec.start..rec.start + 4 {
                assert!(r.instance[f].iter().all(|i| !i.intersects(&m)));
            }
        }
    }

    #[test]
    fn bank_size_and_distance() {
        let spec = one_object_scene(4, |f| 9.0 + f as f64 * 0.3);
        let r = render_scene(&spec);
        let rec = ClipRecord {
            clip_id: "c".into(),
            scene_id: "t".into(),
            object_id: Some(0),
            start: 0,
            len: 4,
            ref_index: 0,
            split: Split::Train,
            inpaint_rect: None,
        };
        let clip = materialize_clip(&spec, &r, &rec, None).unwrap();
        let bank = build_object_bank(&[clip.clone(), clip.clone()]);
        assert_eq!(bank.len(), 8);
        for e in &bank[..4] {
            let c = clip.boxes.as_ref().unwrap().get(e.frame).center().norm();
            assert_eq!(e.distance, c);
        }
    }

    #[test]
    fn dataset_counts_and_roundtrip() {
        let cfg = DatasetConfig {
            scene: small_cfg(),
            rules: ClipRules { clip_len: 4, ..ClipRules::default() },
            train_clips: 6,
            inpaint_clips: 2,
            val_clips: 2,
            max_scenes: 200,
        };
        let (scenes, clips) = generate_dataset(&cfg, 7).unwrap();
        let count = |s: Split| clips.iter().filter(|c| c.split == s).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Inpaint)), (6, 2, 2));
        let dir = tempfile::tempdir().unwrap();
        Dataset::write(dir.path(), &scenes, &clips).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.clips, clips);
        let s0 = &scenes[0];
        assert_eq!(ds.scene(&s0.id).unwrap(), s0);
        let f0 = read_frame(dir.path(), &s0.id, 0).unwrap();
        assert_eq!(f0, render_scene(s0).frame(0));
        assert_eq!(ds.load_clips(Split::Val).unwrap().len(), 2);
    }
}
