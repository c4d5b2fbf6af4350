//! Camera mathematics: pinhole projection with depth retention, box faces,
//! depth-aware pose images, viewpoint angles and 2D regions derived from
//! 3D boxes.
//!
//! Conventions:
//! - Camera coordinates: x right, y down, z forward (meters).
//! - World coordinates: z up; the ground is the plane z = 0.
//! - Box vertices: bottom face 0-3 counter-clockwise seen from above
//!   (rear-right, front-right, front-left, rear-left), top face 4-7 directly
//!   above them. Edge 0->1 points along the heading.
//! - Yaw (camera frame): heading `(cos yaw, 0, sin yaw)` in camera
//!   coordinates, i.e. measured in the camera's ground plane from the right
//!   axis toward the optical axis.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid side count used per face when rendering pose images.
pub const DEFAULT_FACE_GRID: usize = 48;
/// Depth (m) mapped to 1.0 in pose images.
pub const DEFAULT_MAX_DEPTH: f64 = 60.0;
/// Margin (px) added around projected rectangles when building masks.
pub const DEFAULT_MASK_DILATION: usize = 4;

const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    /// Centered pinhole with horizontal focal length `focal_ratio * width`.
    pub fn centered(width: usize, height: usize, focal_ratio: f64) -> Self {
        let f = focal_ratio * width as f64;
        Self {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::validation("intrinsics.f", "focal lengths must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(Error::validation("intrinsics.cx", "principal point outside image"));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::validation("intrinsics.cy", "principal point outside image"));
        }
        Ok(())
    }

    /// Ray direction (camera coordinates, not normalised) through pixel (u, v).
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// World-to-camera rigid transform: `p_cam = R * p_world + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl CameraPose {
    /// Level camera at `position` (world) looking along world heading `yaw`.
    pub fn level(position: [f64; 3], yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        // Rows are the camera axes expressed in world coordinates.
        let right = Vector3::new(s, -c, 0.0);
        let down = Vector3::new(0.0, 0.0, -1.0);
        let fwd = Vector3::new(c, s, 0.0);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
        let t = -(r * Vector3::from(position));
        Self::from_parts(&r, &t)
    }

    pub fn from_parts(r: &Matrix3<f64>, t: &Vector3<f64>) -> Self {
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, e) in row.iter_mut().enumerate() {
                *e = r[(i, j)];
            }
        }
        Self {
            rotation,
            translation: [t.x, t.y, t.z],
        }
    }

    pub fn r(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.rotation[i][j])
    }

    pub fn t(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    pub fn position(&self) -> Vector3<f64> {
        -(self.r().transpose() * self.t())
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.r() * p + self.t()
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.r().transpose() * (p - self.t())
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.r();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > 1e-6 {
            return Err(Error::validation("pose.rotation", "rotation is not orthonormal"));
        }
        if (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::validation("pose.rotation", "rotation determinant is not +1"));
        }
        Ok(())
    }
}

/// The six box faces, in pose-image channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    Front,
    Back,
    Left,
    Right,
    Top,
    Bottom,
}

impl Face {
    pub const ALL: [Face; 6] = [
        Face::Front,
        Face::Back,
        Face::Left,
        Face::Right,
        Face::Top,
        Face::Bottom,
    ];

    /// Vertex indices of the face, as a cyclic quad.
    pub fn vertex_indices(self) -> [usize; 4] {
        match self {
            Face::Front => [1, 2, 6, 5],
            Face::Back => [0, 3, 7, 4],
            Face::Left => [2, 3, 7, 6],
            Face::Right => [0, 1, 5, 4],
            Face::Top => [4, 5, 6, 7],
            Face::Bottom => [0, 1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub vertices: [[f64; 3]; 8],
    pub yaw: f64,
}

impl Box3D {
    /// Box of `size = [length, width, height]` centred at `center` (camera
    /// coordinates) with its vertical axis along the camera's up direction.
    pub fn from_center_size_yaw(center: [f64; 3], size: [f64; 3], yaw: f64) -> Self {
        let c = Vector3::from(center);
        let fwd = Vector3::new(yaw.cos(), 0.0, yaw.sin());
        let left = Vector3::new(-yaw.sin(), 0.0, yaw.cos());
        let up = Vector3::new(0.0, -1.0, 0.0);
        Self::from_frame(&c, &fwd, &left, &up, size, yaw)
    }

    /// Box built from an orthonormal object frame given in any coordinates.
    pub fn from_frame(
        center: &Vector3<f64>,
        fwd: &Vector3<f64>,
        left: &Vector3<f64>,
        up: &Vector3<f64>,
        size: [f64; 3],
        yaw: f64,
    ) -> Self {
        let (hl, hw, hh) = (size[0] / 2.0, size[1] / 2.0, size[2] / 2.0);
        let signs = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
        let mut vertices = [[0.0; 3]; 8];
        for (i, (sf, sl)) in signs.iter().enumerate() {
            let base = center + fwd * (sf * hl) + left * (sl * hw);
            let lo = base - up * hh;
            let hi = base + up * hh;
            vertices[i] = [lo.x, lo.y, lo.z];
            vertices[i + 4] = [hi.x, hi.y, hi.z];
        }
        Self { vertices, yaw }
    }

    pub fn vertex(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.vertices[i])
    }

    pub fn center(&self) -> Vector3<f64> {
        let mut c = Vector3::zeros();
        for i in 0..8 {
            c += self.vertex(i);
        }
        c / 8.0
    }

    pub fn face(&self, face: Face) -> [Vector3<f64>; 4] {
        face.vertex_indices().map(|i| self.vertex(i))
    }

    /// Unit heading, left and up axes derived from the vertices.
    pub fn axes(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let fwd = (self.vertex(1) - self.vertex(0)).normalize();
        let up = (self.vertex(4) - self.vertex(0)).normalize();
        let left = up.cross(&fwd);
        (fwd, left, up)
    }

    /// `[length, width, height]` measured from the vertices.
    pub fn size(&self) -> [f64; 3] {
        [
            (self.vertex(1) - self.vertex(0)).norm(),
            (self.vertex(3) - self.vertex(0)).norm(),
            (self.vertex(4) - self.vertex(0)).norm(),
        ]
    }

    pub fn translated(&self, delta: &Vector3<f64>) -> Self {
        let mut out = *self;
        for v in &mut out.vertices {
            v[0] += delta.x;
            v[1] += delta.y;
            v[2] += delta.z;
        }
        out
    }

    /// Rotates the box about its own vertical axis through its center.
    pub fn rotated_about_up(&self, angle: f64) -> Self {
        let (fwd, left, up) = self.axes();
        let (s, c) = angle.sin_cos();
        let nf = fwd * c + left * s;
        let nl = up.cross(&nf);
        Self::from_frame(&self.center(), &nf, &nl, &up, self.size(), self.yaw + angle)
    }

    pub fn to_world(&self, pose: &CameraPose) -> Self {
        let mut out = *self;
        for v in &mut out.vertices {
            let w = pose.camera_to_world(&Vector3::from(*v));
            *v = [w.x, w.y, w.z];
        }
        out
    }

    pub fn to_camera(&self, pose: &CameraPose) -> Self {
        let mut out = *self;
        for v in &mut out.vertices {
            let c = pose.world_to_camera(&Vector3::from(*v));
            *v = [c.x, c.y, c.z];
        }
        out
    }

    /// Heading angle in the world ground plane (CCW from world +x).
    pub fn world_heading(&self, pose: &CameraPose) -> f64 {
        let (fwd, _, _) = self.axes();
        let f = pose.r().transpose() * fwd;
        f.y.atan2(f.x)
    }

    pub fn validate(&self) -> Result<()> {
        let offset = self.vertex(4) - self.vertex(0);
        for i in 1..4 {
            let d = self.vertex(i + 4) - self.vertex(i) - offset;
            if d.norm() > 1e-5 * offset.norm().max(1.0) {
                return Err(Error::validation(
                    "vertices",
                    "top face is not a translate of the bottom face",
                ));
            }
        }
        for face in Face::ALL {
            let q = self.face(face);
            let e0 = q[1] - q[0];
            let e2 = q[2] - q[3];
            let e1 = q[2] - q[1];
            let e3 = q[3] - q[0];
            let tol = |a: &Vector3<f64>| 1e-5 * a.norm().max(1.0);
            if (e0 - e2).norm() > tol(&e0) || (e1 - e3).norm() > tol(&e1) {
                return Err(Error::validation("vertices", "box face is not a parallelogram"));
            }
        }
        if self.vertices.iter().flatten().any(|v| !v.is_finite()) || !self.yaw.is_finite() {
            return Err(Error::validation("vertices", "non-finite coordinate"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub frame: usize,
    pub vertices: [[f64; 3]; 8],
    pub yaw: f64,
}

/// Per-frame boxes over frames `0..N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<TrajectoryEntry>", into = "Vec<TrajectoryEntry>")]
pub struct BoxTrajectory {
    boxes: Vec<Box3D>,
}

impl BoxTrajectory {
    pub fn new(boxes: Vec<Box3D>) -> Self {
        Self { boxes }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn get(&self, frame: usize) -> &Box3D {
        &self.boxes[frame]
    }

    pub fn boxes(&self) -> &[Box3D] {
        &self.boxes
    }

    pub fn iter(&self) -> impl Iterator<Item = &Box3D> {
        self.boxes.iter()
    }

    pub fn map(&self, f: impl Fn(usize, &Box3D) -> Box3D) -> Self {
        Self {
            boxes: self.boxes.iter().enumerate().map(|(i, b)| f(i, b)).collect(),
        }
    }
}

impl TryFrom<Vec<TrajectoryEntry>> for BoxTrajectory {
    type Error = Error;

    fn try_from(entries: Vec<TrajectoryEntry>) -> Result<Self> {
        let mut boxes = Vec::with_capacity(entries.len());
        for (i, e) in entries.into_iter().enumerate() {
            if e.frame != i {
                return Err(Error::validation(
                    format!("target_boxes[{i}].frame"),
                    format!("expected frame {i}, got {}", e.frame),
                ));
            }
            let b = Box3D {
                vertices: e.vertices,
                yaw: e.yaw,
            };
            b.validate().map_err(|err| {
                Error::validation(format!("target_boxes[{i}].vertices"), err.to_string())
            })?;
            boxes.push(b);
        }
        Ok(Self { boxes })
    }
}

impl From<BoxTrajectory> for Vec<TrajectoryEntry> {
    fn from(t: BoxTrajectory) -> Self {
        t.boxes
            .into_iter()
            .enumerate()
            .map(|(frame, b)| TrajectoryEntry {
                frame,
                vertices: b.vertices,
                yaw: b.yaw,
            })
            .collect()
    }
}

/// Six-channel image of normalised face depths (front, back, left, right,
/// top, bottom); 0 marks background.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl PoseImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; 6 * height * width],
        }
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewAngles {
    pub elevation: f64,
    pub azimuth: f64,
}

/// Axis-aligned pixel rectangle in continuous image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect2D {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl Rect2D {
    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }

    /// Integer pixel bounds `[x0, x1) x [y0, y1)` of every pixel the
    /// rectangle touches.
    pub fn pixel_bounds(&self) -> (usize, usize, usize, usize) {
        let x0 = self.u_min.floor().max(0.0) as usize;
        let y0 = self.v_min.floor().max(0.0) as usize;
        let x1 = self.u_max.ceil().max(0.0) as usize;
        let y1 = self.v_max.ceil().max(0.0) as usize;
        (x0, y0, x1.max(x0), y1.max(y0))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            u_min: self.u_min * factor,
            v_min: self.v_min * factor,
            u_max: self.u_max * factor,
            v_max: self.v_max * factor,
        }
    }

    pub fn corners(&self) -> [[f64; 2]; 4] {
        [
            [self.u_min, self.v_min],
            [self.u_max, self.v_min],
            [self.u_max, self.v_max],
            [self.u_min, self.v_max],
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn union_with(&mut self, other: &Mask) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a |= *b;
        }
    }

    pub fn intersects(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).any(|(a, b)| *a && *b)
    }

    /// True when every set pixel of `other` is also set here.
    pub fn contains(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(a, b)| *a || !*b)
    }

    pub fn fill_rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize) {
        for y in y0.min(self.height)..y1.min(self.height) {
            for x in x0.min(self.width)..x1.min(self.width) {
                self.set(y, x, true);
            }
        }
    }

    /// Tight integer bounding box `(x0, y0, x1, y1)` (exclusive), if nonempty.
    pub fn bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    b = Some(match b {
                        None => (x, y, x + 1, y + 1),
                        Some((a, c, d, e)) => (a.min(x), c.min(y), d.max(x + 1), e.max(y + 1)),
                    });
                }
            }
        }
        b
    }
}

/// Pinhole projection keeping depth: `(fx x/z + cx, fy y/z + cy, z)`.
pub fn project_point(k: &CameraIntrinsics, p: &Vector3<f64>) -> Result<(f64, f64, f64)> {
    if p.z <= MIN_DEPTH {
        return Err(Error::NonPositiveDepth(p.z));
    }
    Ok((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy, p.z))
}

fn bilinear(q: &[Vector3<f64>; 4], s: f64, t: f64) -> Vector3<f64> {
    let w0 = (1.0 - s) * (1.0 - t);
    let w1 = s * (1.0 - t);
    let w2 = s * t;
    let w3 = (1.0 - s) * t;
    Vector3::new(
        w0 * q[0].x + w1 * q[1].x + w2 * q[2].x + w3 * q[3].x,
        w0 * q[0].y + w1 * q[1].y + w2 * q[2].y + w3 * q[3].y,
        w0 * q[0].z + w1 * q[1].z + w2 * q[2].z + w3 * q[3].z,
    )
}

/// `grid x grid` bilinear samples over a quad; corners reproduce the
/// vertices exactly.
pub fn interpolate_face(face: &[Vector3<f64>; 4], grid: usize) -> Vec<Vector3<f64>> {
    assert!(grid >= 2, "face grid needs at least 2 samples per side");
    let step = 1.0 / (grid - 1) as f64;
    let mut pts = Vec::with_capacity(grid * grid);
    for j in 0..grid {
        let t = if j == grid - 1 { 1.0 } else { j as f64 * step };
        for i in 0..grid {
            let s = if i == grid - 1 { 1.0 } else { i as f64 * step };
            pts.push(bilinear(face, s, t));
        }
    }
    pts
}

/// `4 * grid` evenly spaced samples along each of the quad's four edges.
pub fn densify_edges(face: &[Vector3<f64>; 4], grid: usize) -> Vec<Vector3<f64>> {
    let n = 4 * grid;
    let mut pts = Vec::with_capacity(4 * n);
    for e in 0..4 {
        let (a, b) = (face[e], face[(e + 1) % 4]);
        for k in 0..n {
            let t = k as f64 / (n - 1) as f64;
            pts.push(Vector3::new(
                a.x + (b.x - a.x) * t,
                a.y + (b.y - a.y) * t,
                a.z + (b.z - a.z) * t,
            ));
        }
    }
    pts
}

/// How box faces are written into the pose image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMode {
    /// Face interiors and edges carry normalised depth.
    #[default]
    Depth,
    /// Only box edges, drawn as 1.0 without depth.
    Edges,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRenderOptions {
    pub grid: usize,
    pub max_depth: f64,
    pub mode: ProjectionMode,
}

impl Default for PoseRenderOptions {
    fn default() -> Self {
        Self {
            grid: DEFAULT_FACE_GRID,
            max_depth: DEFAULT_MAX_DEPTH,
            mode: ProjectionMode::Depth,
        }
    }
}

/// Depth-aware pose image with default options.
pub fn render_pose_image(
    bx: &Box3D,
    k: &CameraIntrinsics,
    grid: usize,
    max_depth: f64,
) -> Result<PoseImage> {
    render_pose_image_with(
        bx,
        k,
        &PoseRenderOptions {
            grid,
            max_depth,
            mode: ProjectionMode::Depth,
        },
    )
}

/// Renders each face into its own channel. Channels never occlude one
/// another; within a channel the nearest sample wins.
pub fn render_pose_image_with(
    bx: &Box3D,
    k: &CameraIntrinsics,
    opts: &PoseRenderOptions,
) -> Result<PoseImage> {
    if opts.max_depth <= 0.0 {
        return Err(Error::validation("max_depth", "must be positive"));
    }
    let (h, w) = (k.height, k.width);
    let mut img = PoseImage::zeros(h, w);
    let mut any = false;
    for (c, face) in Face::ALL.iter().enumerate() {
        let quad = bx.face(*face);
        let mut pts = match opts.mode {
            ProjectionMode::Depth => interpolate_face(&quad, opts.grid),
            ProjectionMode::Edges => Vec::new(),
        };
        pts.extend(densify_edges(&quad, opts.grid));
        let chan = &mut img.data[c * h * w..(c + 1) * h * w];
        for p in &pts {
            let Ok((u, v, z)) = project_point(k, p) else {
                continue;
            };
            let (x, y) = (u.floor(), v.floor());
            if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
                continue;
            }
            let idx = y as usize * w + x as usize;
            let val = match opts.mode {
                ProjectionMode::Depth => z.min(opts.max_depth) / opts.max_depth,
                ProjectionMode::Edges => 1.0,
            };
            if chan[idx] == 0.0 || val < chan[idx] {
                chan[idx] = val;
            }
            any = true;
        }
    }
    if !any {
        return Err(Error::EmptyProjection);
    }
    Ok(img)
}

/// Elevation and azimuth of the camera as seen from the box, in the box's
/// heading-aligned frame. Azimuth 0 is straight ahead of the heading and
/// grows toward the object's left.
pub fn compute_view_angles(bx: &Box3D, pose: &CameraPose) -> Result<ViewAngles> {
    let world = bx.to_world(pose);
    let d = pose.position() - world.center();
    if d.norm() < 1e-6 {
        return Err(Error::DegenerateGeometry(
            "camera coincides with the box center".into(),
        ));
    }
    let (fwd, left, up) = world.axes();
    let (df, dl, du) = (d.dot(&fwd), d.dot(&left), d.dot(&up));
    let mut azimuth = dl.atan2(df);
    if azimuth >= std::f64::consts::PI {
        azimuth -= 2.0 * std::f64::consts::PI;
    }
    let elevation = du.atan2(df.hypot(dl));
    Ok(ViewAngles {
        elevation,
        azimuth,
    })
}

/// Projected vertices `(u, v)` of all vertices in front of the camera.
pub fn project_vertices(bx: &Box3D, k: &CameraIntrinsics) -> Vec<Option<[f64; 2]>> {
    (0..8)
        .map(|i| project_point(k, &bx.vertex(i)).ok().map(|(u, v, _)| [u, v]))
        .collect()
}

/// Axis-aligned hull of the projected vertices, clamped to the image.
pub fn project_box_rect(bx: &Box3D, k: &CameraIntrinsics) -> Result<Rect2D> {
    let pts: Vec<[f64; 2]> = project_vertices(bx, k).into_iter().flatten().collect();
    if pts.is_empty() {
        return Err(Error::EmptyProjection);
    }
    let u_min = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let u_max = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let v_min = pts.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let v_max = pts.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let (w, h) = (k.width as f64, k.height as f64);
    if u_max <= 0.0 || v_max <= 0.0 || u_min >= w || v_min >= h {
        return Err(Error::EmptyProjection);
    }
    Ok(Rect2D {
        u_min: u_min.clamp(0.0, w),
        v_min: v_min.clamp(0.0, h),
        u_max: u_max.clamp(0.0, w),
        v_max: v_max.clamp(0.0, h),
    })
}

/// Union of the pixel footprints of `rects`, each grown by `dilation` px.
pub fn mask_from_rects(rects: &[Rect2D], height: usize, width: usize, dilation: usize) -> Mask {
    let mut m = Mask::new(height, width);
    for r in rects {
        let (x0, y0, x1, y1) = r.pixel_bounds();
        if x1 == x0 || y1 == y0 {
            continue;
        }
        m.fill_rect(
            x0.saturating_sub(dilation),
            y0.saturating_sub(dilation),
            x1 + dilation,
            y1 + dilation,
        );
    }
    m
}

/// Wrapped absolute difference of two angles (radians), in `[0, pi]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let d = (a - b).rem_euclid(two_pi);
    d.min(two_pi - d)
}
