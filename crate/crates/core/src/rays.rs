//! Cameras, the forward-facing NDC warp, two-plane ray coordinates, point
//! sampling and the tangent directions used by the consistency penalties.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{DenseMatrix, DualBatch};
use crate::error::{Error, Result};
use crate::lfnet::DepthGrid;
use crate::real::Real;

pub type Vec3 = [f64; 3];

/// Rigid `[R | t]` transform, row-major.
pub type Pose = [[f64; 4]; 3];

pub const IDENTITY_POSE: Pose = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];

/// Pinhole camera looking down its local `-z` axis with `+y` up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub cam_to_world: Pose,
    pub near: f64,
    pub far: f64,
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn normalize(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

pub fn pose_rotation_col(pose: &Pose, c: usize) -> Vec3 {
    [pose[0][c], pose[1][c], pose[2][c]]
}

pub fn pose_translation(pose: &Pose) -> Vec3 {
    pose_rotation_col(pose, 3)
}

/// Max deviation of `R^T R` from the identity.
pub fn orthonormality_error(pose: &Pose) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let d = dot(pose_rotation_col(pose, i), pose_rotation_col(pose, j));
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((d - target).abs());
        }
    }
    worst
}

impl CameraModel {
    /// Camera with principal point at the image center.
    pub fn centered(width: usize, height: usize, focal: f64, cam_to_world: Pose, near: f64, far: f64) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            cam_to_world,
            near,
            far,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidConfig(format!("focal lengths must be positive ({}, {})", self.fx, self.fy)));
        }
        if !(self.near < self.far) {
            return Err(Error::InvalidConfig(format!("near {} must be below far {}", self.near, self.far)));
        }
        let err = orthonormality_error(&self.cam_to_world);
        if err > 1e-6 {
            return Err(Error::InvalidConfig(format!("camera rotation not orthonormal (error {err:.3e})")));
        }
        Ok(())
    }

    /// Same camera rendered at another resolution.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
            ..self.clone()
        }
    }

    pub fn center(&self) -> Vec3 {
        pose_translation(&self.cam_to_world)
    }

    pub fn optical_axis(&self) -> Vec3 {
        let z = pose_rotation_col(&self.cam_to_world, 2);
        [-z[0], -z[1], -z[2]]
    }
}

/// Ray through continuous pixel coordinates `(px, py)`; pixel centers sit
/// at half-integers. The direction is not normalized.
pub fn pixel_to_world_ray(cam: &CameraModel, px: f64, py: f64) -> Result<(Vec3, Vec3)> {
    if !(px >= 0.0 && px < cam.width as f64 && py >= 0.0 && py < cam.height as f64) {
        return Err(Error::PixelOutOfBounds {
            px,
            py,
            width: cam.width,
            height: cam.height,
        });
    }
    let d_cam = [(px - cam.cx) / cam.fx, -(py - cam.cy) / cam.fy, -1.0];
    let p = &cam.cam_to_world;
    let dir = [
        p[0][0] * d_cam[0] + p[0][1] * d_cam[1] + p[0][2] * d_cam[2],
        p[1][0] * d_cam[0] + p[1][1] * d_cam[1] + p[1][2] * d_cam[2],
        p[2][0] * d_cam[0] + p[2][1] * d_cam[1] + p[2][2] * d_cam[2],
    ];
    Ok((pose_translation(p), dir))
}

/// Reference frame of the NDC warp: pose, intrinsics and near bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NdcFrame {
    pub cam_to_world: Pose,
    pub focal: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
}

impl NdcFrame {
    pub fn to_local(&self, origin: Vec3, dir: Vec3) -> (Vec3, Vec3) {
        let t = pose_translation(&self.cam_to_world);
        let rel = [origin[0] - t[0], origin[1] - t[1], origin[2] - t[2]];
        let cols: [Vec3; 3] = [0, 1, 2].map(|c| pose_rotation_col(&self.cam_to_world, c));
        (cols.map(|c| dot(c, rel)), cols.map(|c| dot(c, dir)))
    }

    fn scale_x(&self) -> f64 {
        -self.focal / (self.width as f64 / 2.0)
    }

    fn scale_y(&self) -> f64 {
        -self.focal / (self.height as f64 / 2.0)
    }

    /// NDC `(x, y, depth)` of a point in the reference frame, with depth
    /// remapped so the near plane is 0 and infinity is 1.
    pub fn project_local(&self, p: Vec3) -> Vec3 {
        [
            self.scale_x() * p[0] / p[2],
            self.scale_y() * p[1] / p[2],
            1.0 + self.near / p[2],
        ]
    }
}

/// A ray as its intersections `(u, v)` with the near plane and `(s, t)` with
/// the far plane.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct RayTwoPlane {
    pub u: f64,
    pub v: f64,
    pub s: f64,
    pub t: f64,
}

impl RayTwoPlane {
    pub fn new(u: f64, v: f64, s: f64, t: f64) -> Self {
        Self { u, v, s, t }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.u, self.v, self.s, self.t]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    /// Point on the ray at depth `d`; exact at both planes.
    #[inline]
    pub fn point_at(&self, d: f64) -> (f64, f64) {
        (self.u * (1.0 - d) + self.s * d, self.v * (1.0 - d) + self.t * d)
    }

    pub fn offset(&self, dir: [f64; 4], step: f64) -> Self {
        Self::new(
            self.u + step * dir[0],
            self.v + step * dir[1],
            self.s + step * dir[2],
            self.t + step * dir[3],
        )
    }
}

/// Warps a world-space ray into NDC and intersects it with the depth-0 and
/// depth-1 planes.
pub fn world_ray_to_twoplane(origin: Vec3, dir: Vec3, frame: &NdcFrame) -> Result<RayTwoPlane> {
    let (o, d) = frame.to_local(origin, dir);
    let len = dot(d, d).sqrt();
    if !(len > 0.0) || d[2].abs() <= 1e-12 * len {
        return Err(Error::DegenerateRay("direction is parallel to the image planes".into()));
    }
    if d[2] > 0.0 {
        return Err(Error::DegenerateRay("ray points away from the scene".into()));
    }
    let shift = -(frame.near + o[2]) / d[2];
    let o = [o[0] + shift * d[0], o[1] + shift * d[1], o[2] + shift * d[2]];
    let (ax, ay) = (frame.scale_x(), frame.scale_y());
    let u = ax * o[0] / o[2];
    let v = ay * o[1] / o[2];
    let s = u + ax * (d[0] / d[2] - o[0] / o[2]);
    let t = v + ay * (d[1] / d[2] - o[1] / o[2]);
    let ray = RayTwoPlane::new(u, v, s, t);
    if !ray.as_array().iter().all(|x| x.is_finite()) {
        return Err(Error::DegenerateRay("non-finite two-plane coordinates".into()));
    }
    Ok(ray)
}

/// Two-plane ray for the center of pixel `(i, j)`.
pub fn pixel_twoplane(cam: &CameraModel, frame: &NdcFrame, i: usize, j: usize) -> Result<RayTwoPlane> {
    let (o, d) = pixel_to_world_ray(cam, i as f64 + 0.5, j as f64 + 0.5)?;
    world_ray_to_twoplane(o, d, frame)
}

/// All pixel rays of a camera in row-major order.
pub fn camera_rays(cam: &CameraModel, frame: &NdcFrame) -> Result<Vec<RayTwoPlane>> {
    let mut rays = Vec::with_capacity(cam.width * cam.height);
    for j in 0..cam.height {
        for i in 0..cam.width {
            rays.push(pixel_twoplane(cam, frame, i, j)?);
        }
    }
    Ok(rays)
}

/// Interleaved `(x_0, y_0, x_1, y_1, ...)` at every grid depth.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCoords(pub Vec<f64>);

pub fn sample_points(ray: &RayTwoPlane, grid: &DepthGrid) -> PointCoords {
    let mut out = Vec::with_capacity(2 * grid.len());
    for &d in grid.values() {
        let (x, y) = ray.point_at(d);
        out.push(x);
        out.push(y);
    }
    PointCoords(out)
}

/// Spanning directions, in `(u, v, s, t)`, of the rays through the point at
/// depth `d` of a given ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TangentBasis {
    pub p: [f64; 4],
    pub q: [f64; 4],
}

pub fn tangent_basis(d: f64) -> TangentBasis {
    TangentBasis {
        p: [d, 0.0, -(1.0 - d), 0.0],
        q: [0.0, d, 0.0, -(1.0 - d)],
    }
}

/// The four coordinate directions `e_u, e_v, e_s, e_t`.
pub const BASIS_DIRECTIONS: [[f64; 4]; 4] = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

/// Derivative of the sampled point coordinates along `direction`.
pub fn basis_input_tangents(_ray: &RayTwoPlane, grid: &DepthGrid, direction: [f64; 4]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * grid.len());
    for &d in grid.values() {
        out.push(direction[0] * (1.0 - d) + direction[2] * d);
        out.push(direction[1] * (1.0 - d) + direction[3] * d);
    }
    out
}

/// Tangent seeding for one channel of a point batch.
#[derive(Clone, Copy, Debug)]
pub enum RayDirections<'a> {
    Shared([f64; 4]),
    PerRay(&'a [[f64; 4]]),
}

/// Sampled point coordinates for a batch of rays, with one tangent channel
/// per entry of `directions`.
pub fn point_batch<T: Real>(rays: &[RayTwoPlane], grid: &DepthGrid, directions: &[RayDirections<'_>]) -> Result<DualBatch<T>> {
    let width = 2 * grid.len();
    let n = rays.len();
    let mut primal = Vec::with_capacity(n * width);
    for r in rays {
        for &d in grid.values() {
            let (x, y) = r.point_at(d);
            primal.push(T::lit(x));
            primal.push(T::lit(y));
        }
    }
    let mut tangents = Vec::with_capacity(directions.len());
    for dirs in directions {
        let mut data = Vec::with_capacity(n * width);
        match dirs {
            RayDirections::Shared(dir) => {
                let row: Vec<T> = basis_input_tangents(&RayTwoPlane::default(), grid, *dir)
                    .into_iter()
                    .map(T::lit)
                    .collect();
                for _ in 0..n {
                    data.extend_from_slice(&row);
                }
            }
            RayDirections::PerRay(per) => {
                if per.len() != n {
                    return Err(Error::dim("point_batch directions", n, per.len()));
                }
                for (r, dir) in rays.iter().zip(per.iter()) {
                    data.extend(basis_input_tangents(r, grid, *dir).into_iter().map(T::lit));
                }
            }
        }
        tangents.push(DenseMatrix::from_vec(n, width, data)?);
    }
    DualBatch::new(DenseMatrix::from_vec(n, width, primal)?, tangents)
}

/// The four basis directions as shared tangent channels.
pub fn basis_seeds() -> [RayDirections<'static>; 4] {
    BASIS_DIRECTIONS.map(RayDirections::Shared)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchKind {
    Fit,
    Regularization,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RayBatch {
    pub rays: Vec<RayTwoPlane>,
    pub targets: Option<Vec<[f64; 3]>>,
    pub kind: BatchKind,
}

impl RayBatch {
    pub fn fit(rays: Vec<RayTwoPlane>, targets: Vec<[f64; 3]>) -> Result<Self> {
        if rays.len() != targets.len() {
            return Err(Error::dim("RayBatch::fit targets", rays.len(), targets.len()));
        }
        Ok(Self {
            rays,
            targets: Some(targets),
            kind: BatchKind::Fit,
        })
    }

    pub fn regularization(rays: Vec<RayTwoPlane>) -> Self {
        Self {
            rays,
            targets: None,
            kind: BatchKind::Regularization,
        }
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }
}

/// Per-coordinate sampling intervals for regularization rays.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayBounds {
    pub lo: [f64; 4],
    pub hi: [f64; 4],
}

impl RayBounds {
    /// Hull of the given rays, each interval widened by `expand` of its width
    /// (split evenly between both ends).
    pub fn from_rays(rays: &[RayTwoPlane], expand: f64) -> Result<Self> {
        if rays.is_empty() {
            return Err(Error::InvalidConfig("cannot bound an empty ray set".into()));
        }
        let mut lo = [f64::INFINITY; 4];
        let mut hi = [f64::NEG_INFINITY; 4];
        for r in rays {
            for (c, x) in r.as_array().into_iter().enumerate() {
                lo[c] = lo[c].min(x);
                hi[c] = hi[c].max(x);
            }
        }
        for c in 0..4 {
            let pad = 0.5 * expand * (hi[c] - lo[c]);
            lo[c] -= pad;
            hi[c] += pad;
        }
        Ok(Self { lo, hi })
    }
}

/// `n` rays drawn uniformly per coordinate within `bounds`.
pub fn sample_regularization_rays<R: Rng + ?Sized>(bounds: &RayBounds, n: usize, rng: &mut R) -> RayBatch {
    let rays = (0..n)
        .map(|_| {
            let mut a = [0.0; 4];
            for c in 0..4 {
                let r: f64 = rng.random();
                a[c] = bounds.lo[c] + (bounds.hi[c] - bounds.lo[c]) * r;
            }
            RayTwoPlane::from_array(a)
        })
        .collect();
    RayBatch::regularization(rays)
}
