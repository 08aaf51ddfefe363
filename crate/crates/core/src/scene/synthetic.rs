use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rays::{camera_rays, CameraModel, NdcFrame, RayTwoPlane, IDENTITY_POSE};
use crate::scene::image::ImageBuffer;

/// Procedural RGBA texture on a plane, a function of the plane's NDC `(x, y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    Constant { rgb: [f64; 3], alpha: f64 },
    /// Smooth value noise with `cells` lattice cells per unit; alpha is a
    /// smoothed threshold of a separate noise channel unless `opaque`.
    Noise { seed: u64, cells: f64, opaque: bool },
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice(seed: u64, channel: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(seed ^ splitmix(channel ^ splitmix((ix as u64) ^ splitmix(iy as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Bilinear value noise with smoothstep weights, in `[0, 1]`.
fn value_noise(seed: u64, channel: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (tx, ty) = (smoothstep(x - fx), smoothstep(y - fy));
    let a = lattice(seed, channel, ix, iy);
    let b = lattice(seed, channel, ix + 1, iy);
    let c = lattice(seed, channel, ix, iy + 1);
    let d = lattice(seed, channel, ix + 1, iy + 1);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

impl Texture {
    pub fn rgba(&self, x: f64, y: f64) -> [f64; 4] {
        match *self {
            Texture::Constant { rgb, alpha } => [rgb[0], rgb[1], rgb[2], alpha],
            Texture::Noise { seed, cells, opaque } => {
                let (sx, sy) = (x * cells, y * cells);
                let rgb = [0, 1, 2].map(|c| 0.1 + 0.8 * value_noise(seed, c, sx, sy));
                let alpha = if opaque {
                    1.0
                } else {
                    let a = value_noise(seed, 3, 0.5 * sx, 0.5 * sy);
                    smoothstep(((a - 0.35) / 0.3).clamp(0.0, 1.0))
                };
                [rgb[0], rgb[1], rgb[2], alpha]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TexturedPlane {
    /// NDC depth in `(0, 1)`.
    pub depth: f64,
    pub texture: Texture,
}

/// Fronto-parallel textured planes composited front to back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub planes: Vec<TexturedPlane>,
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<()> {
        let mut prev = 0.0;
        for p in &self.planes {
            if !(p.depth > prev && p.depth < 1.0) {
                return Err(Error::InvalidConfig(format!("plane depths must increase within (0, 1), got {}", p.depth)));
            }
            prev = p.depth;
        }
        Ok(())
    }
}

/// Exact color of a ray: over-compositing of each plane's RGBA at the
/// ray's crossing point, against black.
pub fn oracle_lightfield(scene: &SyntheticScene, ray: &RayTwoPlane) -> [f64; 3] {
    let mut c = [0.0; 3];
    let mut t = 1.0;
    for plane in &scene.planes {
        let (x, y) = ray.point_at(plane.depth);
        let rgba = plane.texture.rgba(x, y);
        for ch in 0..3 {
            c[ch] += t * rgba[3] * rgba[ch];
        }
        t *= 1.0 - rgba[3];
    }
    c
}

/// Parameters of a generated scene; everything is reproducible from these.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub planes: usize,
    /// Cameras per side of the square capture grid.
    pub grid_side: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    /// Camera spacing on the grid, in world units (near plane at 1).
    pub spacing: f64,
    pub near: f64,
    pub far: f64,
    /// Lattice cells per NDC unit for the noise textures.
    pub cells: f64,
    /// Every `test_every`-th view (starting at 0) is held out.
    pub test_every: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            planes: 3,
            grid_side: 5,
            width: 64,
            height: 64,
            focal: 64.0,
            spacing: 0.08,
            near: 1.0,
            far: 100.0,
            cells: 3.0,
            test_every: 8,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid_side == 0 || self.width == 0 || self.height == 0 || self.test_every == 0 {
            return Err(Error::InvalidConfig("synthetic spec needs positive grid, resolution and test_every".into()));
        }
        if !(self.focal > 0.0 && self.near > 0.0 && self.far > self.near) {
            return Err(Error::InvalidConfig("synthetic spec needs focal > 0 and 0 < near < far".into()));
        }
        Ok(())
    }

    /// Planes evenly spread in NDC depth; the last is opaque.
    pub fn scene(&self) -> SyntheticScene {
        let n = self.planes;
        let planes = (0..n)
            .map(|k| TexturedPlane {
                depth: 0.2 + 0.6 * if n > 1 { k as f64 / (n - 1) as f64 } else { 0.5 },
                texture: Texture::Noise {
                    seed: self.seed.wrapping_mul(1000).wrapping_add(k as u64),
                    cells: self.cells,
                    opaque: k + 1 == n,
                },
            })
            .collect();
        SyntheticScene { planes }
    }

    pub fn ndc_frame(&self) -> NdcFrame {
        NdcFrame {
            cam_to_world: IDENTITY_POSE,
            focal: self.focal,
            width: self.width,
            height: self.height,
            near: self.near,
        }
    }

    /// Cameras on a square grid in the `z = 0` plane, all looking down `-z`,
    /// in row-major order.
    pub fn cameras(&self) -> Vec<CameraModel> {
        let n = self.grid_side;
        let half = (n as f64 - 1.0) / 2.0;
        let mut cams = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                let mut pose = IDENTITY_POSE;
                pose[0][3] = (i as f64 - half) * self.spacing;
                pose[1][3] = (half - j as f64) * self.spacing;
                cams.push(CameraModel::centered(self.width, self.height, self.focal, pose, self.near, self.far));
            }
        }
        cams
    }

    pub fn is_test_view(&self, index: usize) -> bool {
        index % self.test_every == 0
    }
}

/// Ground-truth image of a camera.
pub fn render_oracle(scene: &SyntheticScene, cam: &CameraModel, frame: &NdcFrame) -> Result<ImageBuffer> {
    let rays = camera_rays(cam, frame)?;
    let mut img = ImageBuffer::new(cam.width, cam.height);
    for (p, ray) in rays.iter().enumerate() {
        img.set(p % cam.width, p / cam.width, oracle_lightfield(scene, ray));
    }
    Ok(img)
}
