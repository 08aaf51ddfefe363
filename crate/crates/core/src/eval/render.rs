use std::fs;
use std::path::{Path, PathBuf};
use web_time::Instant;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tape;
use crate::error::{Error, Result};
use crate::lfnet::{forward, ProLiFNetwork};
use crate::rays::{camera_rays, cross, normalize, point_batch, CameraModel, NdcFrame, Pose, RayTwoPlane};
use crate::real::Real;
use crate::render::composite;
use crate::scene::{write_image, ImageBuffer, SceneManifest};
use crate::train::map_shards;

pub const DEFAULT_CHUNK: usize = 4096;
pub const DEFAULT_MEMORY_BUDGET: usize = 256 << 20;

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOptions {
    /// Rays per network evaluation.
    pub chunk: usize,
    /// Upper bound on tape bytes per chunk.
    pub memory_budget: usize,
    /// Evaluate chunks on the worker pool.
    pub parallel: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            chunk: DEFAULT_CHUNK,
            memory_budget: DEFAULT_MEMORY_BUDGET,
            parallel: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderStats {
    pub rays: usize,
    pub chunks: usize,
    /// Bytes the budget check expected per chunk.
    pub estimated_chunk_bytes: usize,
    /// Largest tape footprint observed over all chunks.
    pub peak_chunk_bytes: usize,
    pub ms: f64,
}

impl RenderStats {
    pub fn rays_per_sec(&self) -> f64 {
        if self.ms > 0.0 {
            self.rays as f64 / (self.ms / 1000.0)
        } else {
            0.0
        }
    }
}

/// Bytes an inference pass over `rays` rays is expected to hold at peak.
pub fn chunk_bytes<T: Real>(net: &ProLiFNetwork<T>, rays: usize) -> usize {
    rays * net.inference_floats_per_ray() * std::mem::size_of::<T>()
}

/// Colors of arbitrary rays, evaluated in chunks.
pub fn render_rays<T: Real>(
    net: &ProLiFNetwork<T>,
    rays: &[RayTwoPlane],
    opts: &RenderOptions,
) -> Result<(Vec<[f64; 3]>, RenderStats)> {
    if opts.chunk == 0 {
        return Err(Error::InvalidConfig("chunk size must be positive".into()));
    }
    let chunk = opts.chunk.min(rays.len().max(1));
    let estimate = chunk_bytes(net, chunk);
    if estimate > opts.memory_budget {
        return Err(Error::MemoryBudget {
            needed: estimate,
            budget: opts.memory_budget,
        });
    }
    let start = Instant::now();
    let n_chunks = rays.len().div_ceil(chunk);
    let parts = map_shards(n_chunks, opts.parallel, |c| {
        let part = &rays[c * chunk..((c + 1) * chunk).min(rays.len())];
        let mut tape = Tape::<T>::inference();
        let coords = tape.input(point_batch::<T>(part, &net.grid, &[])?)?;
        let samples = forward(net, coords, &mut tape)?;
        let out = composite(&samples, &net.grid, &mut tape)?;
        let colors: Vec<[f64; 3]> = tape
            .value(out.color)?
            .primal()
            .chunks_exact(3)
            .map(|c| [c[0].f64(), c[1].f64(), c[2].f64()])
            .collect();
        Ok((colors, tape.peak_bytes()))
    })?;
    let mut colors = Vec::with_capacity(rays.len());
    let mut peak = 0;
    for (c, p) in parts {
        colors.extend(c);
        peak = peak.max(p);
    }
    let stats = RenderStats {
        rays: rays.len(),
        chunks: n_chunks,
        estimated_chunk_bytes: estimate,
        peak_chunk_bytes: peak,
        ms: start.elapsed().as_secs_f64() * 1000.0,
    };
    Ok((colors, stats))
}

/// Renders a camera, optionally at another resolution.
pub fn render_view<T: Real>(
    net: &ProLiFNetwork<T>,
    cam: &CameraModel,
    frame: &NdcFrame,
    resolution: Option<(usize, usize)>,
    opts: &RenderOptions,
) -> Result<(ImageBuffer, RenderStats)> {
    let cam = match resolution {
        Some((w, h)) if (w, h) != (cam.width, cam.height) => cam.resized(w, h),
        _ => cam.clone(),
    };
    let rays = camera_rays(&cam, frame)?;
    let (colors, stats) = render_rays(net, &rays, opts)?;
    let mut img = ImageBuffer::new(cam.width, cam.height);
    for (dst, c) in img.data.chunks_exact_mut(3).zip(&colors) {
        dst.copy_from_slice(c);
    }
    Ok((img, stats))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    Linear,
    Spiral,
}

/// Camera path between two manifest views.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub kind: PathKind,
    pub from: usize,
    pub to: usize,
    pub frames: usize,
    /// Spiral radius in world units, scaled by `4 t (1 - t)`.
    pub radius: f64,
    pub turns: f64,
}

impl Default for PathSpec {
    fn default() -> Self {
        Self {
            kind: PathKind::Spiral,
            from: 0,
            to: 0,
            frames: 30,
            radius: 0.05,
            turns: 1.0,
        }
    }
}

fn orthonormalize(p: &Pose) -> Pose {
    let col = |c: usize| [p[0][c], p[1][c], p[2][c]];
    let z = normalize(col(2));
    let x = normalize(cross(col(1), z));
    let y = cross(z, x);
    let mut out = *p;
    for r in 0..3 {
        out[r][0] = x[r];
        out[r][1] = y[r];
        out[r][2] = z[r];
    }
    out
}

/// Cameras along `path`; the first and last frames are the anchor cameras
/// themselves.
pub fn path_cameras(manifest: &SceneManifest, path: &PathSpec) -> Result<Vec<CameraModel>> {
    let n = manifest.views.len();
    if path.from >= n || path.to >= n {
        return Err(Error::InvalidConfig(format!("path anchors {}..{} outside {n} views", path.from, path.to)));
    }
    if path.frames == 0 {
        return Err(Error::InvalidConfig("path needs at least one frame".into()));
    }
    let a = &manifest.views[path.from].camera;
    let b = &manifest.views[path.to].camera;
    let mut cams = Vec::with_capacity(path.frames);
    for i in 0..path.frames {
        if i == 0 {
            cams.push(a.clone());
            continue;
        }
        if i + 1 == path.frames {
            cams.push(b.clone());
            continue;
        }
        let t = i as f64 / (path.frames - 1) as f64;
        let mut pose = [[0.0; 4]; 3];
        for r in 0..3 {
            for c in 0..4 {
                pose[r][c] = (1.0 - t) * a.cam_to_world[r][c] + t * b.cam_to_world[r][c];
            }
        }
        let mut pose = orthonormalize(&pose);
        if path.kind == PathKind::Spiral {
            let phase = std::f64::consts::TAU * path.turns * t;
            let amp = 4.0 * t * (1.0 - t) * path.radius;
            for r in 0..3 {
                pose[r][3] += amp * (phase.cos() * pose[r][0] + phase.sin() * pose[r][1]);
            }
        }
        cams.push(CameraModel {
            cam_to_world: pose,
            ..a.clone()
        });
    }
    Ok(cams)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub path: PathBuf,
    pub ms: f64,
}

/// Renders every camera of `path` into numbered PPM frames in `out_dir`.
pub fn render_trajectory<T: Real>(
    net: &ProLiFNetwork<T>,
    manifest: &SceneManifest,
    path: &PathSpec,
    resolution: Option<(usize, usize)>,
    out_dir: &Path,
    opts: &RenderOptions,
) -> Result<Vec<FrameRecord>> {
    let cams = path_cameras(manifest, path)?;
    fs::create_dir_all(out_dir)?;
    let mut records = Vec::with_capacity(cams.len());
    for (i, cam) in cams.iter().enumerate() {
        let (img, stats) = render_view(net, cam, &manifest.ndc, resolution, opts)?;
        let file = out_dir.join(format!("frame_{i:04}.ppm"));
        write_image(&img, &file)?;
        records.push(FrameRecord { path: file, ms: stats.ms });
    }
    Ok(records)
}
