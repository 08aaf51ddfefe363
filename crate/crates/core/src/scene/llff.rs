//! Import and export of the LLFF `poses_bounds.npy` layout.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lfnet::write_atomic;
use crate::rays::{cross, normalize, pose_rotation_col, CameraModel, NdcFrame, Pose};
use crate::scene::image::{read_image, write_image};
use crate::scene::manifest::{LoadedScene, SceneManifest, Split, ViewEntry, MANIFEST_FILE};

pub const POSES_FILE: &str = "poses_bounds.npy";
/// Near plane of the NDC warp relative to the closest scene bound.
pub const NEAR_BOUND_FACTOR: f64 = 0.75;
pub const LLFF_TEST_EVERY: usize = 8;

/// Parses a little-endian float64, C-order NPY matrix.
pub fn parse_npy(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err(Error::format(path, "missing NPY magic"));
    }
    let major = bytes[6];
    let (hlen, start) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(Error::format(path, "truncated NPY header"));
            }
            (u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize, 12)
        }
        v => return Err(Error::format(path, format!("unsupported NPY version {v}"))),
    };
    let header = bytes
        .get(start..start + hlen)
        .ok_or_else(|| Error::format(path, "truncated NPY header"))?;
    let header = std::str::from_utf8(header).map_err(|_| Error::format(path, "NPY header is not UTF-8"))?;
    let field = |key: &str| -> Result<&str> {
        let at = header
            .find(&format!("'{key}'"))
            .ok_or_else(|| Error::format(path, format!("NPY header lacks {key}")))?;
        Ok(header[at + key.len() + 2..].trim_start().trim_start_matches(':').trim_start())
    };
    let descr = field("descr")?;
    if !(descr.starts_with("'<f8'") || descr.starts_with("'float64'")) {
        return Err(Error::format(path, "NPY dtype must be little-endian float64"));
    }
    if !field("fortran_order")?.starts_with("False") {
        return Err(Error::format(path, "Fortran-order NPY is not supported"));
    }
    let shape_txt = field("shape")?;
    let close = shape_txt.find(')').ok_or_else(|| Error::format(path, "bad NPY shape"))?;
    let shape: Vec<usize> = shape_txt[1..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::format(path, "bad NPY shape")))
        .collect::<Result<_>>()?;
    let count: usize = shape.iter().product();
    let data = &bytes[start + hlen..];
    if data.len() != 8 * count {
        return Err(Error::format(path, format!("NPY payload holds {} bytes, shape needs {}", data.len(), 8 * count)));
    }
    let values = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((shape, values))
}

pub fn encode_npy(rows: usize, cols: usize, values: &[f64]) -> Vec<u8> {
    let mut header = format!("{{'descr': '<f8', 'fortran_order': False, 'shape': ({rows}, {cols}), }}");
    let unpadded = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let mut out = b"\x93NUMPY\x01\x00".to_vec();
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Mean camera: average center, averaged and re-orthonormalized axes.
pub fn average_pose(poses: &[Pose]) -> Pose {
    let n = poses.len() as f64;
    let mean = |c: usize| {
        let mut s = [0.0; 3];
        for p in poses {
            let v = pose_rotation_col(p, c);
            for k in 0..3 {
                s[k] += v[k] / n;
            }
        }
        s
    };
    let center = mean(3);
    let z = normalize(mean(2));
    let up = mean(1);
    let x = normalize(cross(up, z));
    let y = cross(z, x);
    let mut pose = [[0.0; 4]; 3];
    for r in 0..3 {
        pose[r] = [x[r], y[r], z[r], center[r]];
    }
    pose
}

fn image_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut files: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
                Some("png" | "ppm" | "jpg" | "jpeg")
            )
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Reads an LLFF scene directory into a manifest. With `factor`, images are
/// taken from `images_<factor>` and intrinsics scaled to their size.
pub fn import_llff(dir: &Path, factor: Option<u32>) -> Result<SceneManifest> {
    let npy = dir.join(POSES_FILE);
    let (shape, values) = parse_npy(&fs::read(&npy)?, &npy)?;
    if shape.len() != 2 || shape[1] != 17 {
        return Err(Error::format(&npy, format!("expected an N x 17 array, got shape {shape:?}")));
    }
    let folder = match factor {
        Some(f) if f > 1 => format!("images_{f}"),
        _ => "images".to_string(),
    };
    let files = image_files(&dir.join(&folder))?;
    let n = shape[0];
    if files.len() != n {
        return Err(Error::format(dir, format!("{n} poses but {} images in {folder}", files.len())));
    }
    let mut poses = Vec::with_capacity(n);
    let mut cams = Vec::with_capacity(n);
    let mut min_near = f64::INFINITY;
    for (i, row) in values.chunks_exact(17).enumerate() {
        let m = |r: usize, c: usize| row[5 * r + c];
        let mut pose = [[0.0; 4]; 3];
        for r in 0..3 {
            // (down, right, backward) -> (right, up, backward)
            pose[r] = [m(r, 1), -m(r, 0), m(r, 2), m(r, 3)];
        }
        let (h, w, f) = (m(0, 4), m(1, 4), m(2, 4));
        let (near, far) = (row[15], row[16]);
        let img = read_image(&files[i])?;
        let (iw, ih) = (img.width, img.height);
        let scale = iw as f64 / w;
        let mut cam = CameraModel::centered(iw, ih, f * scale, pose, near, far);
        cam.fy = f * ih as f64 / h;
        cams.push(cam);
        poses.push(pose);
        min_near = min_near.min(near);
    }
    let reference = average_pose(&poses);
    let first = &cams[0];
    let ndc = NdcFrame {
        cam_to_world: reference,
        focal: first.fx,
        width: first.width,
        height: first.height,
        near: NEAR_BOUND_FACTOR * min_near,
    };
    let far = cams.iter().map(|c| c.far).fold(0.0, f64::max);
    let views = cams
        .into_iter()
        .zip(&files)
        .enumerate()
        .map(|(i, (camera, file))| ViewEntry {
            name: file.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
            image: format!("{folder}/{}", file.file_name().unwrap_or_default().to_string_lossy()),
            camera,
            split: if i % LLFF_TEST_EVERY == 0 { Split::Test } else { Split::Train },
        })
        .collect();
    let manifest = SceneManifest {
        views,
        near: ndc.near,
        far,
        ndc,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Writes a loaded scene in LLFF layout (`poses_bounds.npy` + `images/`).
pub fn export_llff(scene: &LoadedScene, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    let mut values = Vec::with_capacity(17 * scene.manifest.views.len());
    for (i, v) in scene.manifest.views.iter().enumerate() {
        let c = &v.camera;
        let p = &c.cam_to_world;
        let hwf = [c.height as f64, c.width as f64, c.fx];
        for r in 0..3 {
            values.extend([-p[r][1], p[r][0], p[r][2], p[r][3], hwf[r]]);
        }
        values.extend([c.near, c.far]);
        write_image(&scene.images[i], &dir.join(format!("images/{i:04}.ppm")))?;
    }
    let n = scene.manifest.views.len();
    write_atomic(&dir.join(POSES_FILE), &encode_npy(n, 17, &values))
}

/// Imports an LLFF directory and writes a manifest next to it.
pub fn import_llff_to_manifest(dir: &Path, factor: Option<u32>) -> Result<SceneManifest> {
    let m = import_llff(dir, factor)?;
    m.save(&dir.join(MANIFEST_FILE))?;
    Ok(m)
}

pub fn pose_distance(a: &Pose, b: &Pose) -> f64 {
    let mut worst = 0.0f64;
    for r in 0..3 {
        for c in 0..4 {
            worst = worst.max((a[r][c] - b[r][c]).abs());
        }
    }
    worst
}
