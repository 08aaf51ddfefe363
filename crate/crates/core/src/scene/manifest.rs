use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lfnet::write_atomic;
use crate::rays::{camera_rays, CameraModel, NdcFrame};
use crate::scene::image::{read_image, write_image, ImageBuffer};
use crate::scene::synthetic::{render_oracle, SyntheticScene, SyntheticSpec};
use crate::train::TrainingSet;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SYNTHETIC_FILE: &str = "synthetic.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub name: String,
    /// Image path relative to the manifest's directory.
    pub image: String,
    pub camera: CameraModel,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub views: Vec<ViewEntry>,
    pub near: f64,
    pub far: f64,
    pub ndc: NdcFrame,
}

/// Largest allowed angle between a camera's optical axis and the reference axis.
pub const MAX_AXIS_ANGLE_DEG: f64 = 60.0;

impl SceneManifest {
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::InvalidConfig("manifest lists no views".into()));
        }
        let refz = crate::rays::pose_rotation_col(&self.ndc.cam_to_world, 2);
        for v in &self.views {
            v.camera.validate()?;
            let axis = v.camera.optical_axis();
            let cos = -(axis[0] * refz[0] + axis[1] * refz[1] + axis[2] * refz[2]);
            if cos < MAX_AXIS_ANGLE_DEG.to_radians().cos() {
                return Err(Error::InvalidConfig(format!("view {} is not forward-facing", v.name)));
            }
        }
        Ok(())
    }

    pub fn views_in(&self, split: Split) -> impl Iterator<Item = &ViewEntry> {
        self.views.iter().filter(move |v| v.split == split)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: SceneManifest = serde_json::from_slice(&fs::read(path)?)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }
}

/// A manifest with its images decoded.
#[derive(Clone, Debug)]
pub struct LoadedScene {
    pub dir: PathBuf,
    pub manifest: SceneManifest,
    pub images: Vec<ImageBuffer>,
}

impl LoadedScene {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = SceneManifest::load(&dir.join(MANIFEST_FILE))?;
        let mut images = Vec::with_capacity(manifest.views.len());
        for v in &manifest.views {
            let img = read_image(&dir.join(&v.image))?;
            if img.width != v.camera.width || img.height != v.camera.height {
                return Err(Error::format(
                    dir.join(&v.image),
                    format!("image is {}x{}, camera expects {}x{}", img.width, img.height, v.camera.width, v.camera.height),
                ));
            }
            images.push(img);
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            images,
        })
    }

    /// Rays and colors of every pixel of the given views.
    pub fn rays_for(&self, indices: &[usize], bounds_expand: f64) -> Result<TrainingSet> {
        let mut rays = Vec::new();
        let mut colors = Vec::new();
        for &i in indices {
            let v = &self.manifest.views[i];
            rays.extend(camera_rays(&v.camera, &self.manifest.ndc)?);
            colors.extend(self.images[i].pixels());
        }
        TrainingSet::new(rays, colors, bounds_expand)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.manifest.views.len())
            .filter(|&i| self.manifest.views[i].split == split)
            .collect()
    }

    pub fn training_set(&self, bounds_expand: f64) -> Result<TrainingSet> {
        self.rays_for(&self.indices(Split::Train), bounds_expand)
    }
}

/// Builds the scene, manifest and ground-truth images of a synthetic spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(SyntheticScene, SceneManifest, Vec<ImageBuffer>)> {
    spec.validate()?;
    let scene = spec.scene();
    scene.validate()?;
    let frame = spec.ndc_frame();
    let mut views = Vec::new();
    let mut images = Vec::new();
    for (i, cam) in spec.cameras().into_iter().enumerate() {
        images.push(render_oracle(&scene, &cam, &frame)?);
        views.push(ViewEntry {
            name: format!("view_{i:03}"),
            image: format!("images/view_{i:03}.ppm"),
            camera: cam,
            split: if spec.is_test_view(i) { Split::Test } else { Split::Train },
        });
    }
    let manifest = SceneManifest {
        views,
        near: spec.near,
        far: spec.far,
        ndc: frame,
    };
    manifest.validate()?;
    Ok((scene, manifest, images))
}

/// Writes a synthetic scene directory: manifest, spec and PPM images.
pub fn write_synthetic(spec: &SyntheticSpec, dir: &Path) -> Result<SceneManifest> {
    let (_, manifest, images) = generate_synthetic(spec)?;
    fs::create_dir_all(dir.join("images"))?;
    for (v, img) in manifest.views.iter().zip(&images) {
        write_image(img, &dir.join(&v.image))?;
    }
    write_atomic(&dir.join(SYNTHETIC_FILE), serde_json::to_string_pretty(spec)?.as_bytes())?;
    manifest.save(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
