//! Browser bindings: a small synthetic scene, a tiny network trained in
//! place, and renders of both for a canvas.

use prolif::eval::{psnr, render_view, RenderOptions};
use prolif::lfnet::StageConfig;
use prolif::scene::{generate_synthetic, ImageBuffer, SceneManifest, Split, SyntheticSpec};
use prolif::train::{train_step, Trainer, TrainConfig, TrainingSet};
use prolif::Precision;
use wasm_bindgen::prelude::*;

fn rgba(img: &ImageBuffer) -> Vec<u8> {
    img.to_rgb8().chunks_exact(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect()
}

#[wasm_bindgen]
pub struct Demo {
    manifest: SceneManifest,
    images: Vec<ImageBuffer>,
    data: TrainingSet,
    trainer: Trainer<f32>,
    last_loss: f64,
}

#[wasm_bindgen]
impl Demo {
    /// Builds a 3x3-camera synthetic scene at `size`x`size` and a fresh
    /// 3-stage network.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, size: u32) -> Result<Demo, JsError> {
        let size = size.clamp(16, 128) as usize;
        let spec = SyntheticSpec {
            grid_side: 3,
            width: size,
            height: size,
            focal: size as f64,
            seed: seed as u64,
            ..Default::default()
        };
        let (_, manifest, images) = generate_synthetic(&spec)?;
        let mut rays = Vec::new();
        let mut colors = Vec::new();
        for (v, img) in manifest.views.iter().zip(&images) {
            if v.split == Split::Train {
                rays.extend(prolif::rays::camera_rays(&v.camera, &manifest.ndc)?);
                colors.extend(img.pixels());
            }
        }
        let cfg = TrainConfig {
            stage: StageConfig::tiny(4, 16, 4, 3),
            total_steps: 3000,
            fit_batch: 512,
            reg_batch: 128,
            lr_start: 1e-4,
            lr_end: 1e-4,
            seed: seed as u64,
            precision: Precision::F32,
            deterministic: true,
            ..Default::default()
        };
        let data = TrainingSet::new(rays, colors, cfg.bounds_expand)?;
        Ok(Demo {
            manifest,
            images,
            data,
            trainer: Trainer::new(cfg)?,
            last_loss: f64::NAN,
        })
    }

    pub fn size(&self) -> u32 {
        self.images[0].width as u32
    }

    pub fn num_views(&self) -> u32 {
        self.images.len() as u32
    }

    pub fn is_test_view(&self, view: u32) -> bool {
        self.manifest.views.get(view as usize).is_some_and(|v| v.split == Split::Test)
    }

    pub fn stage(&self) -> u32 {
        self.trainer.net.stage as u32
    }

    pub fn step(&self) -> u32 {
        self.trainer.step as u32
    }

    pub fn last_loss(&self) -> f64 {
        self.last_loss
    }

    /// Exact RGBA pixels of a view, straight from the plane scene.
    pub fn ground_truth(&self, view: u32) -> Vec<u8> {
        self.images.get(view as usize).map(rgba).unwrap_or_default()
    }

    /// Runs `steps` optimization steps; returns the last total loss.
    pub fn train(&mut self, steps: u32) -> Result<f64, JsError> {
        for _ in 0..steps {
            self.last_loss = train_step(&mut self.trainer, &self.data)?.loss.total;
        }
        Ok(self.last_loss)
    }

    /// Moves to the next stage; the rendered images do not change.
    pub fn transition(&mut self) -> Result<u32, JsError> {
        if self.trainer.net.is_final_stage() {
            return Err(JsError::new("already at the final stage"));
        }
        self.trainer.advance_stage()?;
        Ok(self.stage())
    }

    fn render_image(&self, view: u32) -> Result<ImageBuffer, JsError> {
        let v = self
            .manifest
            .views
            .get(view as usize)
            .ok_or_else(|| JsError::new("no such view"))?;
        let (img, _) = render_view(&self.trainer.net, &v.camera, &self.manifest.ndc, None, &RenderOptions::default())?;
        Ok(img)
    }

    /// Network render of a view as RGBA pixels.
    pub fn render(&self, view: u32) -> Result<Vec<u8>, JsError> {
        Ok(rgba(&self.render_image(view)?))
    }

    pub fn psnr(&self, view: u32) -> Result<f64, JsError> {
        let img = self.render_image(view)?;
        Ok(psnr(&img, &self.images[view as usize])?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_round_trip() {
        let mut demo = Demo::new(1, 16).unwrap();
        assert_eq!(demo.num_views(), 9);
        assert_eq!(demo.ground_truth(0).len(), 16 * 16 * 4);
        let before = demo.render(4).unwrap();
        demo.train(3).unwrap();
        assert!(demo.last_loss().is_finite());
        let trained = demo.render(4).unwrap();
        assert_ne!(before, trained);
        assert_eq!(demo.transition().unwrap(), 1);
        let after = demo.render(4).unwrap();
        let worst = trained.iter().zip(&after).map(|(a, b)| a.abs_diff(*b)).max().unwrap();
        assert!(worst <= 1);
        assert!(demo.psnr(4).unwrap() > 0.0);
    }
}
