use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::{psnr, ssim};
use crate::eval::render::{render_view, RenderOptions};
use crate::lfnet::{write_atomic, ProLiFNetwork};
use crate::real::Real;
use crate::scene::{read_image, LoadedScene, Split};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewReport {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    /// Render wall time; zero when comparing stored images.
    pub ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewReport>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    #[serde(default)]
    pub rays_per_sec: f64,
}

impl EvalReport {
    pub fn from_views(views: Vec<ViewReport>, rays_per_sec: f64) -> Self {
        let n = views.len().max(1) as f64;
        let mean_psnr = views.iter().map(|v| v.psnr).sum::<f64>() / n;
        let mean_ssim = views.iter().map(|v| v.ssim).sum::<f64>() / n;
        Self {
            views,
            mean_psnr,
            mean_ssim,
            rays_per_sec,
        }
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<24} {:>9} {:>8} {:>10}\n", "view", "psnr", "ssim", "ms");
        for v in &self.views {
            s += &format!("{:<24} {:>9.3} {:>8.4} {:>10.1}\n", v.name, v.psnr, v.ssim, v.ms);
        }
        s += &format!("{:<24} {:>9.3} {:>8.4}\n", "mean", self.mean_psnr, self.mean_ssim);
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }
}

/// Renders the views of `split` and scores them against their images.
pub fn evaluate<T: Real>(
    net: &ProLiFNetwork<T>,
    scene: &LoadedScene,
    split: Split,
    opts: &RenderOptions,
) -> Result<EvalReport> {
    let mut views = Vec::new();
    let (mut rays, mut secs) = (0usize, 0.0);
    for i in scene.indices(split) {
        let v = &scene.manifest.views[i];
        let (img, stats) = render_view(net, &v.camera, &scene.manifest.ndc, None, opts)?;
        rays += stats.rays;
        secs += stats.ms / 1000.0;
        views.push(ViewReport {
            name: v.name.clone(),
            psnr: psnr(&img, &scene.images[i])?,
            ssim: ssim(&img, &scene.images[i])?,
            ms: stats.ms,
        });
    }
    let rps = if secs > 0.0 { rays as f64 / secs } else { 0.0 };
    Ok(EvalReport::from_views(views, rps))
}

/// Scores every image in `renders` against the same-named file in `truth`.
pub fn compare_dirs(renders: &Path, truth: &Path) -> Result<EvalReport> {
    let mut names: Vec<_> = fs::read_dir(renders)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name())
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::InvalidConfig(format!("no images in {}", renders.display())));
    }
    let mut views = Vec::with_capacity(names.len());
    for name in names {
        let a = read_image(&renders.join(&name))?;
        let b = read_image(&truth.join(&name))?;
        views.push(ViewReport {
            name: Path::new(&name).file_stem().unwrap_or_default().to_string_lossy().into_owned(),
            psnr: psnr(&a, &b)?,
            ssim: ssim(&a, &b)?,
            ms: 0.0,
        });
    }
    Ok(EvalReport::from_views(views, 0.0))
}
