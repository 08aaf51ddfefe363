//! Image metrics, chunked rendering and evaluation reports.

mod metrics;
mod render;
mod report;

pub use metrics::{mse, psnr, psnr_from_mse, ssim, PSNR_CAP_DB, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use render::{
    chunk_bytes, path_cameras, render_rays, render_trajectory, render_view, FrameRecord, PathKind, PathSpec,
    RenderOptions, RenderStats, DEFAULT_CHUNK, DEFAULT_MEMORY_BUDGET,
};
pub use report::{compare_dirs, evaluate, EvalReport, ViewReport};
