//! Photometric loss and the two multi-view consistency penalties built from
//! the Jacobian of the light field with respect to `(u, v, s, t)`.
//!
//! Every penalty comes with its adjoint so the reverse sweep can push it
//! back through the tangent channels.

use serde::{Deserialize, Serialize};

use crate::diffcore::{DualBatch, Tape};
use crate::error::{Error, Result};
use crate::lfnet::{forward, DepthGrid, ProLiFNetwork, RadianceSamples};
use crate::rays::{basis_seeds, point_batch, RayBatch, BatchKind};
use crate::real::Real;
use crate::render::{composite, RenderOutput, GEOM_ACC, GEOM_DEPTH};

/// Tangent channel order of a Jacobian pass.
pub const DIR_U: usize = 0;
pub const DIR_V: usize = 1;
pub const DIR_S: usize = 2;
pub const DIR_T: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_density: f64,
    pub lambda_color: f64,
    pub smooth_l1_beta: f64,
    /// Rays with lower accumulated opacity are left out of the color penalty.
    pub acc_threshold: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_density: 1e-3,
            lambda_color: 1e-2,
            smooth_l1_beta: 1.0,
            acc_threshold: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda_density >= 0.0
            && self.lambda_color >= 0.0
            && self.smooth_l1_beta > 0.0
            && self.acc_threshold >= 0.0;
        if !ok {
            return Err(Error::InvalidConfig(format!("invalid loss weights {self:?}")));
        }
        Ok(())
    }
}

pub fn smooth_l1(x: f64, beta: f64) -> f64 {
    if x.abs() < beta {
        0.5 * x * x / beta
    } else {
        x.abs() - 0.5 * beta
    }
}

pub fn smooth_l1_grad(x: f64, beta: f64) -> f64 {
    if x.abs() < beta {
        x / beta
    } else {
        x.signum()
    }
}

/// Mean over rays of the squared color error; returns the loss and its
/// adjoint with respect to `color`.
pub fn render_loss_with_grad<T: Real>(color: &[T], target: &[[f64; 3]]) -> Result<(f64, Vec<T>)> {
    if color.len() != 3 * target.len() {
        return Err(Error::dim("render_loss", 3 * target.len(), color.len()));
    }
    if target.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = target.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(color.len());
    for (c, gt) in color.chunks(3).zip(target) {
        for ch in 0..3 {
            let e = c[ch].f64() - gt[ch];
            loss += e * e;
            grad.push(T::lit(2.0 * e / n));
        }
    }
    Ok((loss / n, grad))
}

pub fn render_loss<T: Real>(color: &[T], target: &[[f64; 3]]) -> Result<f64> {
    render_loss_with_grad(color, target).map(|r| r.0)
}

/// Tape handles of a Jacobian pass.
#[derive(Clone, Copy, Debug)]
pub struct JacobianPass {
    pub samples: RadianceSamples,
    pub render: RenderOutput,
}

/// Values of a Jacobian pass: per-sample densities and composited
/// color/geometry, each with tangents along `e_u, e_v, e_s, e_t`.
#[derive(Clone, Copy, Debug)]
pub struct JacobianBundle<'a, T> {
    pub sigma: &'a DualBatch<T>,
    pub color: &'a DualBatch<T>,
    pub geom: &'a DualBatch<T>,
}

impl<'a, T: Real> JacobianBundle<'a, T> {
    pub fn new(sigma: &'a DualBatch<T>, color: &'a DualBatch<T>, geom: &'a DualBatch<T>) -> Result<Self> {
        for (what, v) in [("densities", sigma), ("color", color), ("geometry", geom)] {
            if v.num_tangents() != 4 || v.batch() != sigma.batch() {
                return Err(Error::dim("jacobian bundle", "4 tangents per ray", format!("{what} {}", v.shape_string())));
            }
        }
        if color.features() != 3 || geom.features() != 2 {
            return Err(Error::dim("jacobian bundle", "color x3, geometry x2", format!("{} / {}", color.features(), geom.features())));
        }
        Ok(Self { sigma, color, geom })
    }

    pub fn from_tape(tape: &'a Tape<T>, pass: &JacobianPass) -> Result<Self> {
        Self::new(
            tape.value(pass.samples.sigma)?,
            tape.value(pass.render.color)?,
            tape.value(pass.render.geom)?,
        )
    }

    pub fn num_rays(&self) -> usize {
        self.sigma.batch()
    }

    /// `dsigma_i / d(dir)` for ray `r`.
    pub fn j_sigma(&self, r: usize, i: usize, dir: usize) -> T {
        self.sigma.tangent(dir)[r * self.sigma.features() + i]
    }

    /// `dC_ch / d(dir)` for ray `r`.
    pub fn j_color(&self, r: usize, ch: usize, dir: usize) -> T {
        self.color.tangent(dir)[3 * r + ch]
    }

    pub fn acc(&self, r: usize) -> T {
        self.geom.primal()[2 * r + GEOM_ACC]
    }

    pub fn depth(&self, r: usize) -> T {
        self.geom.primal()[2 * r + GEOM_DEPTH]
    }
}

/// Records one forward pass over regularization rays with the four basis
/// tangent directions.
pub fn jacobian_bundle<T: Real>(net: &ProLiFNetwork<T>, rays: &RayBatch, tape: &mut Tape<T>) -> Result<JacobianPass> {
    if rays.kind != BatchKind::Regularization {
        return Err(Error::InvalidConfig("jacobian pass expects regularization rays".into()));
    }
    let coords = tape.input(point_batch(&rays.rays, &net.grid, &basis_seeds())?)?;
    let samples = forward(net, coords, tape)?;
    tape.release(coords);
    let render = composite(&samples, &net.grid, tape)?;
    Ok(JacobianPass { samples, render })
}

/// Density penalty and its adjoint on the density tangents.
pub fn density_consistency_with_grad<T: Real>(b: &JacobianBundle<'_, T>, grid: &DepthGrid) -> Result<(f64, DualBatch<T>)> {
    let (n, d) = (b.num_rays(), grid.len());
    if b.sigma.features() != d {
        return Err(Error::dim("density_consistency", d, b.sigma.features()));
    }
    let mut adj = DualBatch::zeros(n, d, 4);
    if n == 0 {
        return Ok((0.0, adj));
    }
    let norm = 1.0 / (n * d) as f64;
    let mut loss = 0.0;
    for r in 0..n {
        for (i, &di) in grid.values().iter().enumerate() {
            let idx = r * d + i;
            for (near, far) in [(DIR_U, DIR_S), (DIR_V, DIR_T)] {
                let proj = di * b.j_sigma(r, i, near).f64() - (1.0 - di) * b.j_sigma(r, i, far).f64();
                loss += proj * proj;
                adj.tangent_mut(near)[idx] = T::lit(2.0 * proj * di * norm);
                adj.tangent_mut(far)[idx] = T::lit(-2.0 * proj * (1.0 - di) * norm);
            }
        }
    }
    Ok((loss * norm, adj))
}

pub fn density_consistency<T: Real>(b: &JacobianBundle<'_, T>, grid: &DepthGrid) -> Result<f64> {
    density_consistency_with_grad(b, grid).map(|r| r.0)
}

/// Color penalty and its adjoint on the composited color tangents. The
/// expected depth enters as a constant.
pub fn color_consistency_with_grad<T: Real>(b: &JacobianBundle<'_, T>, weights: &LossWeights) -> Result<(f64, DualBatch<T>)> {
    color_consistency_impl(b, weights, None)
}

/// Color penalty with the expected depth of every ray pinned to `depths`.
pub fn color_consistency_at_depths<T: Real>(
    b: &JacobianBundle<'_, T>,
    weights: &LossWeights,
    depths: &[f64],
) -> Result<(f64, DualBatch<T>)> {
    if depths.len() != b.num_rays() {
        return Err(Error::dim("color_consistency depths", b.num_rays(), depths.len()));
    }
    color_consistency_impl(b, weights, Some(depths))
}

fn color_consistency_impl<T: Real>(
    b: &JacobianBundle<'_, T>,
    weights: &LossWeights,
    depths: Option<&[f64]>,
) -> Result<(f64, DualBatch<T>)> {
    let n = b.num_rays();
    let mut adj = DualBatch::zeros(n, 3, 4);
    let kept: Vec<usize> = (0..n).filter(|&r| b.acc(r).f64() >= weights.acc_threshold).collect();
    if kept.is_empty() {
        return Ok((0.0, adj));
    }
    let beta = weights.smooth_l1_beta;
    let norm = 1.0 / kept.len() as f64;
    let mut loss = 0.0;
    for &r in &kept {
        let dh = depths.map_or_else(|| b.depth(r).f64(), |d| d[r]);
        for ch in 0..3 {
            for (near, far) in [(DIR_U, DIR_S), (DIR_V, DIR_T)] {
                let proj = dh * b.j_color(r, ch, near).f64() - (1.0 - dh) * b.j_color(r, ch, far).f64();
                loss += smooth_l1(proj, beta);
                let g = smooth_l1_grad(proj, beta) * norm;
                adj.tangent_mut(near)[3 * r + ch] = T::lit(g * dh);
                adj.tangent_mut(far)[3 * r + ch] = T::lit(-g * (1.0 - dh));
            }
        }
    }
    Ok((loss * norm, adj))
}

pub fn color_consistency<T: Real>(b: &JacobianBundle<'_, T>, weights: &LossWeights) -> Result<f64> {
    color_consistency_with_grad(b, weights).map(|r| r.0)
}

/// Weighted sum of the three terms; fails on any non-finite component.
pub fn total_loss(render: f64, density: f64, color: f64, weights: &LossWeights) -> Result<f64> {
    for (name, v) in [("render", render), ("density", density), ("color", color)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} loss is {v}")));
        }
    }
    Ok(render + weights.lambda_density * density + weights.lambda_color * color)
}
