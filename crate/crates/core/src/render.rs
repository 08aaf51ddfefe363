//! Front-to-back alpha compositing of per-depth samples with forward
//! tangents and a hand-written reverse rule covering every channel.

use crate::diffcore::{CustomOp, DenseMatrix, DualBatch, Tape, ValueId};
use crate::error::{Error, Result};
use crate::lfnet::{DepthGrid, RadianceSamples};
use crate::real::{Precision, Real};

/// Handles to composited color (`batch x 3`) and `(acc, d_hat)` (`batch x 2`).
#[derive(Clone, Copy, Debug)]
pub struct RenderOutput {
    pub color: ValueId,
    pub geom: ValueId,
}

pub const GEOM_ACC: usize = 0;
pub const GEOM_DEPTH: usize = 1;

fn check_inputs<T: Real>(sigma: &DualBatch<T>, color: &DualBatch<T>, grid: &DepthGrid) -> Result<()> {
    let d = grid.len();
    if sigma.features() != d {
        return Err(Error::dim("composite densities", d, sigma.features()));
    }
    if color.features() != 3 * d {
        return Err(Error::dim("composite colors", 3 * d, color.features()));
    }
    if color.batch() != sigma.batch() || color.num_tangents() != sigma.num_tangents() {
        return Err(Error::dim("composite batch", sigma.shape_string(), color.shape_string()));
    }
    for (r, row) in sigma.primal().chunks(d).enumerate() {
        for (i, &s) in row.iter().enumerate() {
            if !(s >= T::zero()) {
                if s.is_nan() {
                    return Err(Error::NonFinite(format!("density at ray {r}, sample {i}")));
                }
                return Err(Error::NegativeDensity {
                    ray: r,
                    sample: i,
                    value: s.f64(),
                });
            }
        }
    }
    Ok(())
}

/// Composites densities (`batch x D`) and colors (`batch x 3D`) into color
/// and `(acc, d_hat)` for every channel.
pub fn composite_values<T: Real>(
    sigma: &DualBatch<T>,
    color: &DualBatch<T>,
    grid: &DepthGrid,
) -> Result<(DualBatch<T>, DualBatch<T>)> {
    check_inputs(sigma, color, grid)?;
    let (n, d, k) = (sigma.batch(), grid.len(), sigma.num_tangents());
    let delta = T::lit(grid.delta());
    let depth: Vec<T> = grid.values().iter().map(|&x| T::lit(x)).collect();
    let mut out_c = DualBatch::zeros(n, 3, k);
    let mut out_g = DualBatch::zeros(n, 2, k);
    let mut tdot = vec![T::zero(); k];
    let mut adot = vec![T::zero(); k];
    for r in 0..n {
        let sig = &sigma.primal()[r * d..(r + 1) * d];
        let col = &color.primal()[r * 3 * d..(r + 1) * 3 * d];
        let mut t = T::one();
        tdot.iter_mut().for_each(|x| *x = T::zero());
        let mut c = [T::zero(); 3];
        let (mut acc, mut dh) = (T::zero(), T::zero());
        let mut cdot = vec![[T::zero(); 3]; k];
        let mut accdot = vec![T::zero(); k];
        let mut dhdot = vec![T::zero(); k];
        for i in 0..d {
            let alpha = T::one() - (-delta * sig[i]).exp();
            let a = T::one() - alpha;
            let w = t * alpha;
            for ch in 0..3 {
                c[ch] = c[ch] + w * col[3 * i + ch];
            }
            acc = acc + w;
            dh = dh + w * depth[i];
            for kk in 0..k {
                let sd = sigma.tangent(kk)[r * d + i];
                let cd = &color.tangent(kk)[r * 3 * d + 3 * i..r * 3 * d + 3 * i + 3];
                adot[kk] = -delta * sd * a;
                let wd = tdot[kk] * alpha - t * adot[kk];
                for ch in 0..3 {
                    cdot[kk][ch] = cdot[kk][ch] + (wd * col[3 * i + ch] + w * cd[ch]);
                }
                accdot[kk] = accdot[kk] + wd;
                dhdot[kk] = dhdot[kk] + wd * depth[i];
                tdot[kk] = tdot[kk] * a + t * adot[kk];
            }
            t = t * a;
        }
        out_c.primal_mut()[3 * r..3 * r + 3].copy_from_slice(&c);
        out_g.primal_mut()[2 * r] = acc;
        out_g.primal_mut()[2 * r + 1] = dh;
        for kk in 0..k {
            out_c.tangent_mut(kk)[3 * r..3 * r + 3].copy_from_slice(&cdot[kk]);
            out_g.tangent_mut(kk)[2 * r] = accdot[kk];
            out_g.tangent_mut(kk)[2 * r + 1] = dhdot[kk];
        }
    }
    Ok((out_c, out_g))
}

struct CompositeOp {
    depth: Vec<f64>,
    delta: f64,
}

impl<T: Real> CustomOp<T> for CompositeOp {
    fn name(&self) -> &'static str {
        "composite"
    }

    fn reverse(
        &self,
        inputs: &[&DualBatch<T>],
        _outputs: &[&DualBatch<T>],
        output_adjoints: &[Option<&DualBatch<T>>],
    ) -> Result<Vec<Option<DualBatch<T>>>> {
        let (sigma, color) = (inputs[0], inputs[1]);
        let (n, d, k) = (sigma.batch(), self.depth.len(), sigma.num_tangents());
        let cbar = output_adjoints[0].cloned().unwrap_or_else(|| DualBatch::zeros(n, 3, k));
        let gbar = output_adjoints[1].cloned().unwrap_or_else(|| DualBatch::zeros(n, 2, k));
        let delta = T::lit(self.delta);
        let depth: Vec<T> = self.depth.iter().map(|&x| T::lit(x)).collect();
        let mut sbar = DualBatch::zeros(n, d, k);
        let mut colbar = DualBatch::zeros(n, 3 * d, k);

        // per-ray forward replay
        let mut ts = vec![T::zero(); d];
        let mut alphas = vec![T::zero(); d];
        let mut tdots = vec![T::zero(); d * k];
        let mut adots = vec![T::zero(); d * k];
        let mut wdot = vec![T::zero(); k];
        let mut wdotbar = vec![T::zero(); k];
        let mut adotbar = vec![T::zero(); k];
        let mut tdot_next_bar = vec![T::zero(); k];
        for r in 0..n {
            let sig = &sigma.primal()[r * d..(r + 1) * d];
            let col = &color.primal()[r * 3 * d..(r + 1) * 3 * d];
            let mut t = T::one();
            let mut tdot = vec![T::zero(); k];
            for i in 0..d {
                let alpha = T::one() - (-delta * sig[i]).exp();
                let a = T::one() - alpha;
                ts[i] = t;
                alphas[i] = alpha;
                for kk in 0..k {
                    let ad = -delta * sigma.tangent(kk)[r * d + i] * a;
                    tdots[i * k + kk] = tdot[kk];
                    adots[i * k + kk] = ad;
                    tdot[kk] = tdot[kk] * a + t * ad;
                }
                t = t * a;
            }

            let cb = &cbar.primal()[3 * r..3 * r + 3];
            let (accb, dhb) = (gbar.primal()[2 * r], gbar.primal()[2 * r + 1]);
            let mut tnext_bar = T::zero();
            tdot_next_bar.iter_mut().for_each(|x| *x = T::zero());
            for i in (0..d).rev() {
                let (t, alpha) = (ts[i], alphas[i]);
                let a = T::one() - alpha;
                let w = t * alpha;
                let ci = &col[3 * i..3 * i + 3];
                let mut wbar = cb[0] * ci[0] + cb[1] * ci[1] + cb[2] * ci[2] + accb + dhb * depth[i];
                let mut cibar = [w * cb[0], w * cb[1], w * cb[2]];
                for kk in 0..k {
                    let cdb = &cbar.tangent(kk)[3 * r..3 * r + 3];
                    let accdb = gbar.tangent(kk)[2 * r];
                    let dhdb = gbar.tangent(kk)[2 * r + 1];
                    let (td, ad) = (tdots[i * k + kk], adots[i * k + kk]);
                    let cd = &color.tangent(kk)[r * 3 * d + 3 * i..r * 3 * d + 3 * i + 3];
                    wbar = wbar + cdb[0] * cd[0] + cdb[1] * cd[1] + cdb[2] * cd[2];
                    wdot[kk] = td * alpha - t * ad;
                    wdotbar[kk] = cdb[0] * ci[0] + cdb[1] * ci[1] + cdb[2] * ci[2] + accdb + dhdb * depth[i];
                    for ch in 0..3 {
                        cibar[ch] = cibar[ch] + wdot[kk] * cdb[ch];
                    }
                    let cdot_bar = &mut colbar.tangent_mut(kk)[r * 3 * d + 3 * i..r * 3 * d + 3 * i + 3];
                    for ch in 0..3 {
                        cdot_bar[ch] = w * cdb[ch];
                    }
                }
                colbar.primal_mut()[r * 3 * d + 3 * i..r * 3 * d + 3 * i + 3].copy_from_slice(&cibar);

                let mut alpha_bar = wbar * t;
                let mut a_bar = tnext_bar * t;
                let mut t_bar = wbar * alpha + tnext_bar * a;
                for kk in 0..k {
                    let (td, ad) = (tdots[i * k + kk], adots[i * k + kk]);
                    alpha_bar = alpha_bar + wdotbar[kk] * td;
                    a_bar = a_bar + tdot_next_bar[kk] * td;
                    t_bar = t_bar - wdotbar[kk] * ad + tdot_next_bar[kk] * ad;
                    adotbar[kk] = (tdot_next_bar[kk] - wdotbar[kk]) * t;
                }
                a_bar = a_bar - alpha_bar;
                for kk in 0..k {
                    let sd = sigma.tangent(kk)[r * d + i];
                    a_bar = a_bar - adotbar[kk] * delta * sd;
                    sbar.tangent_mut(kk)[r * d + i] = -delta * a * adotbar[kk];
                    tdot_next_bar[kk] = wdotbar[kk] * alpha + tdot_next_bar[kk] * a;
                }
                sbar.primal_mut()[r * d + i] = -delta * a * a_bar;
                tnext_bar = t_bar;
            }
        }
        Ok(vec![Some(sbar), Some(colbar)])
    }
}

/// Adjoints of the compositor inputs for the given output adjoints.
pub fn composite_adjoints<T: Real>(
    sigma: &DualBatch<T>,
    color: &DualBatch<T>,
    grid: &DepthGrid,
    color_bar: Option<&DualBatch<T>>,
    geom_bar: Option<&DualBatch<T>>,
) -> Result<(DualBatch<T>, DualBatch<T>)> {
    check_inputs(sigma, color, grid)?;
    let op = CompositeOp {
        depth: grid.values().to_vec(),
        delta: grid.delta(),
    };
    let mut adj = CustomOp::<T>::reverse(&op, &[sigma, color], &[], &[color_bar, geom_bar])?.into_iter();
    Ok((adj.next().flatten().unwrap(), adj.next().flatten().unwrap()))
}

/// Records compositing of `samples` on the tape.
pub fn composite<T: Real>(samples: &RadianceSamples, grid: &DepthGrid, tape: &mut Tape<T>) -> Result<RenderOutput> {
    let (c, g) = composite_values(tape.value(samples.sigma)?, tape.value(samples.color)?, grid)?;
    let op = CompositeOp {
        depth: grid.values().to_vec(),
        delta: grid.delta(),
    };
    let ids = tape.custom(&[samples.sigma, samples.color], vec![c, g], Box::new(op))?;
    Ok(RenderOutput {
        color: ids[0],
        geom: ids[1],
    })
}

/// Largest difference in color and acc between compositing the samples and
/// compositing each sample duplicated on the refined grid.
pub fn composite_subdivision_gap<T: Real>(sigma: &DenseMatrix<T>, color: &DenseMatrix<T>, grid: &DepthGrid) -> Result<f64> {
    let (n, d) = (sigma.rows(), grid.len());
    let fine = grid.refined();
    let s2 = DenseMatrix::from_fn(n, 2 * d, |r, j| sigma.get(r, j / 2));
    let c2 = DenseMatrix::from_fn(n, 6 * d, |r, j| color.get(r, 3 * (j / 6) + j % 3));
    let (ca, ga) = composite_values(&DualBatch::constant(sigma.clone()), &DualBatch::constant(color.clone()), grid)?;
    let (cb, gb) = composite_values(&DualBatch::constant(s2), &DualBatch::constant(c2), &fine)?;
    let mut gap = 0.0f64;
    for (x, y) in ca.primal().iter().zip(cb.primal()) {
        gap = gap.max((x.f64() - y.f64()).abs());
    }
    for r in 0..n {
        gap = gap.max((ga.primal()[2 * r].f64() - gb.primal()[2 * r].f64()).abs());
    }
    Ok(gap)
}

/// Whether duplicated samples on the refined grid reproduce color and acc.
pub fn composite_depth_subdivision_check<T: Real>(sigma: &DenseMatrix<T>, color: &DenseMatrix<T>, grid: &DepthGrid) -> bool {
    let tol = match T::PRECISION {
        Precision::F64 => 1e-12,
        Precision::F32 => 1e-5,
    };
    matches!(composite_subdivision_gap(sigma, color, grid), Ok(g) if g <= tol)
}
