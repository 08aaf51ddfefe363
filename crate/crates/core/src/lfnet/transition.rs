//! Stage transitions that grow the network without changing what it
//! renders: merging neighbouring subnetworks block-diagonally and doubling
//! the depth samples.

use crate::diffcore::{effective_weight, DenseMatrix, LayerParams, ParamGradients};
use crate::error::{Error, Result};
use crate::lfnet::network::{LayerLayout, ProLiFNetwork, SubnetworkParams};
use crate::real::Real;

/// How a tensor triple is rewritten: parameters go through their effective
/// weight and are reparameterized, optimizer moments are moved slot by slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Params,
    Moments,
}

fn weight_of<T: Real>(layer: &LayerParams<T>, mode: Mode) -> Result<DenseMatrix<T>> {
    match mode {
        Mode::Params => effective_weight(layer),
        Mode::Moments => Ok(layer.v.clone()),
    }
}

fn rebuild<T: Real>(w: DenseMatrix<T>, g: Vec<T>, b: Vec<T>, mode: Mode) -> Result<LayerParams<T>> {
    match mode {
        Mode::Params => LayerParams::from_effective(w, b),
        Mode::Moments => Ok(LayerParams { v: w, g, b }),
    }
}

/// Block-diagonal merge of one layer of two neighbouring subnetworks.
///
/// Merged input columns are `[hidden_a, hidden_b, raw_a, raw_b]`, output rows
/// are `[rows_a; rows_b]`, off-diagonal blocks are zero.
pub fn merge_layer<T: Real>(
    a: &DenseMatrix<T>,
    la: LayerLayout,
    b: &DenseMatrix<T>,
    lb: LayerLayout,
) -> (DenseMatrix<T>, LayerLayout) {
    let merged = LayerLayout {
        hidden_in: la.hidden_in + lb.hidden_in,
        raw_in: la.raw_in + lb.raw_in,
    };
    let mut w = DenseMatrix::zeros(a.rows() + b.rows(), merged.width());
    let raw_base = merged.hidden_in;
    for r in 0..a.rows() {
        let src = a.row(r);
        let dst = w.row_mut(r);
        dst[..la.hidden_in].copy_from_slice(&src[..la.hidden_in]);
        dst[raw_base..raw_base + la.raw_in].copy_from_slice(&src[la.hidden_in..]);
    }
    for r in 0..b.rows() {
        let src = b.row(r);
        let dst = w.row_mut(a.rows() + r);
        dst[la.hidden_in..la.hidden_in + lb.hidden_in].copy_from_slice(&src[..lb.hidden_in]);
        let rb = raw_base + la.raw_in;
        dst[rb..rb + lb.raw_in].copy_from_slice(&src[lb.hidden_in..]);
    }
    (w, merged)
}

fn merge_pair<T: Real>(
    a: &[LayerParams<T>],
    b: &[LayerParams<T>],
    layout_a: &[LayerLayout],
    layout_b: &[LayerLayout],
    mode: Mode,
) -> Result<(Vec<LayerParams<T>>, Vec<LayerLayout>)> {
    let mut layers = Vec::with_capacity(a.len());
    let mut layout = Vec::with_capacity(a.len());
    for l in 0..a.len() {
        let wa = weight_of(&a[l], mode)?;
        let wb = weight_of(&b[l], mode)?;
        let (w, lay) = merge_layer(&wa, layout_a[l], &wb, layout_b[l]);
        let g = a[l].g.iter().chain(&b[l].g).copied().collect();
        let bias = a[l].b.iter().chain(&b[l].b).copied().collect();
        layers.push(rebuild(w, g, bias, mode)?);
        layout.push(lay);
    }
    Ok((layers, layout))
}

fn check_mergeable<T: Real>(net: &ProLiFNetwork<T>) -> Result<()> {
    if net.is_final_stage() {
        return Err(Error::Stage(format!(
            "stage {} is the final stage of {}",
            net.stage, net.config.num_stages
        )));
    }
    if net.subnets.len() % 2 != 0 {
        return Err(Error::Stage(format!("cannot merge an odd subnet count {}", net.subnets.len())));
    }
    Ok(())
}

/// Merges subnetworks `2i` and `2i + 1` into subnetwork `i` and advances the
/// stage index. The represented function is unchanged.
pub fn merge_stage<T: Real>(net: &ProLiFNetwork<T>) -> Result<ProLiFNetwork<T>> {
    check_mergeable(net)?;
    let mut subnets = Vec::with_capacity(net.subnets.len() / 2);
    for pair in net.subnets.chunks(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let (layers, layout) = merge_pair(&a.layers, &b.layers, &a.layout, &b.layout, Mode::Params)?;
        subnets.push(SubnetworkParams {
            layers,
            layout,
            samples: a.samples + b.samples,
        });
    }
    let out = ProLiFNetwork {
        config: net.config.clone(),
        stage: net.stage + 1,
        grid: net.grid.clone(),
        subnets,
    };
    out.check()?;
    Ok(out)
}

/// Splits raw-coordinate columns: column `2i + c` (sample `i`, axis `c`)
/// becomes columns `2(2i) + c` and `2(2i + 1) + c`, each scaled by `factor`.
fn split_raw_columns<T: Real>(w: &DenseMatrix<T>, lay: LayerLayout, factor: T) -> (DenseMatrix<T>, LayerLayout) {
    let new_lay = LayerLayout {
        hidden_in: lay.hidden_in,
        raw_in: 2 * lay.raw_in,
    };
    let mut out = DenseMatrix::zeros(w.rows(), new_lay.width());
    for r in 0..w.rows() {
        let src = w.row(r);
        let dst = out.row_mut(r);
        dst[..lay.hidden_in].copy_from_slice(&src[..lay.hidden_in]);
        for col in 0..lay.raw_in {
            let (i, c) = (col / 2, col % 2);
            let val = src[lay.hidden_in + col] * factor;
            dst[lay.hidden_in + 2 * (2 * i) + c] = val;
            dst[lay.hidden_in + 2 * (2 * i + 1) + c] = val;
        }
    }
    (out, new_lay)
}

/// Copies each sample's four output rows to its two child samples.
fn duplicate_output_rows<T: Real>(w: &DenseMatrix<T>, rows_vec: &[&[T]]) -> (DenseMatrix<T>, Vec<Vec<T>>) {
    let samples = w.rows() / 4;
    let mut out = DenseMatrix::zeros(2 * w.rows(), w.cols());
    let mut vecs: Vec<Vec<T>> = rows_vec.iter().map(|_| vec![T::zero(); 2 * w.rows()]).collect();
    for i in 0..samples {
        for child in [2 * i, 2 * i + 1] {
            for q in 0..4 {
                out.row_mut(4 * child + q).copy_from_slice(w.row(4 * i + q));
                for (dst, src) in vecs.iter_mut().zip(rows_vec) {
                    dst[4 * child + q] = src[4 * i + q];
                }
            }
        }
    }
    (out, vecs)
}

fn subdivide_subnet<T: Real>(
    layers: &[LayerParams<T>],
    layout: &[LayerLayout],
    mode: Mode,
) -> Result<(Vec<LayerParams<T>>, Vec<LayerLayout>)> {
    let half = match mode {
        Mode::Params => T::lit(0.5),
        Mode::Moments => T::one(),
    };
    let last = layers.len() - 1;
    let mut new_layers = Vec::with_capacity(layers.len());
    let mut new_layout = Vec::with_capacity(layers.len());
    for (l, (layer, &lay)) in layers.iter().zip(layout).enumerate() {
        let touches_input = lay.raw_in > 0;
        if !touches_input && l != last {
            new_layers.push(layer.clone());
            new_layout.push(lay);
            continue;
        }
        let mut w = weight_of(layer, mode)?;
        let mut g = layer.g.clone();
        let mut b = layer.b.clone();
        let mut lay = lay;
        if touches_input {
            let (nw, nl) = split_raw_columns(&w, lay, half);
            w = nw;
            lay = nl;
        }
        if l == last {
            let (nw, mut vecs) = duplicate_output_rows(&w, &[&g, &b]);
            w = nw;
            b = vecs.pop().unwrap();
            g = vecs.pop().unwrap();
        }
        new_layers.push(rebuild(w, g, b, mode)?);
        new_layout.push(lay);
    }
    Ok((new_layers, new_layout))
}

/// Doubles the depth samples. Input columns are split in half between the
/// two child samples (whose midpoint is the parent point) and output rows are
/// copied, so every child carries its parent's density and color and the
/// composited color is unchanged.
pub fn subdivide_depth<T: Real>(net: &ProLiFNetwork<T>) -> Result<ProLiFNetwork<T>> {
    let target = 2 * net.grid.len();
    if target > net.config.max_depth_samples() {
        return Err(Error::Stage(format!(
            "depth samples {} already at maximum {}",
            net.grid.len(),
            net.config.max_depth_samples()
        )));
    }
    let mut subnets = Vec::with_capacity(net.subnets.len());
    for sub in &net.subnets {
        let (layers, layout) = subdivide_subnet(&sub.layers, &sub.layout, Mode::Params)?;
        subnets.push(SubnetworkParams {
            layers,
            layout,
            samples: 2 * sub.samples,
        });
    }
    let out = ProLiFNetwork {
        config: net.config.clone(),
        stage: net.stage,
        grid: net.grid.refined(),
        subnets,
    };
    out.check()?;
    Ok(out)
}

/// Advances to the next stage: merge, then subdivide.
pub fn transition<T: Real>(net: &ProLiFNetwork<T>) -> Result<ProLiFNetwork<T>> {
    let merged = merge_stage(net)?;
    subdivide_depth(&merged)
}

/// Carries optimizer moments through [`transition`]: existing slots move to
/// their new positions, new off-diagonal slots start at zero and split or
/// copied slots inherit the parent's moment.
pub fn transition_moments<T: Real>(net_before: &ProLiFNetwork<T>, moments: &ParamGradients<T>) -> Result<ParamGradients<T>> {
    check_mergeable(net_before)?;
    if moments.subnets.len() != net_before.subnets.len() {
        return Err(Error::dim("transition_moments", net_before.subnets.len(), moments.subnets.len()));
    }
    let mut out = Vec::with_capacity(moments.subnets.len() / 2);
    for (pair, nets) in moments.subnets.chunks(2).zip(net_before.subnets.chunks(2)) {
        let (merged, layout) = merge_pair(&pair[0], &pair[1], &nets[0].layout, &nets[1].layout, Mode::Moments)?;
        let (sub, _) = subdivide_subnet(&merged, &layout, Mode::Moments)?;
        out.push(sub);
    }
    Ok(ParamGradients { subnets: out })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_layers_merge_to_diagonal() {
        let a = DenseMatrix::from_vec(1, 1, vec![2.5f64]).unwrap();
        let b = DenseMatrix::from_vec(1, 1, vec![-0.75f64]).unwrap();
        let lay = LayerLayout { hidden_in: 1, raw_in: 0 };
        let (w, merged) = merge_layer(&a, lay, &b, lay);
        assert_eq!(w.data(), &[2.5, 0.0, 0.0, -0.75]);
        assert_eq!(merged, LayerLayout { hidden_in: 2, raw_in: 0 });
    }

    #[test]
    fn skip_layer_merge_keeps_raw_columns_grouped() {
        let la = LayerLayout { hidden_in: 1, raw_in: 2 };
        let a = DenseMatrix::from_vec(1, 3, vec![1.0f64, 2.0, 3.0]).unwrap();
        let b = DenseMatrix::from_vec(1, 3, vec![4.0f64, 5.0, 6.0]).unwrap();
        let (w, merged) = merge_layer(&a, la, &b, la);
        assert_eq!(merged, LayerLayout { hidden_in: 2, raw_in: 4 });
        assert_eq!(w.row(0), &[1.0, 0.0, 2.0, 3.0, 0.0, 0.0]);
        assert_eq!(w.row(1), &[0.0, 4.0, 0.0, 0.0, 5.0, 6.0]);
    }

    #[test]
    fn raw_column_split_halves_values() {
        let lay = LayerLayout { hidden_in: 0, raw_in: 2 };
        let w = DenseMatrix::from_vec(1, 2, vec![4.0f64, -2.0]).unwrap();
        let (out, nl) = split_raw_columns(&w, lay, 0.5);
        assert_eq!(nl.raw_in, 4);
        assert_eq!(out.row(0), &[2.0, -1.0, 2.0, -1.0]);
    }
}
