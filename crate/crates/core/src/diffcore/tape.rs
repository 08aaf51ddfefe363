//! Recording of batched layer operations and the reverse sweep over them.
//!
//! Every value on the tape is a [`DualBatch`]: a primal block plus `K`
//! tangent blocks carried through the forward pass. The reverse sweep
//! propagates adjoints for *all* channels, so scalars built from tangent
//! outputs (input-gradient penalties) differentiate correctly with respect
//! to the parameters.

use std::collections::BTreeMap;

use crate::diffcore::dual::DualBatch;
use crate::diffcore::layer::{effective_weight, row_norm, ActivationKind, LayerParams, ParamGradients, ParamId};
use crate::diffcore::matrix::{gemm, DenseMatrix, Trans};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ValueId(usize);

/// An operation implemented outside the tape whose reverse rule the tape
/// invokes during the sweep.
pub trait CustomOp<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns one adjoint per input (`None` when it receives no gradient).
    fn reverse(
        &self,
        inputs: &[&DualBatch<T>],
        outputs: &[&DualBatch<T>],
        output_adjoints: &[Option<&DualBatch<T>>],
    ) -> Result<Vec<Option<DualBatch<T>>>>;
}

enum Node<T: Real> {
    Linear {
        param: ParamId,
        input: usize,
        output: usize,
        w: DenseMatrix<T>,
        v: DenseMatrix<T>,
        g: Vec<T>,
    },
    Activation {
        kind: ActivationKind,
        input: usize,
        output: usize,
    },
    Gather {
        input: usize,
        output: usize,
        cols: Vec<usize>,
    },
    Concat {
        inputs: Vec<usize>,
        output: usize,
    },
    Custom {
        inputs: Vec<usize>,
        outputs: Vec<usize>,
        op: Box<dyn CustomOp<T>>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TapeMode {
    /// Keep every value and operation for a later reverse sweep.
    Record,
    /// Forward only; values can be released as soon as they are dead.
    Inference,
}

pub struct Tape<T: Real> {
    mode: TapeMode,
    values: Vec<Option<DualBatch<T>>>,
    needs_grad: Vec<bool>,
    nodes: Vec<Node<T>>,
    tangents: Option<usize>,
    consumed: bool,
    live_bytes: usize,
    peak_bytes: usize,
}

struct LinearAcc<T> {
    wbar: DenseMatrix<T>,
    bbar: Vec<T>,
    v: DenseMatrix<T>,
    g: Vec<T>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self::with_mode(TapeMode::Record)
    }

    pub fn inference() -> Self {
        Self::with_mode(TapeMode::Inference)
    }

    pub fn with_mode(mode: TapeMode) -> Self {
        Self {
            mode,
            values: Vec::new(),
            needs_grad: Vec::new(),
            nodes: Vec::new(),
            tangents: None,
            consumed: false,
            live_bytes: 0,
            peak_bytes: 0,
        }
    }

    pub fn mode(&self) -> TapeMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Largest number of bytes held by live values at any point so far.
    pub fn peak_bytes(&self) -> usize {
        self.peak_bytes
    }

    pub fn live_bytes(&self) -> usize {
        self.live_bytes
    }

    pub fn num_tangents(&self) -> Option<usize> {
        self.tangents
    }

    fn push_value(&mut self, value: DualBatch<T>, needs_grad: bool) -> Result<ValueId> {
        match self.tangents {
            None => self.tangents = Some(value.num_tangents()),
            Some(k) if k != value.num_tangents() => {
                return Err(Error::dim("tape tangent count", k, value.num_tangents()))
            }
            _ => {}
        }
        self.live_bytes += value.size_bytes();
        self.peak_bytes = self.peak_bytes.max(self.live_bytes);
        self.values.push(Some(value));
        self.needs_grad.push(needs_grad);
        Ok(ValueId(self.values.len() - 1))
    }

    /// Registers a constant input; no adjoint is computed for it.
    pub fn input(&mut self, value: DualBatch<T>) -> Result<ValueId> {
        self.push_value(value, false)
    }

    pub fn value(&self, id: ValueId) -> Result<&DualBatch<T>> {
        self.values
            .get(id.0)
            .and_then(|v| v.as_ref())
            .ok_or_else(|| Error::dim("Tape::value", "live value", format!("released {id:?}")))
    }

    pub fn take_value(&mut self, id: ValueId) -> Result<DualBatch<T>> {
        let v = self
            .values
            .get_mut(id.0)
            .and_then(|v| v.take())
            .ok_or_else(|| Error::dim("Tape::take_value", "live value", format!("released {id:?}")))?;
        self.live_bytes -= v.size_bytes();
        Ok(v)
    }

    /// Frees a dead value in inference mode; recording tapes keep it.
    pub fn release(&mut self, id: ValueId) {
        if self.mode == TapeMode::Inference {
            if let Some(v) = self.values.get_mut(id.0).and_then(|v| v.take()) {
                self.live_bytes -= v.size_bytes();
            }
        }
    }

    fn recording(&self) -> bool {
        self.mode == TapeMode::Record
    }

    pub fn gather_cols(&mut self, x: ValueId, cols: &[usize]) -> Result<ValueId> {
        let xv = self.value(x)?;
        let f = xv.features();
        if let Some(&bad) = cols.iter().find(|&&c| c >= f) {
            return Err(Error::dim("gather_cols", format!("column < {f}"), bad));
        }
        let rows = xv.stacked().rows();
        let mut out = DenseMatrix::zeros(rows, cols.len());
        for r in 0..rows {
            let src = xv.stacked().row(r);
            for (dst, &c) in out.row_mut(r).iter_mut().zip(cols) {
                *dst = src[c];
            }
        }
        let out = DualBatch::from_stacked(xv.batch(), xv.num_tangents(), out)?;
        let ng = self.needs_grad[x.0];
        let id = self.push_value(out, ng)?;
        if self.recording() {
            self.nodes.push(Node::Gather {
                input: x.0,
                output: id.0,
                cols: cols.to_vec(),
            });
        }
        Ok(id)
    }

    pub fn concat_cols(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(Error::dim("concat_cols", "at least one part", 0));
        }
        let first = self.value(parts[0])?;
        let (batch, k) = (first.batch(), first.num_tangents());
        let rows = first.stacked().rows();
        let mut width = 0;
        for &p in parts {
            let v = self.value(p)?;
            if v.batch() != batch || v.num_tangents() != k {
                return Err(Error::dim("concat_cols", first.shape_string(), v.shape_string()));
            }
            width += v.features();
        }
        let mut out = DenseMatrix::zeros(rows, width);
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p)?.stacked();
            let w = v.cols();
            for r in 0..rows {
                out.row_mut(r)[offset..offset + w].copy_from_slice(v.row(r));
            }
            offset += w;
        }
        let ng = parts.iter().any(|p| self.needs_grad[p.0]);
        let id = self.push_value(DualBatch::from_stacked(batch, k, out)?, ng)?;
        if self.recording() {
            self.nodes.push(Node::Concat {
                inputs: parts.iter().map(|p| p.0).collect(),
                output: id.0,
            });
        }
        Ok(id)
    }

    /// Records an externally computed operation.
    pub fn custom(
        &mut self,
        inputs: &[ValueId],
        outputs: Vec<DualBatch<T>>,
        op: Box<dyn CustomOp<T>>,
    ) -> Result<Vec<ValueId>> {
        for &i in inputs {
            self.value(i)?;
        }
        let ng = inputs.iter().any(|p| self.needs_grad[p.0]);
        let mut ids = Vec::with_capacity(outputs.len());
        for o in outputs {
            ids.push(self.push_value(o, ng)?);
        }
        if self.recording() {
            self.nodes.push(Node::Custom {
                inputs: inputs.iter().map(|p| p.0).collect(),
                outputs: ids.iter().map(|p| p.0).collect(),
                op,
            });
        }
        Ok(ids)
    }

    /// Reverse sweep. Seeds are adjoints of chosen values (all channels,
    /// including tangents); parameter gradients are accumulated into
    /// `grads`.
    pub fn reverse(
        &mut self,
        seeds: Vec<(ValueId, DualBatch<T>)>,
        grads: &mut ParamGradients<T>,
    ) -> Result<()> {
        if self.mode == TapeMode::Inference {
            return Err(Error::InferenceTape);
        }
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.consumed = true;

        let mut adj: Vec<Option<DualBatch<T>>> = (0..self.values.len()).map(|_| None).collect();
        for (id, seed) in seeds {
            let v = self.value(id)?;
            if !v.same_shape(&seed) {
                return Err(Error::dim("reverse seed", v.shape_string(), seed.shape_string()));
            }
            accumulate(&mut adj, id.0, seed)?;
        }

        let mut lin: BTreeMap<ParamId, LinearAcc<T>> = BTreeMap::new();
        let nodes = std::mem::take(&mut self.nodes);
        for node in nodes.iter().rev() {
            match node {
                Node::Linear {
                    param,
                    input,
                    output,
                    w,
                    v,
                    g,
                } => {
                    let Some(ybar) = adj[*output].take() else { continue };
                    let x = self.values[*input].as_ref().ok_or(Error::InferenceTape)?;
                    let acc = lin.entry(*param).or_insert_with(|| LinearAcc {
                        wbar: DenseMatrix::zeros(w.rows(), w.cols()),
                        bbar: vec![T::zero(); w.rows()],
                        v: v.clone(),
                        g: g.clone(),
                    });
                    let ys = ybar.stacked();
                    let xs = x.stacked();
                    let (out_dim, in_dim) = w.shape();
                    gemm(
                        T::one(),
                        ys.data(),
                        ys.shape(),
                        Trans::Yes,
                        xs.data(),
                        xs.shape(),
                        Trans::No,
                        T::one(),
                        acc.wbar.data_mut(),
                        (out_dim, in_dim),
                    )?;
                    let primal = ybar.primal();
                    for r in 0..ybar.batch() {
                        for (bb, &yy) in acc.bbar.iter_mut().zip(&primal[r * out_dim..(r + 1) * out_dim]) {
                            *bb = *bb + yy;
                        }
                    }
                    if self.needs_grad[*input] {
                        let mut xbar = DenseMatrix::zeros(ys.rows(), in_dim);
                        gemm(
                            T::one(),
                            ys.data(),
                            ys.shape(),
                            Trans::No,
                            w.data(),
                            w.shape(),
                            Trans::No,
                            T::zero(),
                            xbar.data_mut(),
                            (ys.rows(), in_dim),
                        )?;
                        let xbar = DualBatch::from_stacked(ybar.batch(), ybar.num_tangents(), xbar)?;
                        accumulate(&mut adj, *input, xbar)?;
                    }
                }
                Node::Activation {
                    kind,
                    input,
                    output,
                } => {
                    let Some(ybar) = adj[*output].take() else { continue };
                    if !self.needs_grad[*input] {
                        continue;
                    }
                    let x = self.values[*input].as_ref().ok_or(Error::InferenceTape)?;
                    let xbar = activation_reverse(*kind, x, &ybar)?;
                    accumulate(&mut adj, *input, xbar)?;
                }
                Node::Gather {
                    input,
                    output,
                    cols,
                } => {
                    let Some(ybar) = adj[*output].take() else { continue };
                    if !self.needs_grad[*input] {
                        continue;
                    }
                    let x = self.values[*input].as_ref().ok_or(Error::InferenceTape)?;
                    let rows = x.stacked().rows();
                    let mut xbar = DenseMatrix::zeros(rows, x.features());
                    for r in 0..rows {
                        let src = ybar.stacked().row(r);
                        let dst = xbar.row_mut(r);
                        for (&c, &s) in cols.iter().zip(src) {
                            dst[c] = dst[c] + s;
                        }
                    }
                    let xbar = DualBatch::from_stacked(x.batch(), x.num_tangents(), xbar)?;
                    accumulate(&mut adj, *input, xbar)?;
                }
                Node::Concat { inputs, output } => {
                    let Some(ybar) = adj[*output].take() else { continue };
                    let ys = ybar.stacked();
                    let mut offset = 0;
                    for &inp in inputs {
                        let x = self.values[inp].as_ref().ok_or(Error::InferenceTape)?;
                        let w = x.features();
                        if self.needs_grad[inp] {
                            let mut part = DenseMatrix::zeros(ys.rows(), w);
                            for r in 0..ys.rows() {
                                part.row_mut(r).copy_from_slice(&ys.row(r)[offset..offset + w]);
                            }
                            let part = DualBatch::from_stacked(x.batch(), x.num_tangents(), part)?;
                            accumulate(&mut adj, inp, part)?;
                        }
                        offset += w;
                    }
                }
                Node::Custom {
                    inputs,
                    outputs,
                    op,
                } => {
                    let out_adj: Vec<Option<DualBatch<T>>> =
                        outputs.iter().map(|&o| adj[o].take()).collect();
                    if out_adj.iter().all(|a| a.is_none()) {
                        continue;
                    }
                    if !inputs.iter().any(|&i| self.needs_grad[i]) {
                        continue;
                    }
                    let in_vals: Vec<&DualBatch<T>> = inputs
                        .iter()
                        .map(|&i| self.values[i].as_ref().ok_or(Error::InferenceTape))
                        .collect::<Result<_>>()?;
                    let out_vals: Vec<&DualBatch<T>> = outputs
                        .iter()
                        .map(|&i| self.values[i].as_ref().ok_or(Error::InferenceTape))
                        .collect::<Result<_>>()?;
                    let out_refs: Vec<Option<&DualBatch<T>>> = out_adj.iter().map(|a| a.as_ref()).collect();
                    let in_adj = op.reverse(&in_vals, &out_vals, &out_refs)?;
                    if in_adj.len() != inputs.len() {
                        return Err(Error::dim(op.name(), inputs.len(), in_adj.len()));
                    }
                    for (&inp, a) in inputs.iter().zip(in_adj) {
                        if let Some(a) = a {
                            if self.needs_grad[inp] {
                                if !a.same_shape(in_vals_shape(&self.values, inp)?) {
                                    return Err(Error::dim(op.name(), "input-shaped adjoint", a.shape_string()));
                                }
                                accumulate(&mut adj, inp, a)?;
                            }
                        }
                    }
                }
            }
        }

        // Chain W-adjoints through the weight-norm reparameterization.
        for (id, acc) in lin {
            let dst = grads.layer_mut(id)?;
            if dst.v.shape() != acc.v.shape() {
                return Err(Error::dim("reverse grads", format!("{:?}", acc.v.shape()), format!("{:?}", dst.v.shape())));
            }
            for j in 0..acc.v.rows() {
                let vrow = acc.v.row(j);
                let norm = row_norm(vrow);
                let wrow = acc.wbar.row(j);
                let dot = wrow.iter().zip(vrow).fold(T::zero(), |s, (&a, &b)| s + a * b) / norm;
                let scale = acc.g[j] / norm;
                for ((dv, &wb), &vv) in dst.v.row_mut(j).iter_mut().zip(wrow).zip(vrow) {
                    *dv = *dv + scale * (wb - dot * vv / norm);
                }
                dst.g[j] = dst.g[j] + dot;
                dst.b[j] = dst.b[j] + acc.bbar[j];
            }
        }
        Ok(())
    }
}

fn in_vals_shape<T: Real>(values: &[Option<DualBatch<T>>], i: usize) -> Result<&DualBatch<T>> {
    values[i].as_ref().ok_or(Error::InferenceTape)
}

fn accumulate<T: Real>(adj: &mut [Option<DualBatch<T>>], id: usize, value: DualBatch<T>) -> Result<()> {
    match &mut adj[id] {
        Some(existing) => existing.add_assign(&value),
        slot @ None => {
            *slot = Some(value);
            Ok(())
        }
    }
}

fn activation_reverse<T: Real>(kind: ActivationKind, x: &DualBatch<T>, ybar: &DualBatch<T>) -> Result<DualBatch<T>> {
    let k = x.num_tangents();
    let n = x.batch() * x.features();
    let mut xbar = DualBatch::zeros(x.batch(), x.features(), k);
    let xp = x.primal();
    let yp = ybar.primal();
    let mut d1 = vec![T::zero(); n];
    {
        let out = xbar.primal_mut();
        for i in 0..n {
            let (_, s1, s2) = kind.eval(xp[i]);
            d1[i] = s1;
            let mut acc = yp[i] * s1;
            if k > 0 {
                for t in 0..k {
                    acc = acc + ybar.tangent(t)[i] * s2 * x.tangent(t)[i];
                }
            }
            out[i] = acc;
        }
    }
    for t in 0..k {
        let yt = ybar.tangent(t);
        let out = xbar.tangent_mut(t);
        for i in 0..n {
            out[i] = yt[i] * d1[i];
        }
    }
    Ok(xbar)
}

/// One affine layer `y = x W^T + b` on every channel; tangents skip the bias.
pub fn linear_forward<T: Real>(
    layer: &LayerParams<T>,
    param: ParamId,
    x: ValueId,
    tape: &mut Tape<T>,
) -> Result<ValueId> {
    let xv = tape.value(x)?;
    if xv.features() != layer.in_dim() {
        return Err(Error::dim("linear_forward input width", layer.in_dim(), xv.features()));
    }
    let w = effective_weight(layer)?;
    let xs = xv.stacked();
    let out_dim = layer.out_dim();
    let mut y = DenseMatrix::zeros(xs.rows(), out_dim);
    gemm(
        T::one(),
        xs.data(),
        xs.shape(),
        Trans::No,
        w.data(),
        w.shape(),
        Trans::Yes,
        T::zero(),
        y.data_mut(),
        (xs.rows(), out_dim),
    )?;
    let batch = xv.batch();
    let k = xv.num_tangents();
    for r in 0..batch {
        for (yy, &bb) in y.row_mut(r).iter_mut().zip(&layer.b) {
            *yy = *yy + bb;
        }
    }
    let id = tape.push_value(DualBatch::from_stacked(batch, k, y)?, true)?;
    if tape.recording() {
        tape.nodes.push(Node::Linear {
            param,
            input: x.0,
            output: id.0,
            w,
            v: layer.v.clone(),
            g: layer.g.clone(),
        });
    }
    Ok(id)
}

/// Elementwise activation; tangents are scaled by the local slope.
pub fn activation_forward<T: Real>(kind: ActivationKind, x: ValueId, tape: &mut Tape<T>) -> Result<ValueId> {
    kind.validate()?;
    let xv = tape.value(x)?;
    let k = xv.num_tangents();
    let n = xv.batch() * xv.features();
    let mut y = DualBatch::zeros(xv.batch(), xv.features(), k);
    if k == 0 {
        for (dst, &src) in y.primal_mut().iter_mut().zip(xv.primal()) {
            *dst = kind.value(src);
        }
    } else {
        let mut slope = vec![T::zero(); n];
        {
            let yp = y.primal_mut();
            for (i, &src) in xv.primal().iter().enumerate() {
                let (val, d) = kind.value_and_slope(src);
                yp[i] = val;
                slope[i] = d;
            }
        }
        for t in 0..k {
            let xt = xv.tangent(t);
            let yt = y.tangent_mut(t);
            for i in 0..n {
                yt[i] = slope[i] * xt[i];
            }
        }
    }
    let ng = tape.needs_grad[x.0];
    let id = tape.push_value(y, ng)?;
    if tape.recording() {
        tape.nodes.push(Node::Activation {
            kind,
            input: x.0,
            output: id.0,
        });
    }
    Ok(id)
}

/// Convenience wrapper for callers holding a whole network's parameters:
/// runs the reverse sweep into freshly zeroed gradients.
pub fn reverse<T: Real>(
    tape: &mut Tape<T>,
    output_adjoints: Vec<(ValueId, DualBatch<T>)>,
    params: &[Vec<LayerParams<T>>],
) -> Result<ParamGradients<T>> {
    let mut grads = ParamGradients::zeros_like(params);
    tape.reverse(output_adjoints, &mut grads)?;
    Ok(grads)
}
