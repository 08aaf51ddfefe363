use serde::{Deserialize, Serialize};

use crate::diffcore::matrix::DenseMatrix;
use crate::error::{Error, Result};
use crate::real::Real;

/// Weight-normalized affine layer: row `j` of the effective weight is
/// `g[j] * v[j] / |v[j]|`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub v: DenseMatrix<T>,
    pub g: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Real> LayerParams<T> {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            v: DenseMatrix::zeros(out, inp),
            g: vec![T::zero(); out],
            b: vec![T::zero(); out],
        }
    }

    /// Reparameterizes an effective weight as `v := w`, `g := |w_j|`.
    pub fn from_effective(w: DenseMatrix<T>, b: Vec<T>) -> Result<Self> {
        if b.len() != w.rows() {
            return Err(Error::dim("LayerParams::from_effective bias", w.rows(), b.len()));
        }
        let g = (0..w.rows()).map(|j| row_norm(w.row(j))).collect();
        Ok(Self { v: w, g, b })
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.v.rows()
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.v.cols()
    }

    pub fn num_params(&self) -> usize {
        self.v.data().len() + self.g.len() + self.b.len()
    }

    pub fn cast<U: Real>(&self) -> LayerParams<U> {
        LayerParams {
            v: self.v.cast(),
            g: self.g.iter().map(|&x| U::lit(x.f64())).collect(),
            b: self.b.iter().map(|&x| U::lit(x.f64())).collect(),
        }
    }
}

#[inline]
pub(crate) fn row_norm<T: Real>(row: &[T]) -> T {
    row.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

/// Materializes `W` with row `j` equal to `g_j * v_j / |v_j|`.
pub fn effective_weight<T: Real>(layer: &LayerParams<T>) -> Result<DenseMatrix<T>> {
    let (out, inp) = layer.v.shape();
    if layer.g.len() != out || layer.b.len() != out {
        return Err(Error::dim("effective_weight", out, layer.g.len()));
    }
    let mut w = DenseMatrix::zeros(out, inp);
    for j in 0..out {
        let row = layer.v.row(j);
        let norm = row_norm(row);
        if !(norm > T::zero()) || !norm.is_finite() {
            return Err(Error::DegenerateParameter(format!(
                "row {j} of v has norm {norm}"
            )));
        }
        let scale = layer.g[j] / norm;
        for (dst, &src) in w.row_mut(j).iter_mut().zip(row) {
            *dst = scale * src;
        }
    }
    Ok(w)
}

/// Elementwise nonlinearity applied after a linear layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ActivationKind {
    Sine { omega0: f64 },
    Softplus,
    Sigmoid,
    Identity,
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub(crate) fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl ActivationKind {
    pub fn validate(self) -> Result<()> {
        match self {
            ActivationKind::Sine { omega0 } if !(omega0 > 0.0 && omega0.is_finite()) => Err(
                Error::InvalidConfig(format!("sine activation needs omega0 > 0, got {omega0}")),
            ),
            _ => Ok(()),
        }
    }

    /// Value and first two derivatives at `x`.
    #[inline]
    pub fn eval<T: Real>(self, x: T) -> (T, T, T) {
        match self {
            ActivationKind::Sine { omega0 } => {
                let w = T::lit(omega0);
                let (s, c) = (w * x).sin_cos();
                (s, w * c, -w * w * s)
            }
            ActivationKind::Softplus => {
                let s = sigmoid(x);
                (softplus(x), s, s * (T::one() - s))
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                let d1 = s * (T::one() - s);
                (s, d1, d1 * (T::one() - s - s))
            }
            ActivationKind::Identity => (x, T::one(), T::zero()),
        }
    }

    #[inline]
    pub fn value<T: Real>(self, x: T) -> T {
        match self {
            ActivationKind::Sine { omega0 } => (T::lit(omega0) * x).sin(),
            ActivationKind::Softplus => softplus(x),
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Identity => x,
        }
    }

    #[inline]
    pub fn value_and_slope<T: Real>(self, x: T) -> (T, T) {
        match self {
            ActivationKind::Sine { omega0 } => {
                let w = T::lit(omega0);
                let (s, c) = (w * x).sin_cos();
                (s, w * c)
            }
            ActivationKind::Softplus => (softplus(x), sigmoid(x)),
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                (s, s * (T::one() - s))
            }
            ActivationKind::Identity => (x, T::one()),
        }
    }
}

/// Identifies one layer of one subnetwork.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId {
    pub subnet: usize,
    pub layer: usize,
}

/// Tensors shaped like a network's parameters: gradients, or optimizer
/// moments. `subnets[i][l]` mirrors layer `l` of subnetwork `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradients<T> {
    pub subnets: Vec<Vec<LayerParams<T>>>,
}

impl<T: Real> ParamGradients<T> {
    pub fn zeros_like(layers: &[Vec<LayerParams<T>>]) -> Self {
        Self {
            subnets: layers
                .iter()
                .map(|sub| sub.iter().map(|l| LayerParams::zeros(l.out_dim(), l.in_dim())).collect())
                .collect(),
        }
    }

    pub fn layer_mut(&mut self, id: ParamId) -> Result<&mut LayerParams<T>> {
        self.subnets
            .get_mut(id.subnet)
            .and_then(|s| s.get_mut(id.layer))
            .ok_or_else(|| Error::dim("ParamGradients::layer_mut", "existing layer", format!("{id:?}")))
    }

    pub fn layer(&self, id: ParamId) -> Option<&LayerParams<T>> {
        self.subnets.get(id.subnet).and_then(|s| s.get(id.layer))
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.subnets.len() == other.subnets.len()
            && self.subnets.iter().zip(&other.subnets).all(|(a, b)| {
                a.len() == b.len()
                    && a.iter().zip(b).all(|(x, y)| {
                        x.v.shape() == y.v.shape() && x.g.len() == y.g.len() && x.b.len() == y.b.len()
                    })
            })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::dim("ParamGradients::add_assign", "matching shapes", "mismatch"));
        }
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for x in self.iter_mut() {
            *x = *x * s;
        }
    }

    pub fn len(&self) -> usize {
        self.subnets.iter().flatten().map(|l| l.num_params()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat iteration in the fixed order subnet, layer, v, g, b.
    pub fn iter(&self) -> impl Iterator<Item = T> + '_ {
        self.subnets.iter().flatten().flat_map(|l| {
            l.v.data().iter().chain(l.g.iter()).chain(l.b.iter()).copied()
        })
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> + '_ {
        self.subnets.iter_mut().flatten().flat_map(|l| {
            l.v.data_mut().iter_mut().chain(l.g.iter_mut()).chain(l.b.iter_mut())
        })
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }
}
