use crate::diffcore::matrix::DenseMatrix;
use crate::error::{Error, Result};
use crate::real::Real;

/// A batch of primal values together with `K` directional derivatives.
///
/// Storage stacks the primal block and the `K` tangent blocks vertically in
/// one `(K + 1) * batch` by `features` matrix, so a linear map touches every
/// channel with a single matrix product.
#[derive(Clone, Debug, PartialEq)]
pub struct DualBatch<T> {
    batch: usize,
    tangents: usize,
    data: DenseMatrix<T>,
}

impl<T: Real> DualBatch<T> {
    pub fn zeros(batch: usize, features: usize, tangents: usize) -> Self {
        Self {
            batch,
            tangents,
            data: DenseMatrix::zeros((tangents + 1) * batch, features),
        }
    }

    pub fn constant(primal: DenseMatrix<T>) -> Self {
        Self {
            batch: primal.rows(),
            tangents: 0,
            data: primal,
        }
    }

    pub fn new(primal: DenseMatrix<T>, tangents: Vec<DenseMatrix<T>>) -> Result<Self> {
        let (batch, features) = primal.shape();
        let k = tangents.len();
        let mut data = primal.into_vec();
        data.reserve(k * batch * features);
        for t in tangents {
            if t.shape() != (batch, features) {
                return Err(Error::dim(
                    "DualBatch::new tangent",
                    format!("({batch}, {features})"),
                    format!("{:?}", t.shape()),
                ));
            }
            data.extend_from_slice(t.data());
        }
        Ok(Self {
            batch,
            tangents: k,
            data: DenseMatrix::from_vec((k + 1) * batch, features, data)?,
        })
    }

    /// Wraps an already stacked `(K + 1) * batch` matrix.
    pub fn from_stacked(batch: usize, tangents: usize, data: DenseMatrix<T>) -> Result<Self> {
        if data.rows() != (tangents + 1) * batch {
            return Err(Error::dim("DualBatch::from_stacked", (tangents + 1) * batch, data.rows()));
        }
        Ok(Self {
            batch,
            tangents,
            data,
        })
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.batch
    }

    #[inline]
    pub fn features(&self) -> usize {
        self.data.cols()
    }

    #[inline]
    pub fn num_tangents(&self) -> usize {
        self.tangents
    }

    #[inline]
    pub fn stacked(&self) -> &DenseMatrix<T> {
        &self.data
    }

    #[inline]
    pub fn stacked_mut(&mut self) -> &mut DenseMatrix<T> {
        &mut self.data
    }

    pub fn into_stacked(self) -> DenseMatrix<T> {
        self.data
    }

    /// Channel 0 is the primal, channel `k + 1` is tangent `k`.
    #[inline]
    pub fn channel(&self, ch: usize) -> &[T] {
        let n = self.batch * self.features();
        &self.data.data()[ch * n..(ch + 1) * n]
    }

    #[inline]
    pub fn channel_mut(&mut self, ch: usize) -> &mut [T] {
        let n = self.batch * self.features();
        &mut self.data.data_mut()[ch * n..(ch + 1) * n]
    }

    #[inline]
    pub fn primal(&self) -> &[T] {
        self.channel(0)
    }

    #[inline]
    pub fn primal_mut(&mut self) -> &mut [T] {
        self.channel_mut(0)
    }

    #[inline]
    pub fn tangent(&self, k: usize) -> &[T] {
        self.channel(k + 1)
    }

    #[inline]
    pub fn tangent_mut(&mut self, k: usize) -> &mut [T] {
        self.channel_mut(k + 1)
    }

    pub fn primal_matrix(&self) -> DenseMatrix<T> {
        self.data.slice_rows(0, self.batch)
    }

    pub fn tangent_matrix(&self, k: usize) -> DenseMatrix<T> {
        self.data.slice_rows((k + 1) * self.batch, (k + 2) * self.batch)
    }

    #[inline]
    pub fn same_shape(&self, other: &Self) -> bool {
        self.batch == other.batch
            && self.tangents == other.tangents
            && self.features() == other.features()
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::dim(
                "DualBatch::add_assign",
                self.shape_string(),
                other.shape_string(),
            ));
        }
        self.data.add_assign(&other.data)
    }

    pub fn shape_string(&self) -> String {
        format!(
            "batch={} features={} tangents={}",
            self.batch,
            self.features(),
            self.tangents
        )
    }

    pub fn size_bytes(&self) -> usize {
        self.data.data().len() * T::BYTES
    }
}
