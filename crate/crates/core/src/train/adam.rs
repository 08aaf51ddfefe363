use crate::diffcore::ParamGradients;
use crate::error::{Error, Result};
use crate::lfnet::ProLiFNetwork;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments mirroring the parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: ParamGradients<T>,
    pub v: ParamGradients<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(net: &ProLiFNetwork<T>) -> Self {
        Self {
            m: net.zero_grads(),
            v: net.zero_grads(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step<T: Real>(
    net: &mut ProLiFNetwork<T>,
    grads: &ParamGradients<T>,
    state: &mut AdamState<T>,
    lr: f64,
    hp: &AdamHyper,
) -> Result<()> {
    let shape = net.zero_grads();
    if !grads.same_shape(&shape) || !state.m.same_shape(&shape) || !state.v.same_shape(&shape) {
        return Err(Error::dim("adam_step", "network-shaped gradients and moments", "mismatched"));
    }
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    state.t += 1;
    let (b1, b2) = (T::lit(hp.beta1), T::lit(hp.beta2));
    let (one, eps, lr) = (T::one(), T::lit(hp.eps), T::lit(lr));
    let c1 = one - b1.powi(state.t.min(i32::MAX as u64) as i32);
    let c2 = one - b2.powi(state.t.min(i32::MAX as u64) as i32);
    let params = net.layers_mut().flat_map(|l| l.v.data_mut().iter_mut().chain(l.g.iter_mut()).chain(l.b.iter_mut()));
    for (((p, g), m), v) in params.zip(grads.iter()).zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let mhat = *m / c1;
        let vhat = *v / c2;
        *p = *p - lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}
