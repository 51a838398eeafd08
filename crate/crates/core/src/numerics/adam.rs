use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::scalar::{lit, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::contract(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() || p.shape() != state.v[i].shape() {
            return Err(Error::Dimension {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2): (T, T) = (lit(cfg.beta1), lit(cfg.beta2));
    let lr: T = lit(cfg.lr);
    let eps: T = lit(cfg.eps);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let pd = p.data_mut();
        for (((pj, &gj), mj), vj) in pd.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mj = b1 * *mj + (T::one() - b1) * gj;
            *vj = b2 * *vj + (T::one() - b2) * gj * gj;
            let mhat = *mj / c1;
            let vhat = *vj / c2;
            *pj -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
