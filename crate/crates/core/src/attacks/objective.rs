use advlab_tensor::{Real, Tensor};

use crate::error::{invalid, Result};

/// Per-pixel weighting of the squared error that an attack ascends.
///
/// Weights are computed from the current prediction and treated as
/// constants (no gradient flows through them).
pub trait Objective<T: Real>: Send + Sync {
    fn name(&self) -> &str;

    /// N×1×H×W weights, or `None` for the plain mean squared error.
    fn weights(&self, prediction: &Tensor<T>, target: &Tensor<T>) -> Result<Option<Tensor<T>>>;
}

/// Plain MSE (PGD, FGSM).
pub struct PlainMse;

/// Cosine similarity of channel softmaxes (CosPGD).
pub struct CosineWeighted;

/// All weights 1. Numerically identical to [`PlainMse`].
pub struct UnitWeights;

impl<T: Real> Objective<T> for PlainMse {
    fn name(&self) -> &str {
        "mse"
    }

    fn weights(&self, _: &Tensor<T>, _: &Tensor<T>) -> Result<Option<Tensor<T>>> {
        Ok(None)
    }
}

impl<T: Real> Objective<T> for CosineWeighted {
    fn name(&self) -> &str {
        "cosine"
    }

    fn weights(&self, prediction: &Tensor<T>, target: &Tensor<T>) -> Result<Option<Tensor<T>>> {
        cossim_weights(prediction, target).map(Some)
    }
}

impl<T: Real> Objective<T> for UnitWeights {
    fn name(&self) -> &str {
        "unit"
    }

    fn weights(&self, prediction: &Tensor<T>, _: &Tensor<T>) -> Result<Option<Tensor<T>>> {
        let (n, _, h, w) = prediction.dims4()?;
        Ok(Some(Tensor::ones(&[n, 1, h, w])))
    }
}

/// `u·v / (‖u‖‖v‖)`; zero when either vector is zero.
pub fn cossim<T: Real>(u: &[T], v: &[T]) -> T {
    let (mut uv, mut uu, mut vv) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in u.iter().zip(v) {
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    let denom = (uu * vv).sqrt();
    if denom > T::zero() {
        uv / denom
    } else {
        T::zero()
    }
}

fn softmax_in_place<T: Real>(v: &mut [T]) {
    let m = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// Per-pixel cosine similarity between the channel softmaxes of
/// `prediction` and `target` (both N×C×H×W). Returns N×1×H×W weights in (0, 1].
pub fn cossim_weights<T: Real>(prediction: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    if prediction.shape() != target.shape() {
        return Err(invalid(
            "cossim weights",
            format!("shapes {:?} and {:?} differ", prediction.shape(), target.shape()),
        ));
    }
    let (n, c, h, w) = prediction.dims4()?;
    let hw = h * w;
    let (p, t) = (prediction.data(), target.data());
    let mut out = Vec::with_capacity(n * hw);
    let mut u = vec![T::zero(); c];
    let mut v = vec![T::zero(); c];
    for ni in 0..n {
        for px in 0..hw {
            for ci in 0..c {
                let idx = (ni * c + ci) * hw + px;
                u[ci] = p[idx];
                v[ci] = t[idx];
            }
            softmax_in_place(&mut u);
            softmax_in_place(&mut v);
            out.push(cossim(&u, &v));
        }
    }
    Ok(Tensor::new(vec![n, 1, h, w], out)?)
}
