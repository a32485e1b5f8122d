use advlab_tensor::{Graph, Real, Tensor};

use super::optim::{clip_global_norm, AdamW};
use crate::attacks::fgsm_attack;
use crate::error::{invalid, CoreError, Result};
use crate::nets::Model;

/// Scalars from one optimizer update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    /// MSE over the whole (possibly mixed) batch that was optimized.
    pub loss: f64,
    /// MSE over the unperturbed part of the batch.
    pub clean_loss: f64,
    /// MSE over the perturbed part, for adversarial steps.
    pub adv_loss: Option<f64>,
    pub grad_norm: f64,
    pub clipped: bool,
    /// Number of samples replaced by adversarial examples.
    pub n_adversarial: usize,
}

fn range_mse<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, from: usize, to: usize) -> f64 {
    let (p, t) = (&pred.data()[from..to], &target.data()[from..to]);
    let s: f64 = p
        .iter()
        .zip(t)
        .map(|(&a, &b)| {
            let d = (a - b).to_f64_lossless();
            d * d
        })
        .sum();
    s / (to - from).max(1) as f64
}

/// Forward, backward, clip, update. Returns the loss, the prediction and the
/// gradient norm before clipping.
fn update<T: Real>(
    model: &mut Model<T>,
    opt: &mut AdamW<T>,
    y: &Tensor<T>,
    x: &Tensor<T>,
    lr: f64,
    clip: Option<f64>,
) -> Result<(f64, Tensor<T>, f64)> {
    let (loss, pred, mut grads) = {
        let mut g = Graph::new();
        let p = model.params.bind(&mut g, true);
        let yv = g.constant(y.clone());
        let xv = g.constant(x.clone());
        let out = model.forward(&mut g, &p, yv)?;
        let loss = g.mse(out, xv)?;
        let value = g.value(loss).item()?.to_f64_lossless();
        if !value.is_finite() {
            return Err(CoreError::NonFinite {
                what: "training loss",
                step: opt.t as usize,
                last_good: None,
            });
        }
        g.backward(loss)?;
        let grads: Vec<Tensor<T>> = p
            .vars()
            .iter()
            .zip(model.params.tensors())
            .map(|(&v, t)| g.take_grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        (value, g.value(out).clone(), grads)
    };
    let norm = clip_global_norm(&mut grads, clip);
    if !norm.is_finite() {
        return Err(CoreError::NonFinite {
            what: "gradient norm",
            step: opt.t as usize,
            last_good: None,
        });
    }
    opt.step(&mut model.params, &grads, lr)?;
    Ok((loss, pred, norm))
}

fn check_batch<T: Real>(y: &Tensor<T>, x: &Tensor<T>) -> Result<usize> {
    if y.shape() != x.shape() {
        return Err(invalid(
            "batch",
            format!("degraded {:?} and sharp {:?} differ", y.shape(), x.shape()),
        ));
    }
    let n = y.dims4()?.0;
    if n == 0 {
        return Err(invalid("batch", "empty batch"));
    }
    Ok(n)
}

/// One update on the mean MSE of `model(y)` against `x` (N×3×H×W).
pub fn train_step_standard<T: Real>(
    model: &mut Model<T>,
    opt: &mut AdamW<T>,
    y: &Tensor<T>,
    x: &Tensor<T>,
    lr: f64,
    clip: Option<f64>,
) -> Result<StepStats> {
    check_batch(y, x)?;
    let (loss, _, norm) = update(model, opt, y, x, lr, clip)?;
    Ok(StepStats {
        loss,
        clean_loss: loss,
        adv_loss: None,
        grad_norm: norm,
        clipped: clip.is_some_and(|c| norm > c),
        n_adversarial: 0,
    })
}

/// One update on a batch whose second half is replaced by FGSM examples
/// (radius `epsilon`) generated against the current parameters.
pub fn train_step_adversarial<T: Real>(
    model: &mut Model<T>,
    opt: &mut AdamW<T>,
    y: &Tensor<T>,
    x: &Tensor<T>,
    lr: f64,
    clip: Option<f64>,
    epsilon: f64,
) -> Result<StepStats> {
    let n = check_batch(y, x)?;
    if n % 2 != 0 {
        return Err(invalid("batch", format!("adversarial steps need an even batch, got {n}")));
    }
    let half = n / 2;
    let adv = fgsm_attack(model, &y.slice0(half, half)?, &x.slice0(half, half)?, epsilon)?;
    let mixed = Tensor::cat0(&[&y.slice0(0, half)?, &adv.y_adv])?;
    let (loss, pred, norm) = update(model, opt, &mixed, x, lr, clip)?;
    let split = half * (y.len() / n);
    Ok(StepStats {
        loss,
        clean_loss: range_mse(&pred, x, 0, split),
        adv_loss: Some(range_mse(&pred, x, split, y.len())),
        grad_norm: norm,
        clipped: clip.is_some_and(|c| norm > c),
        n_adversarial: half,
    })
}
