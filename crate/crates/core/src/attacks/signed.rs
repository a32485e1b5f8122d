use advlab_tensor::{Graph, Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::objective::Objective;
use super::{clamp, AttackConfig, AttackResult};
use crate::error::{invalid, CoreError, Result};
use crate::nets::Model;

fn mse_of<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> f64 {
    let (p, t) = (pred.data(), target.data());
    let total = p.iter().zip(t).fold(T::zero(), |acc, (&a, &b)| {
        let d = a - b;
        acc + d * d
    });
    (total / T::lit(p.len() as f64)).to_f64_lossless()
}

struct Eval<T> {
    mse: f64,
    objective: f64,
    grad: Option<Tensor<T>>,
}

fn evaluate<T: Real>(
    model: &Model<T>,
    y: &Tensor<T>,
    x: &Tensor<T>,
    objective: &dyn Objective<T>,
    with_grad: bool,
) -> Result<Eval<T>> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, false);
    let yv = g.leaf(y.clone(), with_grad);
    let xv = g.constant(x.clone());
    let out = model.forward(&mut g, &p, yv)?;
    let weights = objective.weights(g.value(out), x)?;
    let weighted = weights.is_some();
    let loss = g.squared_error(out, xv, weights)?;
    let objective_value = g.value(loss).item()?.to_f64_lossless();
    let mse = if weighted {
        mse_of(g.value(out), x)
    } else {
        objective_value
    };
    let grad = if with_grad {
        g.backward(loss)?;
        Some(g.take_grad(yv).unwrap_or_else(|| Tensor::zeros(y.shape())))
    } else {
        None
    };
    Ok(Eval {
        mse,
        objective: objective_value,
        grad,
    })
}

/// Iterated signed-gradient ascent on `objective` within the ℓ∞ ball of
/// radius `cfg.epsilon` around `y_clean`, intersected with `[0, 1]`.
///
/// Runs `max(checkpoints)` steps of size `cfg.alpha` and snapshots the state
/// after each listed step count. Model parameters are never touched.
pub fn signed_gradient_ascent<T: Real>(
    model: &Model<T>,
    y_clean: &Tensor<T>,
    x: &Tensor<T>,
    cfg: &AttackConfig,
    objective: &dyn Objective<T>,
    checkpoints: &[usize],
) -> Result<Vec<AttackResult<T>>> {
    if y_clean.shape() != x.shape() {
        return Err(invalid(
            "attack input",
            format!("degraded {:?} and reference {:?} differ in shape", y_clean.shape(), x.shape()),
        ));
    }
    if checkpoints.is_empty() || checkpoints.contains(&0) {
        return Err(invalid("attack schedule", "checkpoints must be a non-empty list of positive counts"));
    }
    let mut sorted = checkpoints.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let total = *sorted.last().expect("non-empty");

    let eps = T::lit(cfg.epsilon);
    let alpha = T::lit(cfg.alpha);
    let clean = y_clean.data();

    let mut delta = Tensor::zeros(y_clean.shape());
    if cfg.random_start {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for d in delta.data_mut() {
            *d = T::lit(rng.gen_range(-cfg.epsilon..=cfg.epsilon));
        }
    }
    let mut y = Tensor::from_fn(y_clean.shape(), |i| clamp(clean[i] + delta.data()[i], T::zero(), T::one()));

    let mut loss_trace = Vec::with_capacity(total + 1);
    let mut objective_trace = Vec::with_capacity(total + 1);
    let mut zero_fraction = Vec::with_capacity(total);
    let mut snapshots = Vec::with_capacity(sorted.len());
    let mut next = 0;

    for step in 0..=total {
        let last = step == total;
        let ev = evaluate(model, &y, x, objective, !last)?;
        if !ev.objective.is_finite() || !ev.mse.is_finite() {
            return Err(CoreError::NonFinite {
                what: "attack loss",
                step,
                last_good: None,
            });
        }
        loss_trace.push(ev.mse);
        objective_trace.push(ev.objective);

        if step > 0 && sorted[next] == step {
            snapshots.push(AttackResult {
                delta: delta.clone(),
                y_adv: y.clone(),
                loss_trace: loss_trace.clone(),
                objective_trace: objective_trace.clone(),
                grad_sign_stats: zero_fraction.clone(),
                iterations: step,
            });
            next += 1;
        }
        let Some(grad) = ev.grad else { break };

        let gd = grad.data();
        let zeros = gd.iter().filter(|v| **v == T::zero()).count();
        zero_fraction.push(zeros as f64 / gd.len().max(1) as f64);
        let yd = y.data_mut();
        let dd = delta.data_mut();
        for i in 0..gd.len() {
            let s = if gd[i] > T::zero() {
                alpha
            } else if gd[i] < T::zero() {
                -alpha
            } else {
                T::zero()
            };
            let d = clamp(yd[i] + s - clean[i], -eps, eps);
            dd[i] = d;
            yd[i] = clamp(clean[i] + d, T::zero(), T::one());
        }
    }

    // Restore the caller's order (duplicates get the same snapshot).
    Ok(checkpoints
        .iter()
        .map(|c| {
            let i = sorted.binary_search(c).expect("listed");
            snapshots[i].clone()
        })
        .collect())
}
