//! ℓ∞ signed-gradient attacks (FGSM, PGD, CosPGD) against a restoration model.

mod objective;
mod signed;

use std::sync::Arc;

use advlab_tensor::{Real, Tensor};
use serde::{Deserialize, Serialize};

pub use objective::{cossim, cossim_weights, CosineWeighted, Objective, PlainMse, UnitWeights};
pub use signed::signed_gradient_ascent;

use crate::error::{invalid, Result};
use crate::nets::Model;
use crate::registry::Registry;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Registered attack name: `fgsm`, `pgd` or `cospgd`.
    pub kind: String,
    pub epsilon: f64,
    pub alpha: f64,
    pub iterations: usize,
    /// Seed for the optional random start.
    #[serde(default)]
    pub seed: u64,
    /// Start from a uniform draw in the ε-ball instead of δ₀ = 0.
    #[serde(default)]
    pub random_start: bool,
}

impl AttackConfig {
    pub fn new(kind: &str, epsilon: f64, alpha: f64, iterations: usize) -> Self {
        Self {
            kind: kind.to_string(),
            epsilon,
            alpha,
            iterations,
            seed: 0,
            random_start: false,
        }
    }

    /// FGSM: one step of size ε.
    pub fn fgsm(epsilon: f64) -> Self {
        Self::new("fgsm", epsilon, epsilon, 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(invalid("attack config", msg));
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return bad(format!("epsilon must lie in (0, 1], got {}", self.epsilon));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackResult<T> {
    /// Final perturbation after projection onto the ε-ball.
    pub delta: Tensor<T>,
    /// `clip(y_clean + delta)`.
    pub y_adv: Tensor<T>,
    /// MSE of the prediction before the first step and after every step.
    pub loss_trace: Vec<f64>,
    /// The ascended scalar at the same points (equals `loss_trace` for PGD).
    pub objective_trace: Vec<f64>,
    /// Fraction of exactly-zero input-gradient entries per step.
    pub grad_sign_stats: Vec<f64>,
    pub iterations: usize,
}

/// Elementwise clamp to `[−ε, ε]`.
pub fn project_linf<T: Real>(delta: &Tensor<T>, epsilon: T) -> Tensor<T> {
    delta.map(|d| clamp(d, -epsilon, epsilon))
}

/// Elementwise clamp to `[0, 1]`.
pub fn clip_range<T: Real>(y: &Tensor<T>) -> Tensor<T> {
    y.map(|v| clamp(v, T::zero(), T::one()))
}

#[inline]
pub(crate) fn clamp<T: Real>(v: T, lo: T, hi: T) -> T {
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

/// One attack strategy, selected by name at runtime.
pub trait Attack<T: Real>: Send + Sync {
    fn name(&self) -> &str;

    fn validate(&self, cfg: &AttackConfig) -> Result<()>;

    /// Runs `max(checkpoints)` iterations once and returns a snapshot after
    /// each checkpoint, identical to separate runs with those iteration counts.
    fn run_schedule(
        &self,
        model: &Model<T>,
        y_clean: &Tensor<T>,
        x: &Tensor<T>,
        cfg: &AttackConfig,
        checkpoints: &[usize],
    ) -> Result<Vec<AttackResult<T>>>;

    fn run(&self, model: &Model<T>, y_clean: &Tensor<T>, x: &Tensor<T>, cfg: &AttackConfig) -> Result<AttackResult<T>> {
        let mut out = self.run_schedule(model, y_clean, x, cfg, &[cfg.iterations])?;
        Ok(out.pop().expect("one checkpoint"))
    }
}

fn check_kind(name: &str, cfg: &AttackConfig) -> Result<()> {
    if cfg.kind != name {
        return Err(invalid(
            "attack config",
            format!("`{}` config passed to the {name} attack", cfg.kind),
        ));
    }
    Ok(())
}

pub struct Fgsm;
pub struct Pgd;
pub struct CosPgd;

impl<T: Real> Attack<T> for Fgsm {
    fn name(&self) -> &str {
        "fgsm"
    }

    fn validate(&self, cfg: &AttackConfig) -> Result<()> {
        check_kind("fgsm", cfg)?;
        cfg.validate()?;
        if cfg.iterations != 1 || cfg.alpha != cfg.epsilon {
            return Err(invalid(
                "attack config",
                format!(
                    "fgsm requires iterations = 1 and alpha = epsilon (got {} and {} vs {})",
                    cfg.iterations, cfg.alpha, cfg.epsilon
                ),
            ));
        }
        Ok(())
    }

    fn run_schedule(
        &self,
        model: &Model<T>,
        y_clean: &Tensor<T>,
        x: &Tensor<T>,
        cfg: &AttackConfig,
        checkpoints: &[usize],
    ) -> Result<Vec<AttackResult<T>>> {
        Attack::<T>::validate(self, cfg)?;
        signed_gradient_ascent(model, y_clean, x, cfg, &PlainMse, checkpoints)
    }
}

impl<T: Real> Attack<T> for Pgd {
    fn name(&self) -> &str {
        "pgd"
    }

    fn validate(&self, cfg: &AttackConfig) -> Result<()> {
        check_kind("pgd", cfg)?;
        cfg.validate()
    }

    fn run_schedule(
        &self,
        model: &Model<T>,
        y_clean: &Tensor<T>,
        x: &Tensor<T>,
        cfg: &AttackConfig,
        checkpoints: &[usize],
    ) -> Result<Vec<AttackResult<T>>> {
        Attack::<T>::validate(self, cfg)?;
        signed_gradient_ascent(model, y_clean, x, cfg, &PlainMse, checkpoints)
    }
}

impl<T: Real> Attack<T> for CosPgd {
    fn name(&self) -> &str {
        "cospgd"
    }

    fn validate(&self, cfg: &AttackConfig) -> Result<()> {
        check_kind("cospgd", cfg)?;
        cfg.validate()
    }

    fn run_schedule(
        &self,
        model: &Model<T>,
        y_clean: &Tensor<T>,
        x: &Tensor<T>,
        cfg: &AttackConfig,
        checkpoints: &[usize],
    ) -> Result<Vec<AttackResult<T>>> {
        Attack::<T>::validate(self, cfg)?;
        signed_gradient_ascent(model, y_clean, x, cfg, &CosineWeighted, checkpoints)
    }
}

pub fn attack_registry<T: Real>() -> Registry<dyn Attack<T>> {
    let mut r: Registry<dyn Attack<T>> = Registry::new("attack");
    r.register("fgsm", Arc::new(Fgsm));
    r.register("pgd", Arc::new(Pgd));
    r.register("cospgd", Arc::new(CosPgd));
    r
}

/// Single signed-gradient step of size ε. Unlike a validated config this
/// also accepts ε = 0, which returns `y_clean` unchanged.
pub fn fgsm_attack<T: Real>(model: &Model<T>, y_clean: &Tensor<T>, x: &Tensor<T>, epsilon: f64) -> Result<AttackResult<T>> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(invalid("attack config", format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    let cfg = AttackConfig::fgsm(epsilon);
    let mut out = signed_gradient_ascent(model, y_clean, x, &cfg, &PlainMse, &[1])?;
    Ok(out.pop().expect("one checkpoint"))
}

pub fn pgd_attack<T: Real>(model: &Model<T>, y_clean: &Tensor<T>, x: &Tensor<T>, cfg: &AttackConfig) -> Result<AttackResult<T>> {
    Pgd.run(model, y_clean, x, cfg)
}

pub fn cospgd_attack<T: Real>(model: &Model<T>, y_clean: &Tensor<T>, x: &Tensor<T>, cfg: &AttackConfig) -> Result<AttackResult<T>> {
    CosPgd.run(model, y_clean, x, cfg)
}
