//! Standard and FGSM-adversarial training.

mod optim;
mod state;
mod step;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use advlab_tensor::{Real, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use optim::{clip_global_norm, learning_rate, AdamW, OptimizerConfig, Schedule};
pub use state::TrainState;
pub use step::{train_step_adversarial, train_step_standard, StepStats};

use crate::data::ImagePair;
use crate::error::{invalid, CoreError, Result};
use crate::metrics::psnr;
use crate::nets::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Number of optimizer updates.
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub min_lr: f64,
    pub schedule: Schedule,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Global gradient-norm ceiling.
    pub grad_clip: Option<f64>,
    pub adversarial: bool,
    /// FGSM radius for adversarial steps.
    pub epsilon: f64,
    pub seed: u64,
    /// Square training crop; `None` trains on full images.
    #[serde(default)]
    pub patch: Option<usize>,
    /// Validate every this many updates (and after the last one).
    pub val_every: usize,
    /// Write a resumable state every this many updates; 0 disables.
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            lr: 1e-3,
            min_lr: 1e-6,
            schedule: Schedule::Cosine,
            optimizer: OptimizerConfig::default(),
            grad_clip: Some(1.0),
            adversarial: false,
            epsilon: 8.0 / 255.0,
            seed: 0,
            patch: None,
            val_every: 200,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(invalid("training config", msg));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.adversarial && !self.batch_size.is_multiple_of(2) {
            return bad(format!("adversarial training needs an even batch_size, got {}", self.batch_size));
        }
        if !(self.lr >= 0.0) || !(self.min_lr >= 0.0) {
            return bad("learning rates must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon must lie in [0, 1], got {}", self.epsilon));
        }
        if self.val_every == 0 {
            return bad("val_every must be at least 1".into());
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("grad_clip must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    /// Updates completed, starting at 1.
    pub step: usize,
    pub clean_loss: f64,
    pub adv_loss: Option<f64>,
    pub lr: f64,
    /// Seconds since training started.
    pub wall_time: f64,
    pub val_psnr: Option<f64>,
    pub grad_norm: f64,
    pub clipped: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

pub const LOG_HEADER: &str = "step,clean_loss,adv_loss,lr,val_psnr";

impl TrainLog {
    /// Columns of [`LOG_HEADER`]; absent values are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(LOG_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.8}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.8},{},{:.3e},{}",
                r.step,
                r.clean_loss,
                opt(r.adv_loss),
                r.lr,
                opt(r.val_psnr)
            );
        }
        out
    }

    pub fn clipped_steps(&self) -> usize {
        self.rows.iter().filter(|r| r.clipped).count()
    }
}

/// Result of [`train_loop`].
#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Real> {
    /// Parameters with the best validation PSNR (the last ones without a
    /// validation set).
    pub model: Model<T>,
    pub last: Model<T>,
    pub log: TrainLog,
    pub best_step: usize,
    pub best_val_psnr: Option<f64>,
    pub optimizer: AdamW<T>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Where periodic states go; required when `checkpoint_every > 0`.
    pub checkpoint_dir: Option<PathBuf>,
}

/// Mean PSNR of `model` on `pairs`, predicted in batches of `batch`.
pub fn evaluate_psnr<T: Real>(model: &Model<T>, pairs: &[ImagePair], batch: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(invalid("evaluation", "no pairs"));
    }
    let mut total = 0.0;
    for chunk in pairs.chunks(batch.max(1)) {
        let refs: Vec<&ImagePair> = chunk.iter().collect();
        let (y, _) = crate::data::stack_pairs::<T>(&refs)?;
        let out = model.predict(&y)?;
        for (i, p) in chunk.iter().enumerate() {
            let restored = out.slice0(i, 1)?.reshape(p.x.shape())?;
            total += psnr(&restored, &p.x.cast::<T>(), 1.0)?;
        }
    }
    Ok(total / pairs.len() as f64)
}

/// Deterministic batch composition: the sample order is a fresh seeded
/// permutation each epoch, so batch `s` depends only on `(seed, s)`.
struct Batcher<'a> {
    pairs: &'a [ImagePair],
    seed: u64,
    batch: usize,
    patch: Option<usize>,
    epoch: Option<(usize, Vec<usize>)>,
}

impl<'a> Batcher<'a> {
    fn permutation(&mut self, epoch: usize) -> &[usize] {
        if self.epoch.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(epoch as u64);
            let mut order: Vec<usize> = (0..self.pairs.len()).collect();
            order.shuffle(&mut rng);
            self.epoch = Some((epoch, order));
        }
        &self.epoch.as_ref().expect("set above").1
    }

    fn indices(&mut self, step: usize) -> Vec<usize> {
        let n = self.pairs.len();
        (0..self.batch)
            .map(|k| {
                let pos = step * self.batch + k;
                self.permutation(pos / n)[pos % n]
            })
            .collect()
    }

    fn crop<T: Real>(img: &Tensor<f64>, top: usize, left: usize, p: usize) -> Result<Tensor<T>> {
        let [c, _, w] = *img.shape() else {
            return Err(invalid("image", format!("expected C×H×W, got {:?}", img.shape())));
        };
        let d = img.data();
        let h = img.shape()[1];
        Ok(Tensor::from_fn(&[c, p, p], |i| {
            let (ci, r, col) = (i / (p * p), (i / p) % p, i % p);
            T::lit(d[ci * h * w + (top + r) * w + left + col])
        }))
    }

    fn batch<T: Real>(&mut self, step: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        let idx = self.indices(step);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((1 << 63) | step as u64);
        let (mut ys, mut xs) = (Vec::with_capacity(idx.len()), Vec::with_capacity(idx.len()));
        for i in idx {
            let pair = &self.pairs[i];
            let (_, h, w) = (pair.x.shape()[0], pair.x.shape()[1], pair.x.shape()[2]);
            match self.patch {
                Some(p) if p < h || p < w => {
                    if p > h || p > w {
                        return Err(invalid("patch", format!("patch {p} exceeds image {h}×{w}")));
                    }
                    let top = rng.gen_range(0..=h - p);
                    let left = rng.gen_range(0..=w - p);
                    ys.push(Self::crop::<T>(&pair.y_clean, top, left, p)?);
                    xs.push(Self::crop::<T>(&pair.x, top, left, p)?);
                }
                _ => {
                    ys.push(pair.y_clean.cast());
                    xs.push(pair.x.cast());
                }
            }
        }
        Ok((
            Tensor::stack(&ys.iter().collect::<Vec<_>>())?,
            Tensor::stack(&xs.iter().collect::<Vec<_>>())?,
        ))
    }
}

/// Trains `model` from scratch on `train`, selecting by PSNR on `val`.
pub fn train_loop<T: Real>(
    model: Model<T>,
    train: &[ImagePair],
    val: &[ImagePair],
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome<T>> {
    let state = TrainState::initial(model, cfg);
    resume_training(state, train, val, cfg, opts)
}

/// Continues a run from `state` up to `cfg.steps` updates.
pub fn resume_training<T: Real>(
    mut state: TrainState<T>,
    train: &[ImagePair],
    val: &[ImagePair],
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(invalid("training data", "dataset is empty"));
    }
    if cfg.checkpoint_every > 0 && opts.checkpoint_dir.is_none() {
        return Err(invalid("training options", "checkpoint_every set without a checkpoint directory"));
    }
    if state.step > cfg.steps {
        return Err(invalid(
            "resume",
            format!("state is at step {} beyond the configured {}", state.step, cfg.steps),
        ));
    }
    let eval_batch = cfg.batch_size.max(8);
    if state.step == 0 && !val.is_empty() && state.best_val_psnr.is_none() {
        state.best_val_psnr = Some(evaluate_psnr(&state.model, val, eval_batch)?);
        state.best = Some(state.model.params.clone());
        state.best_step = 0;
    }
    let mut batcher = Batcher {
        pairs: train,
        seed: cfg.seed,
        batch: cfg.batch_size,
        patch: cfg.patch,
        epoch: None,
    };
    let started = Instant::now();
    let time_offset = state.log.rows.last().map_or(0.0, |r| r.wall_time);
    let mut last_good: Option<PathBuf> = None;

    for s in state.step..cfg.steps {
        let lr = learning_rate(cfg.schedule, cfg.lr, cfg.min_lr, s, cfg.steps);
        let (y, x) = batcher.batch::<T>(s)?;
        let stats = if cfg.adversarial {
            train_step_adversarial(&mut state.model, &mut state.opt, &y, &x, lr, cfg.grad_clip, cfg.epsilon)
        } else {
            train_step_standard(&mut state.model, &mut state.opt, &y, &x, lr, cfg.grad_clip)
        };
        let stats = stats.map_err(|e| match e {
            CoreError::NonFinite { what, .. } => CoreError::NonFinite {
                what,
                step: s + 1,
                last_good: last_good.clone(),
            },
            other => other,
        })?;
        let done = s + 1;
        if stats.clipped {
            log::debug!("step {done}: gradient norm {:.4} clipped", stats.grad_norm);
        }
        let val_psnr = if !val.is_empty() && (done % cfg.val_every == 0 || done == cfg.steps) {
            let v = evaluate_psnr(&state.model, val, eval_batch)?;
            if state.best_val_psnr.is_none_or(|b| v > b) {
                state.best_val_psnr = Some(v);
                state.best = Some(state.model.params.clone());
                state.best_step = done;
            }
            log::info!("step {done}/{}: loss {:.6}, val psnr {v:.3} dB", cfg.steps, stats.loss);
            Some(v)
        } else {
            None
        };
        state.log.rows.push(LogRow {
            step: done,
            clean_loss: stats.clean_loss,
            adv_loss: stats.adv_loss,
            lr,
            wall_time: time_offset + started.elapsed().as_secs_f64(),
            val_psnr,
            grad_norm: stats.grad_norm,
            clipped: stats.clipped,
        });
        state.step = done;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            let dir = opts.checkpoint_dir.as_deref().expect("checked above");
            let path = state_path(dir, done);
            state.save(&path)?;
            last_good = Some(path);
        }
    }
    let clipped = state.log.clipped_steps();
    if clipped > 0 {
        log::info!("gradient clipping triggered on {clipped} of {} steps", state.log.rows.len());
    }

    let last = state.model.clone();
    let model = match &state.best {
        Some(p) => Model::from_params(state.model.variant.clone(), p.clone())?,
        None => state.model.clone(),
    };
    let best_step = if state.best.is_some() { state.best_step } else { state.step };
    Ok(TrainOutcome {
        model,
        last,
        log: state.log,
        best_step,
        best_val_psnr: state.best_val_psnr,
        optimizer: state.opt,
    })
}

/// `<dir>/state-<step>.ckpt`.
pub fn state_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("state-{step:06}.ckpt"))
}
