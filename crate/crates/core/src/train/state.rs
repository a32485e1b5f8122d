use std::path::Path;

use advlab_tensor::Real;
use serde_json::json;

use super::optim::{AdamW, OptimizerConfig};
use super::{TrainConfig, TrainLog};
use crate::error::{CoreError, Result};
use crate::nets::{Archive, ArchVariant, Model, ParamStore};

/// Everything needed to continue a run bit-exactly.
#[derive(Clone, Debug)]
pub struct TrainState<T: Real> {
    /// Updates completed.
    pub step: usize,
    pub model: Model<T>,
    pub opt: AdamW<T>,
    pub best: Option<ParamStore<T>>,
    pub best_step: usize,
    pub best_val_psnr: Option<f64>,
    pub log: TrainLog,
}

const THETA: &str = "theta/";
const MOMENT1: &str = "adam_m/";
const MOMENT2: &str = "adam_v/";
const BEST: &str = "best/";

impl<T: Real> TrainState<T> {
    pub fn initial(model: Model<T>, cfg: &TrainConfig) -> Self {
        let opt = AdamW::new(cfg.optimizer.clone(), &model.params);
        Self {
            step: 0,
            model,
            opt,
            best: None,
            best_step: 0,
            best_val_psnr: None,
            log: TrainLog::default(),
        }
    }

    pub fn to_archive(&self) -> Archive<T> {
        let mut tensors = ParamStore::new();
        for (i, (name, t)) in self.model.params.iter().enumerate() {
            tensors.insert(format!("{THETA}{name}"), t.clone());
            tensors.insert(format!("{MOMENT1}{name}"), self.opt.m[i].clone());
            tensors.insert(format!("{MOMENT2}{name}"), self.opt.v[i].clone());
        }
        if let Some(best) = &self.best {
            for (name, t) in best.iter() {
                tensors.insert(format!("{BEST}{name}"), t.clone());
            }
        }
        Archive {
            meta: json!({
                "kind": "train_state",
                "variant": self.model.variant,
                "step": self.step,
                "adam_t": self.opt.t,
                "optimizer": self.opt.config,
                "best_step": self.best_step,
                "best_val_psnr": self.best_val_psnr,
                "log": self.log,
            }),
            tensors,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let archive = Archive::<T>::load(path)?;
        let kind: String = archive.meta_field("kind", path)?;
        if kind != "train_state" {
            return Err(CoreError::Format {
                path: path.to_path_buf(),
                msg: format!("expected a training state, found `{kind}`"),
            });
        }
        let variant: ArchVariant = archive.meta_field("variant", path)?;
        let take = |prefix: &str| {
            let mut out = ParamStore::new();
            for (name, t) in archive.tensors.iter() {
                if let Some(rest) = name.strip_prefix(prefix) {
                    out.insert(rest, t.clone());
                }
            }
            out
        };
        let model = Model::from_params(variant.clone(), take(THETA))?;
        let (m, v) = (take(MOMENT1), take(MOMENT2));
        let mut moments = (Vec::new(), Vec::new());
        for name in model.params.names() {
            moments.0.push(m.get(name)?.clone());
            moments.1.push(v.get(name)?.clone());
        }
        let best = take(BEST);
        let best = if best.is_empty() {
            None
        } else {
            Some(Model::from_params(variant, best)?.params)
        };
        let config: OptimizerConfig = archive.meta_field("optimizer", path)?;
        Ok(Self {
            step: archive.meta_field("step", path)?,
            opt: AdamW {
                config,
                t: archive.meta_field("adam_t", path)?,
                m: moments.0,
                v: moments.1,
            },
            model,
            best,
            best_step: archive.meta_field("best_step", path)?,
            best_val_psnr: archive.meta_field("best_val_psnr", path)?,
            log: archive.meta_field("log", path)?,
        })
    }
}
