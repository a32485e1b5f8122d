use std::fmt;
use std::sync::Arc;

use advlab_tensor::{Conv2dOptions, Graph, Real, ShuffleDirection, Tensor, Var};
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{block_registry, Block};
use super::layers;
use super::params::{Bound, Init, ParamStore};
use crate::error::{invalid, CoreError, Result};

/// Architecture descriptor of an encoder–decoder restoration network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchVariant {
    /// Registered block name.
    pub kind: String,
    /// Channels at the first level; level `l` uses `width · 2^l`.
    pub width: usize,
    pub levels: usize,
    /// Blocks per encoder level; the last entry is the bottleneck.
    pub enc_blocks: Vec<usize>,
    /// Blocks per decoder level, finest first (`levels − 1` entries).
    pub dec_blocks: Vec<usize>,
    /// Attention heads per level (transformer blocks only).
    pub attention_heads: Vec<usize>,
}

impl ArchVariant {
    /// Width 8, three levels, one block per level.
    pub fn desk(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            width: 8,
            levels: 3,
            enc_blocks: vec![1; 3],
            dec_blocks: vec![1; 2],
            attention_heads: vec![1, 2, 4],
        }
    }

    pub fn level_width(&self, level: usize) -> usize {
        self.width << level
    }

    /// Spatial dims must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.levels.max(1) - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(invalid("architecture", msg));
        if self.width == 0 || !self.width.is_multiple_of(2) {
            return bad(format!("width must be even and positive, got {}", self.width));
        }
        if self.levels == 0 {
            return bad("levels must be at least 1".into());
        }
        if self.enc_blocks.len() != self.levels {
            return bad(format!(
                "enc_blocks needs {} entries, got {}",
                self.levels,
                self.enc_blocks.len()
            ));
        }
        if self.dec_blocks.len() != self.levels - 1 {
            return bad(format!(
                "dec_blocks needs {} entries, got {}",
                self.levels - 1,
                self.dec_blocks.len()
            ));
        }
        if self.enc_blocks.iter().chain(&self.dec_blocks).any(|&b| b == 0) {
            return bad("block counts must be at least 1".into());
        }
        if self.attention_heads.len() != self.levels {
            return bad(format!(
                "attention_heads needs {} entries, got {}",
                self.levels,
                self.attention_heads.len()
            ));
        }
        for (l, &h) in self.attention_heads.iter().enumerate() {
            if h == 0 || !self.level_width(l).is_multiple_of(h) {
                return bad(format!(
                    "level {l}: {} channels not divisible into {h} heads",
                    self.level_width(l)
                ));
            }
        }
        Ok(())
    }
}

impl fmt::Display for ArchVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(w{}, l{})", self.kind, self.width, self.levels)
    }
}

/// A realized network: variant plus parameters θ.
pub struct Model<T: Real> {
    pub variant: ArchVariant,
    pub params: ParamStore<T>,
    block: Arc<dyn Block<T>>,
}

impl<T: Real> Clone for Model<T> {
    fn clone(&self) -> Self {
        Self {
            variant: self.variant.clone(),
            params: self.params.clone(),
            block: Arc::clone(&self.block),
        }
    }
}

impl<T: Real> fmt::Debug for Model<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("variant", &self.variant)
            .field("params", &self.params.num_scalars())
            .finish()
    }
}

/// Deterministically initializes a model from `seed`.
pub fn build_model<T: Real>(variant: &ArchVariant, seed: u64) -> Result<Model<T>> {
    let block = block_registry::<T>().get(&variant.kind)?;
    build_with_block(variant, block, seed)
}

/// Like [`build_model`] with an explicit block implementation.
pub fn build_with_block<T: Real>(variant: &ArchVariant, block: Arc<dyn Block<T>>, seed: u64) -> Result<Model<T>> {
    variant.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut init: Init<'_, T, dyn RngCore> = Init {
        store: &mut store,
        rng: &mut rng,
    };
    let v = variant;
    init.conv("intro", v.width, 3, 3);
    for l in 0..v.levels {
        let c = v.level_width(l);
        for b in 0..v.enc_blocks[l] {
            block.init(&mut init, &format!("enc{l}.{b}"), c, v.attention_heads[l]);
        }
        if l + 1 < v.levels {
            init.conv(&format!("down{l}"), 2 * c, 4 * c, 1);
        }
    }
    for l in (0..v.levels - 1).rev() {
        let c_next = v.level_width(l + 1);
        init.conv(&format!("up{l}"), 2 * c_next, c_next, 1);
        for b in 0..v.dec_blocks[l] {
            block.init(&mut init, &format!("dec{l}.{b}"), v.level_width(l), v.attention_heads[l]);
        }
    }
    init.conv("ending", 3, v.width, 3);
    Ok(Model {
        variant: variant.clone(),
        params: store,
        block,
    })
}

impl<T: Real> Model<T> {
    /// Rebuilds a model around existing parameters.
    pub fn from_params(variant: ArchVariant, params: ParamStore<T>) -> Result<Self> {
        let reference = build_model::<T>(&variant, 0)?;
        for (name, t) in reference.params.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(invalid(
                    "parameters",
                    format!("`{name}` has shape {:?}, expected {:?}", got.shape(), t.shape()),
                ));
            }
        }
        if params.len() != reference.params.len() {
            return Err(invalid(
                "parameters",
                format!("expected {} tensors, got {}", reference.params.len(), params.len()),
            ));
        }
        Ok(Self {
            variant,
            params,
            block: reference.block,
        })
    }

    pub fn block(&self) -> &Arc<dyn Block<T>> {
        &self.block
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let [_, c, h, w] = *shape else {
            return Err(invalid("input", format!("expected N×3×H×W, got {shape:?}")));
        };
        if c != 3 {
            return Err(invalid("input", format!("expected 3 channels, got {c}")));
        }
        let m = self.variant.size_multiple();
        if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return Err(CoreError::InputSize {
                multiple: m,
                height: h,
                width: w,
                padded_h: h.div_ceil(m).max(1) * m,
                padded_w: w.div_ceil(m).max(1) * m,
            });
        }
        Ok(())
    }

    /// Records `y + f(y)` on `g` using bound parameters `p`.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound<T>, y: Var) -> Result<Var> {
        self.check_input(g.shape(y))?;
        let v = &self.variant;
        let block = &self.block;
        let mut h = layers::conv(g, p, "intro", y, Conv2dOptions::same(3))?;
        let mut skips = Vec::with_capacity(v.levels);
        for l in 0..v.levels {
            for b in 0..v.enc_blocks[l] {
                h = block.forward(g, p, &format!("enc{l}.{b}"), h, v.attention_heads[l])?;
            }
            if l + 1 < v.levels {
                skips.push(h);
                let d = g.pixel_shuffle(h, 2, ShuffleDirection::Down)?;
                h = layers::pointwise(g, p, &format!("down{l}"), d)?;
            }
        }
        for l in (0..v.levels - 1).rev() {
            let u = layers::pointwise(g, p, &format!("up{l}"), h)?;
            let u = g.pixel_shuffle(u, 2, ShuffleDirection::Up)?;
            h = g.add(u, skips[l])?;
            for b in 0..v.dec_blocks[l] {
                h = block.forward(g, p, &format!("dec{l}.{b}"), h, v.attention_heads[l])?;
            }
        }
        let r = layers::conv(g, p, "ending", h, Conv2dOptions::same(3))?;
        Ok(g.add(y, r)?)
    }

    /// Inference without gradient tracking.
    pub fn predict(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let yv = g.constant(y.clone());
        let out = self.forward(&mut g, &p, yv)?;
        Ok(g.into_value(out))
    }
}

/// Number of scalar parameters of one block of `kind` at width `c`.
pub fn block_param_count(kind: &str, c: usize, heads: usize) -> Result<usize> {
    let block = block_registry::<f64>().get(kind)?;
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut init: Init<'_, f64, dyn RngCore> = Init {
        store: &mut store,
        rng: &mut rng,
    };
    block.init(&mut init, "b", c, heads);
    Ok(store.num_scalars())
}
