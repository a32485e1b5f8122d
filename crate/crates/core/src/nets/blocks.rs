//! Repeating block variants, registered by name.

use std::sync::Arc;

use advlab_tensor::{Activation, Graph, Real, Var};
use rand::RngCore;

use super::layers;
use super::params::{Bound, Init};
use crate::error::{invalid, Result};
use crate::registry::Registry;

/// One residual block family. Blocks preserve the N×C×H×W shape.
pub trait Block<T: Real>: Send + Sync {
    fn name(&self) -> &str;

    /// Adds this block's parameters under `prefix` for width `c`.
    fn init(&self, init: &mut Init<'_, T, dyn RngCore + '_>, prefix: &str, c: usize, heads: usize);

    fn forward(&self, g: &mut Graph<T>, p: &Bound<T>, prefix: &str, x: Var, heads: usize) -> Result<Var>;
}

/// Nonlinearity between the depthwise conv and the channel attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mixer {
    /// Elementwise activation; `None` is the identity (used for probing).
    Activation(Option<Activation>),
    /// Channel-halving product of the two halves.
    SimpleGate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Attention {
    /// Sigmoid gate from a two-layer bottleneck with this reduction.
    Squeeze { reduction: usize },
    /// Linear gate, no activations.
    Simplified,
}

/// Conv block of the Baseline / Intermediate / NAFNet family:
///
/// `x + β ⊙ conv(att(mix(dw(conv(norm(x))))))`, then
/// `x + γ ⊙ conv(mix(conv(norm(x))))`.
#[derive(Clone, Debug)]
pub struct GatedConvBlock {
    pub name: String,
    pub mixer: Mixer,
    pub attention: Attention,
}

impl GatedConvBlock {
    pub fn new(name: &str, mixer: Mixer, attention: Attention) -> Self {
        Self {
            name: name.to_string(),
            mixer,
            attention,
        }
    }

    fn mixed_width(&self, c: usize) -> usize {
        match self.mixer {
            Mixer::SimpleGate => c,
            Mixer::Activation(_) => 2 * c,
        }
    }

    fn mix<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        Ok(match self.mixer {
            Mixer::SimpleGate => g.simple_gate(x)?,
            Mixer::Activation(a) => layers::activate(g, a, x),
        })
    }
}

impl<T: Real> Block<T> for GatedConvBlock {
    fn name(&self) -> &str {
        &self.name
    }

    fn init(&self, init: &mut Init<'_, T, dyn RngCore + '_>, prefix: &str, c: usize, _heads: usize) {
        let m = self.mixed_width(c);
        init.norm(&format!("{prefix}.norm1"), c);
        init.conv(&format!("{prefix}.conv1"), 2 * c, c, 1);
        init.conv(&format!("{prefix}.dw"), 2 * c, 1, 3);
        match self.attention {
            Attention::Squeeze { reduction } => {
                init.conv(&format!("{prefix}.ca.down"), m / reduction, m, 1);
                init.conv(&format!("{prefix}.ca.up"), m, m / reduction, 1);
            }
            Attention::Simplified => init.conv(&format!("{prefix}.sca"), m, m, 1),
        }
        init.conv(&format!("{prefix}.conv3"), c, m, 1);
        init.constant(&format!("{prefix}.beta"), &[c], 1.0);
        init.norm(&format!("{prefix}.norm2"), c);
        init.conv(&format!("{prefix}.conv4"), 2 * c, c, 1);
        init.conv(&format!("{prefix}.conv5"), c, m, 1);
        init.constant(&format!("{prefix}.gamma"), &[c], 1.0);
    }

    fn forward(&self, g: &mut Graph<T>, p: &Bound<T>, prefix: &str, x: Var, _heads: usize) -> Result<Var> {
        let c = g.shape(x)[1];
        if let Attention::Squeeze { reduction } = self.attention {
            if reduction == 0 || !self.mixed_width(c).is_multiple_of(reduction) {
                return Err(invalid(
                    "channel attention",
                    format!("reduction {reduction} does not divide {} channels", self.mixed_width(c)),
                ));
            }
        }
        let h = layers::norm(g, p, &format!("{prefix}.norm1"), x)?;
        let h = layers::pointwise(g, p, &format!("{prefix}.conv1"), h)?;
        let h = layers::depthwise(g, p, &format!("{prefix}.dw"), h, 3)?;
        let h = self.mix(g, h)?;
        let h = match self.attention {
            Attention::Squeeze { .. } => layers::channel_attention(g, p, &format!("{prefix}.ca"), h)?,
            Attention::Simplified => layers::simplified_channel_attention(g, p, &format!("{prefix}.sca"), h)?,
        };
        let h = layers::pointwise(g, p, &format!("{prefix}.conv3"), h)?;
        let h = layers::channel_scale(g, p, &format!("{prefix}.beta"), h)?;
        let x = g.add(x, h)?;

        let h = layers::norm(g, p, &format!("{prefix}.norm2"), x)?;
        let h = layers::pointwise(g, p, &format!("{prefix}.conv4"), h)?;
        let h = self.mix(g, h)?;
        let h = layers::pointwise(g, p, &format!("{prefix}.conv5"), h)?;
        let h = layers::channel_scale(g, p, &format!("{prefix}.gamma"), h)?;
        Ok(g.add(x, h)?)
    }
}

/// Transformer block: `x + MDTA(norm(x))`, then `x + GDFN(norm(x))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    /// Hidden width of the feed-forward network relative to C.
    pub expansion: usize,
}

impl Default for TransformerBlock {
    fn default() -> Self {
        Self { expansion: 2 }
    }
}

impl<T: Real> Block<T> for TransformerBlock {
    fn name(&self) -> &str {
        "restormer"
    }

    fn init(&self, init: &mut Init<'_, T, dyn RngCore + '_>, prefix: &str, c: usize, heads: usize) {
        let hidden = self.expansion * c;
        init.norm(&format!("{prefix}.norm1"), c);
        init.conv(&format!("{prefix}.attn.qkv"), 3 * c, c, 1);
        init.conv(&format!("{prefix}.attn.qkv_dw"), 3 * c, 1, 3);
        init.constant(&format!("{prefix}.attn.temperature"), &[heads], 1.0);
        init.conv(&format!("{prefix}.attn.proj"), c, c, 1);
        init.norm(&format!("{prefix}.norm2"), c);
        init.conv(&format!("{prefix}.ffn.in"), 2 * hidden, c, 1);
        init.conv(&format!("{prefix}.ffn.dw"), 2 * hidden, 1, 3);
        init.conv(&format!("{prefix}.ffn.out"), c, hidden, 1);
    }

    fn forward(&self, g: &mut Graph<T>, p: &Bound<T>, prefix: &str, x: Var, heads: usize) -> Result<Var> {
        let h = layers::norm(g, p, &format!("{prefix}.norm1"), x)?;
        let (h, _) = layers::mdta(g, p, &format!("{prefix}.attn"), h, heads)?;
        let x = g.add(x, h)?;
        let h = layers::norm(g, p, &format!("{prefix}.norm2"), x)?;
        let h = layers::gdfn(g, p, &format!("{prefix}.ffn"), h)?;
        Ok(g.add(x, h)?)
    }
}

/// The five architecture variants keyed by name.
pub fn block_registry<T: Real>() -> Registry<dyn Block<T>> {
    let gelu = Mixer::Activation(Some(Activation::Gelu));
    let relu = Mixer::Activation(Some(Activation::Relu));
    let squeeze = Attention::Squeeze { reduction: 2 };
    let mut r: Registry<dyn Block<T>> = Registry::new("block");
    r.register("restormer", Arc::new(TransformerBlock::default()));
    r.register("baseline", Arc::new(GatedConvBlock::new("baseline", gelu, squeeze)));
    r.register(
        "nafnet",
        Arc::new(GatedConvBlock::new("nafnet", Mixer::SimpleGate, Attention::Simplified)),
    );
    r.register(
        "intermediate",
        Arc::new(GatedConvBlock::new("intermediate", gelu, Attention::Simplified)),
    );
    r.register(
        "intermediate_relu",
        Arc::new(GatedConvBlock::new("intermediate_relu", relu, Attention::Simplified)),
    );
    r
}
