//! Parameterized layers and attention modules over graph primitives.

use advlab_tensor::{Activation, Conv2dOptions, Graph, Real, Var};

use super::params::Bound;
use crate::error::{invalid, Result};

pub const NORM_EPS: f64 = 1e-6;
const L2_EPS: f64 = 1e-12;

pub fn conv<T: Real>(g: &mut Graph<T>, p: &Bound<T>, name: &str, x: Var, opts: Conv2dOptions) -> Result<Var> {
    let w = p.var(&format!("{name}.w"))?;
    let b = p.var(&format!("{name}.b"))?;
    Ok(g.conv2d(x, w, Some(b), opts)?)
}

pub fn pointwise<T: Real>(g: &mut Graph<T>, p: &Bound<T>, name: &str, x: Var) -> Result<Var> {
    conv(g, p, name, x, Conv2dOptions::default())
}

pub fn depthwise<T: Real>(g: &mut Graph<T>, p: &Bound<T>, name: &str, x: Var, k: usize) -> Result<Var> {
    let c = g.shape(x)[1];
    conv(g, p, name, x, Conv2dOptions::depthwise(c, k))
}

pub fn norm<T: Real>(g: &mut Graph<T>, p: &Bound<T>, name: &str, x: Var) -> Result<Var> {
    let gamma = p.var(&format!("{name}.gamma"))?;
    let beta = p.var(&format!("{name}.beta"))?;
    Ok(g.layer_norm_channels(x, gamma, beta, T::lit(NORM_EPS))?)
}

/// Multiplies N×C×H×W `x` by a length-C parameter broadcast over N, H, W.
pub fn channel_scale<T: Real>(g: &mut Graph<T>, p: &Bound<T>, name: &str, x: Var) -> Result<Var> {
    let s = p.var(name)?;
    let c = g.shape(s)[0];
    let s = g.reshape(s, &[1, c, 1, 1])?;
    Ok(g.mul(x, s)?)
}

pub fn activate<T: Real>(g: &mut Graph<T>, act: Option<Activation>, x: Var) -> Var {
    match act {
        Some(a) => g.activation(a, x),
        None => x,
    }
}

/// Squeeze-excitation gate: `x ⊙ σ(W₂ relu(W₁ GAP(x)))` with params
/// `{name}.down` (C→C/r) and `{name}.up` (C/r→C).
pub fn channel_attention<T: Real>(g: &mut Graph<T>, p: &Bound<T>, name: &str, x: Var) -> Result<Var> {
    let s = g.global_avg_pool(x)?;
    let s = pointwise(g, p, &format!("{name}.down"), s)?;
    let s = g.relu(s);
    let s = pointwise(g, p, &format!("{name}.up"), s)?;
    let s = g.sigmoid(s);
    Ok(g.mul(x, s)?)
}

/// Linear channel gate without activations: `x ⊙ (W GAP(x) + b)`.
pub fn simplified_channel_attention<T: Real>(g: &mut Graph<T>, p: &Bound<T>, name: &str, x: Var) -> Result<Var> {
    let s = g.global_avg_pool(x)?;
    let s = pointwise(g, p, name, s)?;
    Ok(g.mul(x, s)?)
}

/// Multi-head transposed attention over channels. Returns the projected
/// output and the N×heads×d×d attention matrix (d = C/heads).
pub fn mdta<T: Real>(g: &mut Graph<T>, p: &Bound<T>, name: &str, x: Var, heads: usize) -> Result<(Var, Var)> {
    let (n, c, h, w) = g.value(x).dims4()?;
    if heads == 0 || c % heads != 0 {
        return Err(invalid(
            "attention heads",
            format!("{c} channels are not divisible into {heads} heads"),
        ));
    }
    let d = c / heads;
    let qkv = pointwise(g, p, &format!("{name}.qkv"), x)?;
    let qkv = depthwise(g, p, &format!("{name}.qkv_dw"), qkv, 3)?;
    let split = |g: &mut Graph<T>, i: usize| -> Result<Var> {
        let t = g.narrow(qkv, 1, i * c, c)?;
        Ok(g.reshape(t, &[n, heads, d, h * w])?)
    };
    let q = split(g, 0)?;
    let k = split(g, 1)?;
    let v = split(g, 2)?;
    let q = g.l2_normalize_last(q, T::lit(L2_EPS));
    let k = g.l2_normalize_last(k, T::lit(L2_EPS));
    let kt = g.transpose_last2(k)?;
    let scores = g.matmul(q, kt)?;
    let temp = p.var(&format!("{name}.temperature"))?;
    let temp = g.reshape(temp, &[1, heads, 1, 1])?;
    let scores = g.mul(scores, temp)?;
    let attn = g.softmax(scores, 3)?;
    let out = g.matmul(attn, v)?;
    let out = g.reshape(out, &[n, c, h, w])?;
    let out = pointwise(g, p, &format!("{name}.proj"), out)?;
    Ok((out, attn))
}

/// Gated depthwise feed-forward: two pointwise→depthwise paths combined as
/// `GELU(path1) ⊙ path2`, projected back to C channels.
pub fn gdfn<T: Real>(g: &mut Graph<T>, p: &Bound<T>, name: &str, x: Var) -> Result<Var> {
    let hdn = pointwise(g, p, &format!("{name}.in"), x)?;
    let hdn = depthwise(g, p, &format!("{name}.dw"), hdn, 3)?;
    let hidden = g.shape(hdn)[1] / 2;
    let a = g.narrow(hdn, 1, 0, hidden)?;
    let b = g.narrow(hdn, 1, hidden, hidden)?;
    let a = g.gelu(a);
    let gated = g.mul(a, b)?;
    pointwise(g, p, &format!("{name}.out"), gated)
}
