//! Helpers shared by the integration tests.
#![allow(dead_code)]

use advlab_core::nets::{block_registry, build_model, ArchVariant, Bound, Init, Model, ParamStore};
use advlab_tensor::gradcheck::relative_error;
use advlab_tensor::{Graph, Tensor, Var};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VARIANTS: [&str; 5] = ["restormer", "baseline", "nafnet", "intermediate", "intermediate_relu"];
pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Adds `U(−s, s)` to every parameter so no path is trivially constant.
pub fn jitter(params: &mut ParamStore<f64>, rng: &mut impl Rng, s: f64) {
    params.map_tensors(|_, t| {
        for v in t.data_mut() {
            *v += rng.gen_range(-s..s);
        }
    });
}

/// Model with jittered parameters at width 8.
pub fn jittered_model(kind: &str, seed: u64) -> Model<f64> {
    let mut m = build_model::<f64>(&ArchVariant::desk(kind), seed).unwrap();
    jitter(&mut m.params, &mut rng(seed ^ 0x5eed), 0.2);
    m
}

/// Maps an input variable to the output of a block or model.
pub type Forward<'a> = dyn Fn(&mut Graph<f64>, &Bound<f64>, Var) -> Var + 'a;

/// Scalar probe `Σ f(x) ⊙ r` evaluated through `forward`.
fn probe(
    params: &ParamStore<f64>,
    x: &Tensor<f64>,
    r: &Tensor<f64>,
    forward: &Forward<'_>,
) -> f64 {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let out = forward(&mut g, &p, xv);
    let rv = g.constant(r.clone());
    let m = g.mul(out, rv).unwrap();
    let s = g.sum_all(m);
    g.value(s).data()[0]
}

/// Worst normwise relative error between reverse-mode and central-difference
/// gradients of `Σ f(x) ⊙ r`, w.r.t. `x` and the parameter coordinates
/// selected by `coords` (all of them when `None`).
pub fn gradient_error(
    params: &ParamStore<f64>,
    x: &Tensor<f64>,
    r: &Tensor<f64>,
    coords: Option<&[(usize, usize)]>,
    forward: &Forward<'_>,
) -> f64 {
    let mut g = Graph::new();
    let p = params.bind(&mut g, true);
    let xv = g.variable(x.clone());
    let out = forward(&mut g, &p, xv);
    let rv = g.constant(r.clone());
    let m = g.mul(out, rv).unwrap();
    let s = g.sum_all(m);
    g.backward(s).unwrap();

    let analytic_x = g.grad(xv).cloned().unwrap();
    let numeric_x = advlab_tensor::gradcheck::finite_difference_gradient(
        |probe_x| probe(params, probe_x, r, forward),
        x,
        FD_STEP,
    );
    let mut worst = relative_error(&analytic_x, &numeric_x);

    let all: Vec<(usize, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = params
                .tensors()
                .iter()
                .enumerate()
                .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
                .collect();
            &all
        }
    };
    let mut analytic = Vec::with_capacity(coords.len());
    let mut numeric = Vec::with_capacity(coords.len());
    let mut work = params.clone();
    for &(i, j) in coords {
        let grad = g.grad(p.vars()[i]).map(|t| t.data()[j]).unwrap_or(0.0);
        let orig = work.tensors()[i].data()[j];
        work.tensors_mut()[i].data_mut()[j] = orig + FD_STEP;
        let plus = probe(&work, x, r, forward);
        work.tensors_mut()[i].data_mut()[j] = orig - FD_STEP;
        let minus = probe(&work, x, r, forward);
        work.tensors_mut()[i].data_mut()[j] = orig;
        analytic.push(grad);
        numeric.push((plus - minus) / (2.0 * FD_STEP));
    }
    if !coords.is_empty() {
        let a = Tensor::new(vec![analytic.len()], analytic).unwrap();
        let n = Tensor::new(vec![numeric.len()], numeric).unwrap();
        worst = worst.max(relative_error(&a, &n));
    }
    worst
}

/// Gradient check of one block of `kind` at width 8 on a 1×8×8×8 input,
/// over the input and every block parameter.
pub fn block_gradient_error(kind: &str, seed: u64) -> f64 {
    let block = block_registry::<f64>().get(kind).unwrap();
    let heads = 2;
    let mut store = ParamStore::<f64>::new();
    let mut r = rng(seed);
    {
        let mut init: Init<'_, f64, dyn RngCore> = Init {
            store: &mut store,
            rng: &mut r,
        };
        block.init(&mut init, "b", 8, heads);
    }
    jitter(&mut store, &mut r, 0.2);
    let x = uniform(&mut r, &[1, 8, 8, 8], -1.0, 1.0);
    let proj = uniform(&mut r, &[1, 8, 8, 8], -1.0, 1.0);
    let forward = |g: &mut Graph<f64>, p: &Bound<f64>, x| block.forward(g, p, "b", x, heads).unwrap();
    gradient_error(&store, &x, &proj, None, &forward)
}

/// Gradient check of a whole width-8 model on a 1×3×8×8 input, over the
/// input and `n_params` random parameter coordinates.
pub fn model_gradient_error(kind: &str, seed: u64, n_params: usize) -> f64 {
    let model = jittered_model(kind, seed);
    let mut r = rng(seed.wrapping_add(1000));
    let x = uniform(&mut r, &[1, 3, 8, 8], 0.0, 1.0);
    let proj = uniform(&mut r, &[1, 3, 8, 8], -1.0, 1.0);
    let sizes: Vec<usize> = model.params.tensors().iter().map(|t| t.len()).collect();
    let coords: Vec<(usize, usize)> = (0..n_params)
        .map(|_| {
            let i = r.gen_range(0..sizes.len());
            (i, r.gen_range(0..sizes[i]))
        })
        .collect();
    let forward = |g: &mut Graph<f64>, p: &Bound<f64>, y| model.forward(g, p, y).unwrap();
    gradient_error(&model.params, &x, &proj, Some(&coords), &forward)
}

/// SSIM by explicit summation over every 11×11 window with the 2-D Gaussian
/// weights and centered second moments.
pub fn ssim_oracle(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let k = 11;
    let g: Vec<f64> = (0..k).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
    let mut win = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            win[i * k + j] = g[i] * g[j];
        }
    }
    let z: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= z);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for top in 0..=h - k {
        for left in 0..=w - k {
            let at = |img: &[f64], i: usize, j: usize| img[(top + i) * w + left + j];
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    ma += win[i * k + j] * at(a, i, j);
                    mb += win[i * k + j] * at(b, i, j);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let (da, db) = (at(a, i, j) - ma, at(b, i, j) - mb);
                    va += win[i * k + j] * da * da;
                    vb += win[i * k + j] * db * db;
                    cov += win[i * k + j] * da * db;
                }
            }
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}
