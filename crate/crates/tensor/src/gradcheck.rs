//! Finite-difference gradient checking.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::ops::activation::Activation;
use crate::ops::conv::Conv2dOptions;
use crate::ops::shuffle::ShuffleDirection;
use crate::real::Real;
use crate::tensor::Tensor;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Central-difference estimate of `d f / d x` at `x`.
pub fn finite_difference_gradient<T: Real>(
    mut f: impl FnMut(&Tensor<T>) -> T,
    x: &Tensor<T>,
    step: T,
) -> Tensor<T> {
    let mut probe = x.clone();
    let two_h = step + step;
    let grad = (0..x.len())
        .map(|i| {
            let orig = x.data()[i];
            probe.data_mut()[i] = orig + step;
            let plus = f(&probe);
            probe.data_mut()[i] = orig - step;
            let minus = f(&probe);
            probe.data_mut()[i] = orig;
            (plus - minus) / two_h
        })
        .collect();
    Tensor::new(x.shape().to_vec(), grad).expect("same shape")
}

/// Normwise relative error `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞, tiny)`.
pub fn relative_error<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "relative_error shape mismatch");
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y).abs().to_f64_lossless())
        .fold(0.0, f64::max);
    let scale = a.max_abs().to_f64_lossless().max(b.max_abs().to_f64_lossless()).max(1e-300);
    diff / scale
}

/// Compares reverse-mode gradients of a scalar graph against central
/// differences for every input. `build` receives one leaf per input (all
/// tracking gradients) and returns the scalar loss. Returns the largest
/// relative error over the inputs.
pub fn check_gradients<T: Real>(
    inputs: &[Tensor<T>],
    step: T,
    build: impl Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let eval = |values: &[Tensor<T>]| -> Result<(Graph<T>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.variable(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        Ok((g, vars, loss))
    };
    let (mut g, vars, loss) = eval(inputs)?;
    g.backward(loss)?;
    let mut worst = 0.0f64;
    for (i, &v) in vars.iter().enumerate() {
        let analytic = g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let mut values = inputs.to_vec();
        let numeric = finite_difference_gradient(
            |probe| {
                values[i] = probe.clone();
                let (g, _, loss) = eval(&values).expect("graph rebuilt from the same shapes");
                g.value(loss).data()[0]
            },
            &inputs[i],
            step,
        );
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// `Σ out ⊙ r` for a fixed projection `r`; turns any output into a scalar
/// loss whose gradient exercises every output element.
pub fn project<T: Real>(g: &mut Graph<T>, out: Var, r: &Tensor<T>) -> Result<Var> {
    let rv = g.constant(r.clone());
    let m = g.mul(out, rv)?;
    Ok(g.sum_all(m))
}

/// Builds one op (or a short chain) from its input leaves.
pub type BuildFn = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + Send + Sync>;

/// One entry of the op catalog: input shapes, output shape and builder.
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Vec<usize>>,
    pub output: Vec<usize>,
    pub build: BuildFn,
}

impl OpCase {
    fn new(
        name: &'static str,
        inputs: &[&[usize]],
        output: &[usize],
        build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name,
            inputs: inputs.iter().map(|s| s.to_vec()).collect(),
            output: output.to_vec(),
            build: Box::new(build),
        }
    }

    /// Relative gradient error for the given inputs, with the output
    /// reduced to a scalar through projection `r`.
    pub fn check(&self, inputs: &[Tensor<f64>], r: &Tensor<f64>, step: f64) -> Result<f64> {
        check_gradients(inputs, step, |g, v| {
            let out = (self.build)(g, v)?;
            if self.output.is_empty() {
                Ok(out)
            } else {
                project(g, out, r)
            }
        })
    }
}

/// Every differentiable op of the graph, each with small fixed shapes.
pub fn op_catalog() -> Vec<OpCase> {
    let strided = Conv2dOptions {
        stride: 2,
        padding: 0,
        groups: 1,
    };
    let mut cases = vec![
        OpCase::new("conv2d", &[&[1, 3, 5, 5], &[4, 3, 3, 3], &[4]], &[1, 4, 5, 5], |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), Conv2dOptions::same(3))
        }),
        OpCase::new("conv2d_strided", &[&[2, 2, 7, 6], &[3, 2, 3, 2]], &[2, 3, 3, 3], move |g, v| {
            g.conv2d(v[0], v[1], None, strided)
        }),
        OpCase::new(
            "conv2d_depthwise_pointwise",
            &[&[1, 4, 5, 5], &[4, 1, 3, 3], &[4], &[2, 4, 1, 1]],
            &[1, 2, 5, 5],
            |g, v| {
                let d = g.conv2d(v[0], v[1], Some(v[2]), Conv2dOptions::depthwise(4, 3))?;
                g.conv2d(d, v[3], None, Conv2dOptions::default())
            },
        ),
        OpCase::new("layer_norm_channels", &[&[2, 4, 3, 3], &[4], &[4]], &[2, 4, 3, 3], |g, v| {
            g.layer_norm_channels(v[0], v[1], v[2], 1e-6)
        }),
        OpCase::new("simple_gate", &[&[2, 4, 3, 3]], &[2, 2, 3, 3], |g, v| g.simple_gate(v[0])),
        OpCase::new("global_avg_pool", &[&[2, 3, 4, 5]], &[2, 3, 1, 1], |g, v| g.global_avg_pool(v[0])),
        OpCase::new("pixel_shuffle_down", &[&[1, 2, 4, 4]], &[1, 8, 2, 2], |g, v| {
            g.pixel_shuffle(v[0], 2, ShuffleDirection::Down)
        }),
        OpCase::new("pixel_shuffle_up", &[&[1, 8, 2, 3]], &[1, 2, 4, 6], |g, v| {
            g.pixel_shuffle(v[0], 2, ShuffleDirection::Up)
        }),
        OpCase::new("matmul", &[&[2, 3, 4], &[4, 5]], &[2, 3, 5], |g, v| g.matmul(v[0], v[1])),
        OpCase::new("matmul_broadcast", &[&[2, 1, 3, 4], &[1, 3, 4, 2]], &[2, 3, 3, 2], |g, v| {
            g.matmul(v[0], v[1])
        }),
        OpCase::new("add", &[&[2, 3, 4], &[3, 1]], &[2, 3, 4], |g, v| g.add(v[0], v[1])),
        OpCase::new("sub", &[&[2, 1, 4], &[2, 3, 4]], &[2, 3, 4], |g, v| g.sub(v[0], v[1])),
        OpCase::new("mul", &[&[1, 3, 2, 2], &[1, 3, 1, 1]], &[1, 3, 2, 2], |g, v| g.mul(v[0], v[1])),
        OpCase::new("scale_add_scalar", &[&[2, 3]], &[2, 3], |g, v| {
            let s = g.scale(v[0], 1.7);
            Ok(g.add_scalar(s, -0.3))
        }),
        OpCase::new("transpose_last2", &[&[2, 3, 4]], &[2, 4, 3], |g, v| g.transpose_last2(v[0])),
        OpCase::new("narrow", &[&[2, 6, 2]], &[2, 3, 2], |g, v| g.narrow(v[0], 1, 2, 3)),
        OpCase::new("reshape", &[&[2, 6]], &[3, 4], |g, v| g.reshape(v[0], &[3, 4])),
        OpCase::new("sum", &[&[2, 3, 4]], &[2, 1, 4], |g, v| g.sum(v[0], &[1])),
        OpCase::new("mean", &[&[2, 3, 4]], &[1, 3, 1], |g, v| g.mean(v[0], &[0, 2])),
        OpCase::new("sum_all", &[&[2, 3]], &[], |g, v| Ok(g.sum_all(v[0]))),
        OpCase::new("mean_all", &[&[2, 3]], &[], |g, v| Ok(g.mean_all(v[0]))),
        OpCase::new("l2_normalize_last", &[&[3, 5]], &[3, 5], |g, v| Ok(g.l2_normalize_last(v[0], 1e-12))),
        OpCase::new("mse", &[&[2, 3, 2, 2], &[2, 3, 2, 2]], &[], |g, v| g.mse(v[0], v[1])),
        OpCase::new("squared_error_weighted", &[&[2, 3, 2, 2], &[2, 3, 2, 2]], &[], |g, v| {
            let w = Tensor::from_fn(&[2, 1, 2, 2], |i| 0.1 + 0.1 * i as f64);
            g.squared_error(v[0], v[1], Some(w))
        }),
    ];
    for (name, kind) in [
        ("relu", Activation::Relu),
        ("gelu", Activation::Gelu),
        ("sigmoid", Activation::Sigmoid),
    ] {
        cases.push(OpCase::new(name, &[&[2, 3, 4]], &[2, 3, 4], move |g, v| {
            Ok(g.activation(kind, v[0]))
        }));
    }
    for (name, axis) in [("softmax_axis0", 0), ("softmax_axis1", 1), ("softmax_axis2", 2)] {
        cases.push(OpCase::new(name, &[&[2, 3, 4]], &[2, 3, 4], move |g, v| g.softmax(v[0], axis)));
    }
    cases
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let x = Tensor::<f64>::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap();
        let g = finite_difference_gradient(|t| t.data().iter().map(|v| v * v).sum(), &x, DEFAULT_STEP);
        let exact = x.map(|v| 2.0 * v);
        assert!(relative_error(&g, &exact) < 1e-8);
    }

    #[test]
    fn relative_error_of_zero_vectors_is_zero() {
        let z = Tensor::<f64>::zeros(&[4]);
        assert_eq!(relative_error(&z, &z), 0.0);
    }
}
