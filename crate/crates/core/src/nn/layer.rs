//! Dense feed-forward stacks with cached forward passes and analytic
//! backprop. Gradients accumulate into the owning [`ParamStore`] so branch
//! networks and batches can share one buffer.

use rand::Rng;

use super::store::{GradBuffer, ParamId, ParamStore, Tensor};
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Pointwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Softplus,
}

impl Activation {
    pub fn apply<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Relu => {
                if z > S::zero() {
                    z
                } else {
                    S::zero()
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => super::special::sigmoid(z),
            Activation::Softplus => super::special::softplus(z),
        }
    }

    /// Derivative given the pre-activation z and the output y = apply(z).
    pub fn derivative<S: Scalar>(self, z: S, y: S) -> S {
        match self {
            Activation::Relu => {
                if z > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Tanh => S::one() - y * y,
            Activation::Sigmoid => y * (S::one() - y),
            Activation::Softplus => super::special::sigmoid(z),
        }
    }
}

/// Declarative layer description; a stack of these builds an [`Mlp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense { input: usize, output: usize },
    Activation(Activation),
}

#[derive(Debug, Clone)]
enum Layer {
    Dense {
        w: ParamId,
        b: ParamId,
        input: usize,
        output: usize,
    },
    Activation(Activation),
}

/// Feed-forward stack over parameters owned by a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Mlp<S> {
    layers: Vec<Layer>,
    input_dim: usize,
    output_dim: usize,
    _marker: std::marker::PhantomData<S>,
}

/// Per-sample forward cache; `xs[i]` is the input to layer i and the final
/// entry is the stack output.
#[derive(Debug, Clone, Default)]
pub struct MlpCache<S> {
    xs: Vec<Vec<S>>,
}

impl<S: Scalar> Mlp<S> {
    /// Builds the stack, registering weights as `{prefix}.{i}.w` / `.b`.
    ///
    /// Dimension chaining is validated here so a malformed spec is a
    /// configuration error at build time rather than a panic mid-training.
    /// Weights draw from uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out));
    /// biases start at zero.
    pub fn new(
        store: &mut ParamStore<S>,
        prefix: &str,
        specs: &[LayerSpec],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidInput(format!("mlp `{prefix}` has no layers")));
        }
        let input_dim = match specs[0] {
            LayerSpec::Dense { input, .. } => input,
            LayerSpec::Activation(_) => {
                return Err(Error::InvalidInput(format!(
                    "mlp `{prefix}` must start with a dense layer"
                )))
            }
        };
        let mut dim = input_dim;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            match *spec {
                LayerSpec::Dense { input, output } => {
                    if input != dim {
                        return Err(Error::Dimension {
                            what: format!("mlp `{prefix}` layer {i} input"),
                            expected: dim,
                            got: input,
                        });
                    }
                    if input == 0 || output == 0 {
                        return Err(Error::InvalidInput(format!(
                            "mlp `{prefix}` layer {i} has a zero dimension"
                        )));
                    }
                    let a = (6.0 / (input + output) as f64).sqrt();
                    let mut w = Tensor::zeros(output, input);
                    for v in &mut w.data {
                        *v = S::c(rng.gen_range(-a..a));
                    }
                    let w = store.register(&format!("{prefix}.{i}.w"), w)?;
                    let b = store.register(&format!("{prefix}.{i}.b"), Tensor::zeros(1, output))?;
                    layers.push(Layer::Dense {
                        w,
                        b,
                        input,
                        output,
                    });
                    dim = output;
                }
                LayerSpec::Activation(act) => layers.push(Layer::Activation(act)),
            }
        }
        Ok(Mlp {
            layers,
            input_dim,
            output_dim: dim,
            _marker: std::marker::PhantomData,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Forward pass; returns the output slice kept alive by `cache`.
    pub fn forward<'c>(
        &self,
        store: &ParamStore<S>,
        x: &[S],
        cache: &'c mut MlpCache<S>,
    ) -> &'c [S] {
        debug_assert_eq!(x.len(), self.input_dim, "mlp input width");
        cache.xs.clear();
        cache.xs.push(x.to_vec());
        for layer in &self.layers {
            let x = cache.xs.last().unwrap();
            let y = match layer {
                Layer::Dense { w, b, output, .. } => {
                    let w = store.value(*w);
                    let b = store.value(*b);
                    let mut y = Vec::with_capacity(*output);
                    for j in 0..*output {
                        let row = w.row(j);
                        let mut acc = b.data[j];
                        for (wk, xk) in row.iter().zip(x.iter()) {
                            acc += *wk * *xk;
                        }
                        y.push(acc);
                    }
                    y
                }
                Layer::Activation(act) => x.iter().map(|&z| act.apply(z)).collect(),
            };
            cache.xs.push(y);
        }
        cache.xs.last().unwrap()
    }

    /// Backprop for the cached pass. Accumulates parameter gradients into
    /// `grads` and returns the gradient with respect to the stack input.
    pub fn backward(
        &self,
        store: &ParamStore<S>,
        cache: &MlpCache<S>,
        grad_out: &[S],
        grads: &mut GradBuffer<S>,
    ) -> Vec<S> {
        debug_assert_eq!(cache.xs.len(), self.layers.len() + 1, "cache/forward mismatch");
        debug_assert_eq!(grad_out.len(), self.output_dim, "mlp output grad width");
        let mut d = grad_out.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.xs[i];
            match layer {
                Layer::Dense { w, b, input, output } => {
                    {
                        let gb = grads.grad_mut(*b);
                        for j in 0..*output {
                            gb[j] += d[j];
                        }
                    }
                    let mut dx = vec![S::zero(); *input];
                    let wv = store.value(*w);
                    let gw = grads.grad_mut(*w);
                    for j in 0..*output {
                        let dj = d[j];
                        let row = wv.row(j);
                        let grow = &mut gw[j * input..(j + 1) * input];
                        for k in 0..*input {
                            grow[k] += dj * x[k];
                            dx[k] += dj * row[k];
                        }
                    }
                    d = dx;
                }
                Layer::Activation(act) => {
                    let y = &cache.xs[i + 1];
                    for k in 0..d.len() {
                        d[k] *= act.derivative(x[k], y[k]);
                    }
                }
            }
        }
        d
    }
}
