//! Fully connected feed-forward networks with manual backpropagation and Adam.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Softplus,
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
            Activation::Relu => "relu",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "tanh" => Some(Activation::Tanh),
            "softplus" => Some(Activation::Softplus),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Softplus => 1,
            Activation::Relu => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Softplus),
            2 => Some(Activation::Relu),
            _ => None,
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Softplus => {
                if z > 30.0 {
                    z
                } else {
                    z.exp().ln_1p()
                }
            }
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative in terms of the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Softplus => 1.0 / (1.0 + (-z).exp()),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `inputs × outputs`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Per-layer activations kept for the backward pass.
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(sizes: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weights: Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-limit..limit)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self { layers, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.ncols()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights);
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(|v| self.activation.apply(v));
            }
            a = z;
        }
        a
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> ForwardCache {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut a = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights);
            z += &layer.bias;
            inputs.push(a);
            if i < last {
                let act = z.mapv(|v| self.activation.apply(v));
                pre.push(z);
                a = act;
            } else {
                a = z;
            }
        }
        ForwardCache {
            inputs,
            pre,
            output: a,
        }
    }

    /// Gradients of the loss with respect to weights and biases, given the
    /// gradient at the output.
    pub fn backward(&self, cache: &ForwardCache, grad_output: Array2<f64>) -> Vec<Layer> {
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        let mut delta = grad_output;
        for i in (0..self.layers.len()).rev() {
            let input = &cache.inputs[i];
            grads.push(Layer {
                weights: input.t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            });
            if i > 0 {
                let mut back = delta.dot(&self.layers[i].weights.t());
                let act = self.activation;
                Zip::from(&mut back)
                    .and(&cache.pre[i - 1])
                    .and(input)
                    .for_each(|g, &z, &a| *g *= act.derivative(z, a));
                delta = back;
            }
        }
        grads.reverse();
        grads
    }
}

/// Adam with the usual bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Layer>,
    v: Vec<Layer>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        let zeros = || {
            net.layers
                .iter()
                .map(|l| Layer {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect::<Vec<_>>()
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, net: &mut Mlp, grads: &[Layer]) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let (lr, eps) = (self.lr, self.eps);
        let apply = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((layer, m), v), g) in net.layers.iter_mut().zip(&mut self.m).zip(&mut self.v).zip(grads) {
            Zip::from(&mut layer.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .and(&g.weights)
                .for_each(|p, m, v, &g| apply(p, m, v, g));
            Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(|p, m, v, &g| apply(p, m, v, g));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(net: &Mlp, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        let d = net.forward(x.view()) - y;
        d.mapv(|v| v * v).sum() * 0.5
    }

    #[test]
    fn gradients_match_finite_differences() {
        for act in [Activation::Tanh, Activation::Softplus] {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let net = Mlp::new(&[3, 5, 4, 2], act, &mut rng);
            let x = array![[0.3, -0.2, 0.9], [-1.1, 0.4, 0.05]];
            let y = array![[0.5, -0.5], [1.0, 0.2]];
            let cache = net.forward_cached(x.view());
            let grads = net.backward(&cache, &cache.output - &y);
            let h = 1e-6;
            for (li, g) in grads.iter().enumerate() {
                for ((r, c), &gv) in g.weights.indexed_iter() {
                    let mut plus = net.clone();
                    plus.layers[li].weights[[r, c]] += h;
                    let mut minus = net.clone();
                    minus.layers[li].weights[[r, c]] -= h;
                    let fd = (loss(&plus, &x, &y) - loss(&minus, &x, &y)) / (2.0 * h);
                    assert!((fd - gv).abs() < 1e-6, "{act:?} layer {li} ({r},{c}): {fd} vs {gv}");
                }
                for (c, &gv) in g.bias.indexed_iter() {
                    let mut plus = net.clone();
                    plus.layers[li].bias[c] += h;
                    let mut minus = net.clone();
                    minus.layers[li].bias[c] -= h;
                    let fd = (loss(&plus, &x, &y) - loss(&minus, &x, &y)) / (2.0 * h);
                    assert!((fd - gv).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn cached_forward_matches_plain_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[2, 8, 8, 3], Activation::Tanh, &mut rng);
        let x = array![[0.1, 0.2], [0.3, -0.4], [2.0, 1.0]];
        assert_eq!(net.forward(x.view()), net.forward_cached(x.view()).output);
    }

    #[test]
    fn adam_fits_a_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Mlp::new(&[1, 16, 1], Activation::Tanh, &mut rng);
        let x = Array2::from_shape_fn((32, 1), |(i, _)| i as f64 / 16.0 - 1.0);
        let y = x.mapv(|v| 0.5 * v + 0.1);
        let mut opt = Adam::new(&net, 1e-2);
        let start = loss(&net, &x, &y);
        for _ in 0..500 {
            let cache = net.forward_cached(x.view());
            let grads = net.backward(&cache, &cache.output - &y);
            opt.update(&mut net, &grads);
        }
        assert!(loss(&net, &x, &y) < 1e-3 * start.max(1.0));
    }
}
