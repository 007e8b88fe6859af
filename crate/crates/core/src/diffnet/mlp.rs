use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{sigmoid, Tape, Var};
use super::tensor::{matmul, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Linear => x,
        }
    }

    pub fn on_tape(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Linear => x,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Linear => "linear",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            "sigmoid" => Activation::Sigmoid,
            "linear" => Activation::Linear,
            _ => return None,
        })
    }
}

/// One affine layer; `weight` is `[in, out]`, `bias` is `[1, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Dense {
    /// Glorot-normal weights, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let w = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
        Self {
            weight: Tensor::matrix(fan_in, fan_out, w),
            bias: Tensor::zeros(&[1, fan_out]),
            activation,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }
}

/// Multi-layer perceptron parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

/// Parameter handles of an [`MlpParams`] placed on a tape.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    pub layers: Vec<(Var, Var, Activation)>,
}

impl MlpParams {
    /// `widths = [in, h1, ..., out]`; hidden layers use `hidden`, the last
    /// layer uses `output`.
    pub fn new(widths: &[usize], hidden: Activation, output: Activation, rng: &mut impl Rng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::init(w[0], w[1], if i == last { output } else { hidden }, rng))
            .collect();
        Self { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(Dense::fan_out).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::shape(
                    format!("mlp layer {}", i + 1),
                    &[pair[0].fan_out()],
                    &[pair[1].fan_in()],
                ));
            }
        }
        Ok(())
    }

    /// Batched forward pass on `[rows, in]` without recording a tape.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut rows = input.rows();
        let mut x = input.data().to_vec();
        let mut width = input.cols();
        if input.shape().len() == 1 {
            rows = 1;
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if width != layer.fan_in() {
                return Err(Error::shape(format!("mlp layer {i}"), &[layer.fan_in()], &[width]));
            }
            let out = layer.fan_out();
            let mut y = matmul(&x, layer.weight.data(), rows, width, out);
            for row in y.chunks_mut(out) {
                for (v, b) in row.iter_mut().zip(layer.bias.data()) {
                    *v = layer.activation.apply(*v + b);
                }
            }
            x = y;
            width = out;
        }
        Ok(Tensor::matrix(rows, width, x))
    }

    /// Single-vector convenience wrapper around [`MlpParams::forward`].
    pub fn forward_vec(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(&Tensor::row(input))?.into_data())
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        BoundMlp {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone()), l.activation))
                .collect(),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    pub fn activation_names(&self) -> String {
        self.layers.iter().map(|l| l.activation.name()).collect::<Vec<_>>().join(",")
    }
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        for &(w, b, act) in &self.layers {
            let z = tape.matmul(h, w);
            let z = tape.add_bias(z, b);
            h = act.on_tape(tape, z);
        }
        h
    }

    /// Forward pass plus the directional derivative `J(x) * dir` of the
    /// network output, both recorded on the tape so that the result can
    /// itself be differentiated. Only smooth activations are supported.
    pub fn forward_with_tangent(&self, tape: &mut Tape, x: Var, dir: Var) -> (Var, Var) {
        let mut h = x;
        let mut t = dir;
        for &(w, b, act) in &self.layers {
            let z = tape.matmul(h, w);
            let z = tape.add_bias(z, b);
            let tz = tape.matmul(t, w);
            match act {
                Activation::Linear => {
                    h = z;
                    t = tz;
                }
                Activation::Tanh => {
                    h = tape.tanh(z);
                    let sq = tape.square(h);
                    let neg = tape.scale(sq, -1.0);
                    let deriv = tape.offset(neg, 1.0);
                    t = tape.mul(tz, deriv);
                }
                Activation::Sigmoid => {
                    h = tape.sigmoid(z);
                    let sq = tape.square(h);
                    let deriv = tape.sub(h, sq);
                    t = tape.mul(tz, deriv);
                }
                Activation::Relu => panic!("tangent propagation needs a smooth activation"),
            }
        }
        (h, t)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b, _)| [w, b]).collect()
    }
}
