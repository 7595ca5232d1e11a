use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Result, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    fn apply<'t>(self, x: Var<'t>) -> Result<Var<'t>> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.relu(),
        }
    }
}

/// `x · W + b` with `W: in×out`, `b: 1×out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
    /// Apply the activation after the last layer too (encoders do, heads don't).
    pub activate_output: bool,
}

impl Mlp {
    /// `widths = [in, h1, ..., out]`, weights uniform in `±1/sqrt(fan_in)`.
    pub fn init(widths: &[usize], activation: Activation, activate_output: bool, rng: &mut impl Rng) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
                Linear {
                    weight: Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out)).expect("positive widths"),
                    bias: Tensor::matrix(1, fan_out, draw(fan_out)).expect("positive widths"),
                }
            })
            .collect();
        Self {
            layers,
            activation,
            activate_output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").weight.cols()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundMlp<'t> {
        BoundMlp {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
                .collect(),
            activation: self.activation,
            activate_output: self.activate_output,
        }
    }
}

pub struct BoundMlp<'t> {
    pub layers: Vec<(Var<'t>, Var<'t>)>,
    activation: Activation,
    activate_output: bool,
}

impl<'t> BoundMlp<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            h = h.matmul(*w)?.add(*b)?;
            if i < last || self.activate_output {
                h = self.activation.apply(h)?;
            }
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<Var<'t>> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut mlp = Mlp::init(&[3, 4, 2], Activation::Tanh, true, &mut rng);
        for p in mlp.params_mut() {
            p.data_mut().fill(0.0);
        }
        let tape = Tape::new();
        let out = mlp.bind(&tape).forward(tape.constant(Tensor::full(5, 3, 1.7))).unwrap();
        assert_eq!(*out.value(), Tensor::zeros(5, 2));
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mlp = Mlp::init(&[16, 8], Activation::Relu, false, &mut rng);
        assert!(mlp.params().iter().all(|p| p.data().iter().all(|x| x.abs() <= 0.25)));
    }
}
