use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Fully connected layer acting on row vectors: `y = x W + b`, with `W`
/// stored as `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let [_, out] = *weight.shape() else {
            return Err(Error::shape(format!(
                "layer weight must be [in, out], got {:?}",
                weight.shape()
            )));
        };
        if bias.shape() != [out] {
            return Err(Error::shape(format!(
                "bias {:?} does not match weight {:?}",
                bias.shape(),
                weight.shape()
            )));
        }
        Ok(Linear { weight, bias })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Multilayer perceptron: ReLU between layers, linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Linear>,
}

/// Graph handles for one [`Mlp`]'s parameters, in layer order.
#[derive(Clone, Debug)]
pub struct MlpVars {
    pub layers: Vec<(Var, Var)>,
}

impl MlpVars {
    /// Weight and bias handles flattened as `[w0, b0, w1, b1, ...]`.
    pub fn flat(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

impl Mlp {
    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("an MLP needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(format!(
                    "layer dims do not chain: {} -> {}",
                    pair[0].output_dim(),
                    pair[1].input_dim()
                )));
            }
        }
        Ok(Mlp { layers })
    }

    /// All-zero weights and biases.
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output size");
        let layers = sizes
            .windows(2)
            .map(|w| Linear {
                weight: Tensor::zeros(&[w[0], w[1]]),
                bias: Tensor::zeros(&[w[1]]),
            })
            .collect();
        Mlp { layers }
    }

    /// Glorot-uniform weights in `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`,
    /// zero biases.
    pub fn glorot<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output size");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-a..=a))
                    .collect();
                Linear {
                    weight: Tensor::new(vec![fan_in, fan_out], data).expect("sized above"),
                    bias: Tensor::zeros(&[fan_out]),
                }
            })
            .collect();
        Mlp { layers }
    }

    /// Zeroes the weights and bias of the final layer.
    pub fn with_zero_output(mut self) -> Self {
        let last = self.layers.last_mut().expect("at least one layer");
        last.weight.data_mut().fill(0.0);
        last.bias.data_mut().fill(0.0);
        self
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    /// `[in, hidden..., out]`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].input_dim()];
        s.extend(self.layers.iter().map(Linear::output_dim));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Parameter tensors as `[w0, b0, w1, b1, ...]`.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Plain forward pass of one input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "MLP expects input of length {}, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let last = self.layers.len() - 1;
        let mut x = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let n = layer.output_dim();
            let w = layer.weight.data();
            let mut y = layer.bias.data().to_vec();
            for (p, &xv) in x.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for (o, &wv) in y.iter_mut().zip(&w[p * n..(p + 1) * n]) {
                    *o += xv * wv;
                }
            }
            if i != last {
                for v in &mut y {
                    *v = v.max(0.0);
                }
            }
            x = y;
        }
        Ok(x)
    }

    /// Records this network's parameters as graph leaves.
    pub fn bind(&self, g: &mut Graph) -> MlpVars {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| (g.param(l.weight.clone()), g.param(l.bias.clone())))
                .collect(),
        }
    }

    /// Differentiable forward pass of a batch `x [batch, in]`.
    pub fn forward_graph(vars: &MlpVars, g: &mut Graph, x: Var) -> Result<Var> {
        let last = vars.layers.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in vars.layers.iter().enumerate() {
            let z = g.matmul(h, w)?;
            h = g.add_row(z, b)?;
            if i != last {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[5, 7, 3]);
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn identity_single_layer() {
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let net = Mlp::from_layers(vec![Linear::new(w, Tensor::zeros(&[3])).unwrap()]).unwrap();
        let v = [0.25, -4.0, 7.5];
        assert_eq!(net.forward(&v).unwrap(), v.to_vec());
    }

    #[test]
    fn stitching_sizes_accept_126_emit_65() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::glorot(&[126, 128, 128, 64, 65], &mut rng);
        assert_eq!(net.forward(&vec![0.1; 126]).unwrap().len(), 65);
        assert!(matches!(net.forward(&[0.0; 125]), Err(Error::Shape(_))));
    }

    #[test]
    fn dims_must_chain() {
        let l1 = Linear::new(Tensor::zeros(&[2, 3]), Tensor::zeros(&[3])).unwrap();
        let l2 = Linear::new(Tensor::zeros(&[4, 1]), Tensor::zeros(&[1])).unwrap();
        assert!(matches!(Mlp::from_layers(vec![l1, l2]), Err(Error::Shape(_))));
    }

    #[test]
    fn graph_forward_matches_plain_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Mlp::glorot(&[6, 9, 4, 2], &mut rng);
        let xs = [[0.3, -0.2, 0.9, 1.1, -0.7, 0.05], [1.0, 1.0, -1.0, 0.0, 0.2, 0.4]];
        let mut g = Graph::new();
        let vars = net.bind(&mut g);
        let flat: Vec<f64> = xs.iter().flatten().copied().collect();
        let x = g.constant(Tensor::new(vec![2, 6], flat).unwrap());
        let y = Mlp::forward_graph(&vars, &mut g, x).unwrap();
        for (i, row) in xs.iter().enumerate() {
            let plain = net.forward(row).unwrap();
            let got = &g.value(y).data()[i * 2..i * 2 + 2];
            for (a, b) in plain.iter().zip(got) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::glorot(&[10, 20], &mut rng);
        let a = (6.0f64 / 30.0).sqrt();
        assert!(net.layers()[0].weight.max_abs() <= a);
        assert_eq!(net.layers()[0].bias.max_abs(), 0.0);
    }
}
